//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use capsule_pose::data::{generate_synthetic_dataset, save_dataset, split_dataset, TrajectoryKind};
use capsule_pose::eval::{per_axis_errors, predict_trajectory, trajectory_rmse, Trajectory};
use capsule_pose::gradcheck::{run_suite, Operator, EPSILON, KINK_MARGIN};
use capsule_pose::graph::ComputeGraph;
use capsule_pose::latency::measure_forward_latency;
use capsule_pose::loss::{aggregate_weighted_loss, pose_loss};
use capsule_pose::posenet::{build_inception, ParamInit};
use capsule_pose::threads::with_threads;
use capsule_pose::train::{checkpoint, resume, LossCurve, TrainConfig, Trainer};
use capsule_pose::{
    AdamState, Gradients, InceptionSpec, NetworkSpec, Pose, PoseLossSpec, PoseNet, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let reports = run_suite(100, 0).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(EPSILON == 1e-5 && KINK_MARGIN >= 0.01, || {
        "finite-difference settings changed".into()
    })?;
    ensure(reports.len() == Operator::ALL.len(), || {
        "operator missing from suite".into()
    })?;
    let mut worst = Vec::new();
    for r in &reports {
        let limit = if r.operator.is_smooth() { 1e-6 } else { 1e-4 };
        ensure(r.instances >= 100, || {
            format!("{} ran {} instances", r.operator.name(), r.instances)
        })?;
        ensure(r.max_relative_error < limit, || {
            format!(
                "{} relative error {:.3e} >= {limit:e}",
                r.operator.name(),
                r.max_relative_error
            )
        })?;
        worst.push(format!(
            "{} {:.1e}",
            r.operator.name(),
            r.max_relative_error
        ));
    }
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} operators x 100 instances in {secs:.1} s; {}",
        reports.len(),
        worst.join(", ")
    ))
}

fn adam_oracle() -> Check {
    let one = |w: f64, g: f64| {
        (
            std::collections::BTreeMap::from([("w".to_string(), Tensor::from_vec(vec![w]))]),
            Gradients::from([("w".to_string(), Tensor::from_vec(vec![g]))]),
        )
    };
    let (mut p, g) = one(1.0, 0.5);
    let mut adam = AdamState::default();
    adam.step_named(&mut p, &g, &HashMap::new()).map_err(err)?;
    let (m, v, w) = (adam.m["w"][0], adam.v["w"][0], p["w"].data()[0]);
    ensure((m - 0.05).abs() < 1e-6, || format!("m = {m}"))?;
    ensure((v - 0.00025).abs() < 1e-6, || format!("v = {v}"))?;
    ensure((w - 0.9990).abs() < 1e-6, || format!("w' = {w}"))?;

    let alpha = adam.config.alpha;
    let mut prev = w;
    let mut largest: f64 = 0.0;
    for step in 2..=1000 {
        adam.step_named(&mut p, &g, &HashMap::new()).map_err(err)?;
        let now = p["w"].data()[0];
        let update = (now - prev).abs();
        ensure(update <= alpha * (1.0 + 1e-6), || {
            format!("step {step} moved {update:e}")
        })?;
        largest = largest.max(update);
        prev = now;
    }
    Ok(format!(
        "m={m}, v={v}, w'={w:.7}; largest later update {largest:.3e} <= {alpha}"
    ))
}

fn loss_contracts() -> Check {
    let spec = PoseLossSpec::new(250.0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p = Pose::from_raw(&[0.0; 7].map(|_| rng.random_range(-1.0..1.0)));
        ensure(pose_loss(&p, &p, &spec) == 0.0, || {
            "non-zero loss on an exact match".into()
        })?;
        let mut q = p;
        q.translation[rng.random_range(0..3)] += 1e-6;
        ensure(pose_loss(&q, &p, &spec) > 0.0, || {
            "zero loss on a mismatch".into()
        })?;
    }
    let unit = pose_loss(
        &Pose::new([1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
        &Pose::identity(),
        &spec,
    );
    ensure((unit - 1.0).abs() < 1e-12, || {
        format!("unit translation gave {unit}")
    })?;
    let pred = Pose {
        translation: [3.0, 4.0, 0.0],
        rotation: [1.0, 0.0, 0.0, 0.0],
    };
    let target = Pose {
        translation: [0.0; 3],
        rotation: [0.9, 0.0, 0.0, 0.0],
    };
    let mixed = pose_loss(&pred, &target, &spec);
    ensure((mixed - 30.0).abs() < 1e-12, || {
        format!("5 + 250 * 0.1 gave {mixed}")
    })?;

    let a = Tensor::from_vec(vec![1.5, -0.25, 2.0]);
    let b = Tensor::from_vec(vec![0.75, 4.0]);
    for _ in 0..100 {
        let (w1, w2, s) = (
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-3.0..3.0),
        );
        let base = aggregate_weighted_loss(&[(&a, w1), (&b, w2)]);
        let scaled = aggregate_weighted_loss(&[(&a, s * w1), (&b, s * w2)]);
        let parts = aggregate_weighted_loss(&[(&a, w1)]) + aggregate_weighted_loss(&[(&b, w2)]);
        ensure(
            (scaled - s * base).abs() < 1e-12 && (parts - base).abs() < 1e-12,
            || "weighted aggregation is not linear".into(),
        )?;
    }
    Ok(format!(
        "exact match 0, unit case {unit}, mixed case {mixed}, aggregation linear"
    ))
}

fn architecture_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let mut c = || rng.random_range(1..=16);
        let spec = InceptionSpec::new(c(), c(), c(), c(), c(), c());
        let (c_in, h, w) = (
            rng.random_range(1..=8),
            rng.random_range(1..=7),
            rng.random_range(1..=7),
        );
        let mut graph = ComputeGraph::new();
        let x = graph.input("x");
        let out = build_inception(
            &mut graph,
            &mut ParamInit::new(case),
            x,
            c_in,
            (h, w),
            &spec,
            "m",
        )
        .map_err(err)?;
        graph
            .set_input(x, Tensor::zeros(&[1, c_in, h, w]))
            .map_err(err)?;
        let channels = graph.forward_to(out).map_err(err)?.shape()[1];
        let sum = spec.c1x1 + spec.c3x3 + spec.c5x5 + spec.pool_proj;
        ensure(channels == sum, || {
            format!("{spec:?} gave {channels} channels, branches sum to {sum}")
        })?;
    }

    let reference = PoseNet::new(&NetworkSpec::reference()).map_err(err)?;
    let out = reference
        .forward_raw(&Tensor::zeros(&[1, 3, 224, 224]))
        .map_err(err)?;
    ensure(out.shape() == [1, 7], || {
        format!("reference output {:?}", out.shape())
    })?;

    let desk_spec = NetworkSpec::desk();
    ensure(desk_spec.input_shape == [3, 64, 64], || {
        "desk input is not 64x64".into()
    })?;
    let mut unit_checked = 0;
    for seed in 0..3 {
        let net = PoseNet::new(&desk_spec.clone().with_seed(seed)).map_err(err)?;
        let data = (0..8 * 3 * 64 * 64)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let images = Tensor::new(vec![8, 3, 64, 64], data).map_err(err)?;
        for pose in net.forward_pose(&images).map_err(err)? {
            let norm = pose.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            ensure(
                (norm - 1.0).abs() < 1e-12 && pose.rotation[0] >= 0.0,
                || format!("{pose:?}"),
            )?;
            unit_checked += 1;
        }
    }
    Ok(format!(
        "100 inception specs, reference 224x224 -> 7 ({} params), desk 64x64 -> 7, {unit_checked} unit quaternions",
        reference.parameter_count()
    ))
}

fn desk_scale_convergence() -> Check {
    let start = Instant::now();
    let ds = generate_synthetic_dataset(2024, 2000, (64, 64), TrajectoryKind::SmoothLoop)
        .map_err(err)?;
    let (train_ds, val_ds) = split_dataset(&ds, 0.7).map_err(err)?;
    ensure(train_ds.len() == 1400 && val_ds.len() == 600, || {
        "split is not 1400/600".into()
    })?;
    let config = TrainConfig {
        epochs: 30,
        batch_size: 64,
        base_lr: 0.001,
        early_stop_patience: None,
        seed: 2024,
        ..TrainConfig::default()
    };
    let mut net = PoseNet::new(&NetworkSpec::desk().with_seed(2024)).map_err(err)?;
    let mut trainer = Trainer::new(config, &mut net, &train_ds).map_err(err)?;
    ensure(trainer.state().beta == 250.0, || "beta is not 250".into())?;
    trainer
        .run_epochs(&mut net, &train_ds, &val_ds, usize::MAX)
        .map_err(err)?;
    let curve = &trainer.state().curve;
    ensure(curve.len() == 30, || format!("ran {} epochs", curve.len()))?;
    let first = curve.records[0].train_loss();
    let last = curve.records[29].train_loss();
    let ratio = last / first;

    // final epoch weights, no best-epoch selection
    let pred = predict_trajectory(&net, &val_ds).map_err(err)?;
    let gt = Trajectory::from_dataset(&val_ds).map_err(err)?;
    let rmse = trajectory_rmse(&pred, &gt).map_err(err)?;
    let diagonal = gt.bounding_box_diagonal();
    let fraction = rmse / diagonal;
    let secs = start.elapsed().as_secs_f64();
    let summary = format!(
        "train loss {first:.3} -> {last:.3} (ratio {ratio:.3} <= 0.1); val RMSE {rmse:.3} cm of diagonal {diagonal:.3} cm \
         ({:.1}% <= 10%); {secs:.0} s",
        100.0 * fraction
    );
    ensure(ratio <= 0.1 && fraction <= 0.1, || summary.clone())?;
    Ok(summary)
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(err)? {
        let entry = entry.map_err(err)?;
        files.push((
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path()).map_err(err)?,
        ));
    }
    files.sort();
    Ok(files)
}

fn curve_bits(curve: &LossCurve) -> Vec<u64> {
    curve
        .records
        .iter()
        .flat_map(|r| {
            [
                r.train_translation,
                r.train_rotation,
                r.val_translation,
                r.val_rotation,
            ]
            .map(f64::to_bits)
        })
        .collect()
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dataset = |name: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let ds = generate_synthetic_dataset(7, 100, (32, 32), TrajectoryKind::SmoothLoop)
            .map_err(err)?;
        let dir = tmp.path().join(name);
        save_dataset(&ds, &dir).map_err(err)?;
        dir_bytes(&dir)
    };
    ensure(dataset("a")? == dataset("b")?, || "datasets differ".into())?;

    let ds =
        generate_synthetic_dataset(21, 60, (32, 32), TrajectoryKind::SmoothLoop).map_err(err)?;
    let (train_ds, val_ds) = split_dataset(&ds, 0.7).map_err(err)?;
    let mut spec = NetworkSpec::desk().with_seed(5);
    spec.input_shape = [3, 32, 32];
    let config = TrainConfig {
        epochs: 10,
        batch_size: 8,
        early_stop_patience: None,
        seed: 5,
        ..TrainConfig::default()
    };
    let weights = |net: &PoseNet, name: &str| -> Result<Vec<u8>, String> {
        let path = tmp.path().join(name);
        net.save_weights(&path).map_err(err)?;
        fs::read(path).map_err(err)
    };
    let run = |epochs: usize| -> Result<(PoseNet, Trainer), String> {
        let mut net = PoseNet::new(&spec).map_err(err)?;
        let mut trainer = Trainer::new(config.clone(), &mut net, &train_ds).map_err(err)?;
        trainer
            .run_epochs(&mut net, &train_ds, &val_ds, epochs)
            .map_err(err)?;
        Ok((net, trainer))
    };
    let check = || -> Result<String, String> {
        let (net_a, trainer_a) = run(10)?;
        let (net_b, trainer_b) = run(10)?;
        ensure(
            curve_bits(&trainer_a.state().curve) == curve_bits(&trainer_b.state().curve),
            || "loss curves differ".into(),
        )?;
        let (wa, wb) = (weights(&net_a, "a.cpsp")?, weights(&net_b, "b.cpsp")?);
        ensure(wa == wb, || "checkpoints differ".into())?;

        let (half, trainer_half) = run(5)?;
        let state_path = tmp.path().join("half.state");
        checkpoint(&half, trainer_half.state(), &state_path).map_err(err)?;
        let (mut resumed, state) = resume(&state_path, &spec).map_err(err)?;
        let mut trainer = Trainer::from_state(config.clone(), &mut resumed, state).map_err(err)?;
        trainer
            .run_epochs(&mut resumed, &train_ds, &val_ds, usize::MAX)
            .map_err(err)?;
        ensure(trainer.state() == trainer_a.state(), || {
            "resumed training state differs".into()
        })?;
        ensure(weights(&resumed, "resumed.cpsp")? == wa, || {
            "resumed weights differ".into()
        })?;
        Ok(format!(
            "datasets, {}-epoch loss curves and {}-byte checkpoints bit-identical; 5+5 resume matches 10",
            trainer_a.state().curve.len(),
            wa.len()
        ))
    };
    with_threads(1, check).map_err(err)?
}

fn evaluator_oracles() -> Check {
    let traj = |pts: &[[f64; 3]]| {
        Trajectory::new(
            pts.iter()
                .enumerate()
                .map(|(i, t)| (i as u64, Pose::new(*t, [1.0, 0.0, 0.0, 0.0])))
                .collect(),
        )
        .map_err(err)
    };
    let gt = traj(&[[0.0, 1.0, 2.0], [10.0, 3.0, 2.0], [4.0, 2.0, 2.0]])?;
    let same = trajectory_rmse(&gt, &gt).map_err(err)?;
    ensure(same == 0.0, || {
        format!("identical trajectories gave {same}")
    })?;
    let offset = traj(&[[0.18, 1.0, 2.0], [10.18, 3.0, 2.0], [4.18, 2.0, 2.0]])?;
    let r = trajectory_rmse(&offset, &gt).map_err(err)?;
    ensure((r - 0.18).abs() < 1e-12, || {
        format!("constant offset gave {r}")
    })?;
    let zero = traj(&[[0.0; 3], [0.0; 3]])?;
    let residual = traj(&[[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])?;
    let r34 = trajectory_rmse(&residual, &zero).map_err(err)?;
    ensure((r34 - 12.5f64.sqrt()).abs() < 1e-12, || {
        format!("3/4 residuals gave {r34}")
    })?;

    let pred = traj(&[[0.5, 1.0, 2.0], [10.5, 3.0, 2.0], [4.5, 2.0, 2.0]])?;
    let e = per_axis_errors(&pred, &gt).map_err(err)?;
    ensure((e.tx.percent - 5.0).abs() < 1e-12, || {
        format!("tx error {}%", e.tx.percent)
    })?;
    ensure(e.tz.degenerate, || "zero-motion tz not flagged".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let pts = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
            (0..25)
                .map(|_| [0.0; 3].map(|_| rng.random_range(-4.0..4.0)))
                .collect()
        };
        let (a, b) = (pts(&mut rng), pts(&mut rng));
        let shift = [0.0; 3].map(|_| rng.random_range(-50.0..50.0));
        let moved = |v: &[[f64; 3]]| {
            v.iter()
                .map(|t| [0, 1, 2].map(|i| t[i] + shift[i]))
                .collect::<Vec<_>>()
        };
        let before = per_axis_errors(&traj(&a)?, &traj(&b)?).map_err(err)?;
        let after = per_axis_errors(&traj(&moved(&a))?, &traj(&moved(&b))?).map_err(err)?;
        for ((name, x), (_, y)) in before.axes().into_iter().zip(after.axes()) {
            ensure((x.percent - y.percent).abs() < 1e-9, || {
                format!("{name} changed under translation")
            })?;
        }
    }
    Ok(format!(
        "rmse 0 / 0.18 / {r34:.4}; tx 5%; tz flagged degenerate; translation invariant"
    ))
}

fn inference_benchmark() -> Check {
    let net = PoseNet::new(&NetworkSpec::desk()).map_err(err)?;
    let ds = generate_synthetic_dataset(0, 8, (64, 64), TrajectoryKind::SmoothLoop).map_err(err)?;
    let images = (0..ds.len())
        .map(|i| ds.batch(&[i]).map(|(x, _)| x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let r = measure_forward_latency(&net, &images, 100, 1).map_err(err)?;
    let summary = format!(
        "median {:.2} ms, mean {:.2} ms, cv {:.1}% over {} frames on {} thread",
        1e3 * r.median,
        1e3 * r.mean,
        100.0 * r.coefficient_of_variation,
        r.frames,
        r.threads
    );
    ensure(r.frames == 100 && r.threads == 1, || summary.clone())?;
    ensure(
        r.median < 0.050 && r.coefficient_of_variation < 0.20,
        || summary.clone(),
    )?;
    Ok(summary)
}

fn main() -> ExitCode {
    let checks: [(&str, CheckFn); 8] = [
        ("gradient correctness", gradient_correctness),
        ("adam oracle", adam_oracle),
        ("loss contracts", loss_contracts),
        ("architecture invariants", architecture_invariants),
        ("desk-scale convergence", desk_scale_convergence),
        ("determinism", determinism),
        ("evaluator oracles", evaluator_oracles),
        ("inference benchmark", inference_benchmark),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
