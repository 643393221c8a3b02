use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use capsule_pose::data::{
    augment_dataset, generate_synthetic_dataset, load_dataset, render_view, save_dataset,
    split_dataset, trajectory_poses, AugmentationSpec, Dataset, TrajectoryKind,
};
use capsule_pose::eval::{
    export_comparison_svg, export_trajectory, loss_curve_svg, per_axis_errors, predict_trajectory,
    trajectory_csv, trajectory_rmse, trajectory_rmse_aligned, trajectory_svg, ExportFormat,
    Trajectory,
};
use capsule_pose::gradcheck::{run_suite, EPSILON};
use capsule_pose::latency::measure_forward_latency;
use capsule_pose::posenet::NetworkSpec;
use capsule_pose::threads::with_threads;
use capsule_pose::train::{
    checkpoint, resume, transfer_lr_schedule, BetaChoice, TrainConfig, Trainer,
};
use capsule_pose::{Error, PoseNet};

use crate::{
    Arch, BenchArgs, Command, EvalArgs, ExportArgs, Failure, Format, GradcheckArgs, Precision,
    Report, SynthArgs, TrainArgs,
};

type CmdResult = Result<(), Failure>;

pub(crate) fn dispatch(command: Command, out: &mut dyn Write) -> CmdResult {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Export(a) => export(a, out),
    }
}

/// Runs `f` on `threads` workers; a zero count is a usage error.
fn threaded<T: Send>(
    threads: usize,
    f: impl FnOnce() -> Result<T, Failure> + Send,
) -> Result<T, Failure> {
    if threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    with_threads(threads, f)?
}

fn parse_size(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("--size expects `N` or `HxW`, got `{text}`"));
    let (h, w) = match text.split_once(['x', 'X']) {
        Some((h, w)) => (
            h.trim().parse().map_err(|_| bad())?,
            w.trim().parse().map_err(|_| bad())?,
        ),
        None => {
            let n = text.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn network_spec(arch: Arch, shape: [usize; 3]) -> NetworkSpec {
    let mut spec = match arch {
        Arch::Desk => NetworkSpec::desk(),
        Arch::Reference => NetworkSpec::reference(),
    };
    spec.input_shape = shape;
    spec
}

/// Builds the network and loads every one of its parameters from `ckpt`.
fn load_network(arch: Arch, shape: [usize; 3], ckpt: &Path) -> Result<PoseNet, Failure> {
    let mut net = PoseNet::new(&network_spec(arch, shape))?;
    let report = net.load_weights(ckpt)?;
    if !report.untouched.is_empty() {
        return Err(Failure::Runtime(Error::InvalidArgument(format!(
            "{} lacks {} parameters of the {arch:?} network, starting with `{}`",
            ckpt.display(),
            report.untouched.len(),
            report.untouched[0]
        ))));
    }
    Ok(net)
}

fn dataset_shape(ds: &Dataset, path: &Path) -> Result<[usize; 3], Failure> {
    ds.image_shape().ok_or_else(|| {
        Failure::Runtime(Error::InvalidArgument(format!(
            "dataset {} has no frames",
            path.display()
        )))
    })
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> CmdResult {
    let size = parse_size(&a.size)?;
    if a.frames < 2 {
        return Err(Failure::Usage(format!(
            "--frames must be at least 2, got {}",
            a.frames
        )));
    }
    let kind = match a.trajectory {
        crate::Trajectory::SmoothLoop => TrajectoryKind::SmoothLoop,
        crate::Trajectory::FastRotation => TrajectoryKind::FastRotation,
        crate::Trajectory::LargeTranslation => TrajectoryKind::LargeTranslation,
    };
    let ds = threaded(a.threads, || {
        let ds = generate_synthetic_dataset(a.seed, a.frames, size, kind)?;
        if a.augment == 0 {
            return Ok(ds);
        }
        Ok(augment_dataset(
            &ds,
            &AugmentationSpec::default().with_seed(a.seed),
            a.augment,
        )?)
    })?;
    save_dataset(&ds, &a.out)?;
    writeln!(
        out,
        "wrote {} frames ({}x{}, {kind}) to {}",
        ds.len(),
        size.0,
        size.1,
        a.out.display()
    )?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CmdResult {
    let beta: BetaChoice = a
        .beta
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let ds = load_dataset(&a.data)?;
    let (train_ds, val_ds) =
        split_dataset(&ds, a.split).map_err(|e| Failure::Usage(e.to_string()))?;
    let spec = network_spec(a.arch, dataset_shape(&ds, &a.data)?).with_seed(a.seed);
    let mut config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        base_lr: a.lr,
        lr_decay: a.lr_decay,
        beta,
        lr_schedule: Vec::new(),
        early_stop_patience: (a.patience > 0).then_some(a.patience),
        seed: a.seed,
        log_path: Some(a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log"))),
        ..Default::default()
    };
    if a.pretrained.is_some() {
        config.lr_schedule = transfer_lr_schedule(&spec);
    }
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let state_path = a
        .state
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".state"));

    if a.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    {
        let (mut net, mut trainer) = match &a.resume {
            Some(path) => {
                let (mut net, state) = resume(path, &spec)?;
                let trainer = Trainer::from_state(config, &mut net, state)?;
                (net, trainer)
            }
            None => {
                let mut net = PoseNet::new(&spec)?;
                if let Some(path) = &a.pretrained {
                    let report = net.load_weights(path)?;
                    writeln!(
                        out,
                        "pretrained: loaded {} tensors, {} left at initialization, {} ignored",
                        report.loaded.len(),
                        report.untouched.len(),
                        report.ignored.len()
                    )?;
                }
                let trainer = Trainer::new(config, &mut net, &train_ds)?;
                (net, trainer)
            }
        };
        writeln!(
            out,
            "training on {} frames, validating on {} (beta {})",
            train_ds.len(),
            val_ds.len(),
            trainer.state().beta
        )?;
        while !trainer.is_done() {
            threaded(a.threads, || {
                Ok(trainer.run_epochs(&mut net, &train_ds, &val_ds, 1)?)
            })?;
            checkpoint(&net, trainer.state(), &state_path)?;
            if let Some(r) = trainer.state().curve.last() {
                writeln!(
                    out,
                    "epoch {:>3}  train {:.4} (t {:.4}, r {:.4})  val {:.4} (t {:.4}, r {:.4})  lr {:.3e}",
                    r.epoch,
                    r.train_loss(),
                    r.train_translation,
                    r.train_rotation,
                    r.val_loss(),
                    r.val_translation,
                    r.val_rotation,
                    r.learning_rate
                )?;
            }
        }
        trainer.restore_best(&mut net)?;
        net.save_weights(&a.out)?;
        let state = trainer.state();
        if state.stopped_early {
            writeln!(out, "stopped early after epoch {}", state.epochs_done)?;
        }
        match &state.best {
            Some(best) => writeln!(
                out,
                "saved weights of epoch {} (val loss {:.4}) to {}",
                best.epoch,
                best.val_loss,
                a.out.display()
            )?,
            None => writeln!(
                out,
                "no epochs run; saved initial weights to {}",
                a.out.display()
            )?,
        }
        let curve_path = with_suffix(&a.out, ".curve.svg");
        fs::write(&curve_path, loss_curve_svg(&state.curve))?;
        Ok(())
    }
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    if a.report != Report::Text && a.out.is_none() {
        return Err(Failure::Usage(
            "--report csv and --report svg need --out".into(),
        ));
    }
    let mut ds = load_dataset(&a.data)?;
    if let Some(f) = a.split {
        ds = split_dataset(&ds, f)
            .map_err(|e| Failure::Usage(e.to_string()))?
            .1;
    }
    let net = load_network(a.arch, dataset_shape(&ds, &a.data)?, &a.ckpt)?;
    let gt = Trajectory::from_dataset(&ds)?;
    let pred = threaded(a.threads, || Ok(predict_trajectory(&net, &ds)?))?;
    let errors = per_axis_errors(&pred, &gt)?;
    let rmse = trajectory_rmse(&pred, &gt)?;

    writeln!(out, "frames              {}", gt.len())?;
    writeln!(out, "rmse_cm             {rmse:.6}")?;
    if a.align {
        writeln!(
            out,
            "rmse_aligned_cm     {:.6}",
            trajectory_rmse_aligned(&pred, &gt)?
        )?;
    }
    writeln!(out, "bbox_diagonal_cm    {:.6}", gt.bounding_box_diagonal())?;
    writeln!(
        out,
        "axis  mae           range         error_%       degenerate"
    )?;
    for (name, e) in errors.axes() {
        writeln!(
            out,
            "{name:<5} {:<13.6} {:<13.6} {:<13.4} {}",
            e.mae,
            e.range,
            e.percent,
            if e.degenerate { "yes" } else { "no" }
        )?;
    }
    let (t_avg, r_avg) = errors.averages();
    writeln!(
        out,
        "mean translation error {t_avg:.4}%, mean rotation error {r_avg:.4}%"
    )?;

    if let Some(path) = &a.out {
        match a.report {
            Report::Text => {}
            Report::Csv => fs::write(path, trajectory_csv(&pred))?,
            Report::Svg => export_comparison_svg(&gt, &pred, path)?,
        }
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    if a.precision == Precision::Single {
        return Err(Failure::Usage(
            "single precision is not available; tensors are computed in double precision".into(),
        ));
    }
    if a.instances == 0 {
        return Err(Failure::Usage("--instances must be at least 1".into()));
    }
    let reports = run_suite(a.instances, a.seed)?;
    writeln!(
        out,
        "operator          instances  max_rel_error  threshold  status  (eps {EPSILON:e})"
    )?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        writeln!(
            out,
            "{:<17} {:<10} {:<14.3e} {:<10.0e} {status}",
            r.operator.name(),
            r.instances,
            r.max_relative_error,
            r.operator.threshold()
        )?;
        if !r.passed() {
            failed.push(r.operator.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::InvalidArgument(format!(
            "gradient check failed for {}",
            failed.join(", ")
        ))))
    }
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> CmdResult {
    let (h, w) = parse_size(&a.size)?;
    if a.frames == 0 {
        return Err(Failure::Usage("--frames must be at least 1".into()));
    }
    if a.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    let shape = [3, h, w];
    let net = match &a.ckpt {
        Some(path) => load_network(a.arch, shape, path)?,
        None => PoseNet::new(&network_spec(a.arch, shape))?,
    };
    let images = trajectory_poses(0, 8, TrajectoryKind::SmoothLoop)?
        .iter()
        .map(|p| render_view(p, (h, w))?.to_tensor().reshape(&[1, 3, h, w]))
        .collect::<Result<Vec<_>, Error>>()?;
    let r = measure_forward_latency(&net, &images, a.frames, a.threads)?;
    writeln!(out, "input               {h}x{w}")?;
    writeln!(out, "frames              {}", r.frames)?;
    writeln!(out, "threads             {}", r.threads)?;
    writeln!(out, "mean_ms             {:.4}", 1e3 * r.mean)?;
    writeln!(out, "median_ms           {:.4}", 1e3 * r.median)?;
    writeln!(out, "min_ms              {:.4}", 1e3 * r.min)?;
    writeln!(out, "max_ms              {:.4}", 1e3 * r.max)?;
    writeln!(out, "cv                  {:.4}", r.coefficient_of_variation)?;
    Ok(())
}

fn export(a: ExportArgs, out: &mut dyn Write) -> CmdResult {
    let ds = load_dataset(&a.data)?;
    let gt = Trajectory::from_dataset(&ds)?;
    match &a.ckpt {
        Some(ckpt) => {
            let net = load_network(a.arch, dataset_shape(&ds, &a.data)?, ckpt)?;
            let pred = threaded(a.threads, || Ok(predict_trajectory(&net, &ds)?))?;
            match a.format {
                Format::Csv => export_trajectory(&pred, &a.traj, ExportFormat::Csv)?,
                Format::Svg => fs::write(
                    &a.traj,
                    trajectory_svg(&[("ground truth", &gt), ("prediction", &pred)]),
                )?,
            }
        }
        None => {
            let format = match a.format {
                Format::Csv => ExportFormat::Csv,
                Format::Svg => ExportFormat::SvgPlot,
            };
            export_trajectory(&gt, &a.traj, format)?;
        }
    }
    writeln!(out, "wrote {} poses to {}", gt.len(), a.traj.display())?;
    Ok(())
}
