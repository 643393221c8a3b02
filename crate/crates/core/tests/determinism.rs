//! Identical seeds must give bit-identical data, curves and weights, and a
//! resumed run must match an uninterrupted one.

use std::fs;
use std::path::Path;

use capsule_pose::data::{
    augment_dataset, generate_synthetic_dataset, save_dataset, split_dataset, AugmentationSpec,
    Dataset, TrajectoryKind,
};
use capsule_pose::threads::with_threads;
use capsule_pose::train::{checkpoint, resume, train, LossCurve, TrainConfig, Trainer};
use capsule_pose::{NetworkSpec, PoseNet};

const SIZE: (usize, usize) = (32, 32);

fn tiny_spec(seed: u64) -> NetworkSpec {
    let mut spec = NetworkSpec::desk().with_seed(seed);
    spec.input_shape = [3, SIZE.0, SIZE.1];
    spec
}

fn tiny_data() -> (Dataset, Dataset) {
    let ds = generate_synthetic_dataset(21, 40, SIZE, TrajectoryKind::SmoothLoop).unwrap();
    split_dataset(&ds, 0.7).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        early_stop_patience: None,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
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
                r.learning_rate,
            ]
            .map(f64::to_bits)
        })
        .collect()
}

#[test]
fn datasets_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = AugmentationSpec::default().with_seed(9);
    for (i, kind) in [
        TrajectoryKind::SmoothLoop,
        TrajectoryKind::FastRotation,
        TrajectoryKind::LargeTranslation,
    ]
    .into_iter()
    .enumerate()
    {
        let make = || {
            let ds = generate_synthetic_dataset(17, 12, (24, 20), kind).unwrap();
            augment_dataset(&ds, &spec, 2).unwrap()
        };
        let (a, b) = (
            tmp.path().join(format!("a{i}")),
            tmp.path().join(format!("b{i}")),
        );
        save_dataset(&make(), &a).unwrap();
        // a different pool size must not change a single byte
        let other = with_threads(3, make).unwrap();
        save_dataset(&other, &b).unwrap();
        assert_eq!(dir_bytes(&a), dir_bytes(&b), "{kind}");
    }
}

#[test]
fn training_is_bit_identical() {
    let (train_ds, val_ds) = tiny_data();
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        with_threads(1, || {
            let mut net = PoseNet::new(&tiny_spec(3)).unwrap();
            let curve = train(&mut net, &train_ds, &val_ds, &config(3)).unwrap();
            let path = tmp.path().join(name);
            net.save_weights(&path).unwrap();
            (curve, fs::read(path).unwrap())
        })
        .unwrap()
    };
    let (curve_a, weights_a) = run("a.cpsp");
    let (curve_b, weights_b) = run("b.cpsp");
    assert_eq!(curve_a.len(), 3);
    assert_eq!(curve_bits(&curve_a), curve_bits(&curve_b));
    assert_eq!(weights_a, weights_b);

    let other_seed = with_threads(1, || {
        let mut net = PoseNet::new(&tiny_spec(4)).unwrap();
        train(&mut net, &train_ds, &val_ds, &config(3)).unwrap()
    })
    .unwrap();
    assert_ne!(curve_bits(&curve_a), curve_bits(&other_seed));
}

#[test]
fn resumed_training_is_bit_identical() {
    let (train_ds, val_ds) = tiny_data();
    let tmp = tempfile::tempdir().unwrap();
    with_threads(1, || {
        let spec = tiny_spec(8);

        let mut full = PoseNet::new(&spec).unwrap();
        let mut trainer = Trainer::new(config(10), &mut full, &train_ds).unwrap();
        trainer
            .run_epochs(&mut full, &train_ds, &val_ds, 10)
            .unwrap();
        let full_state = trainer.into_state();

        let mut first = PoseNet::new(&spec).unwrap();
        let mut trainer = Trainer::new(config(10), &mut first, &train_ds).unwrap();
        assert_eq!(
            trainer
                .run_epochs(&mut first, &train_ds, &val_ds, 5)
                .unwrap(),
            5
        );
        let state_path = tmp.path().join("half.state");
        checkpoint(&first, trainer.state(), &state_path).unwrap();
        drop((first, trainer));

        let (mut second, state) = resume(&state_path, &spec).unwrap();
        let mut trainer = Trainer::from_state(config(10), &mut second, state).unwrap();
        assert_eq!(
            trainer
                .run_epochs(&mut second, &train_ds, &val_ds, 10)
                .unwrap(),
            5
        );
        let resumed_state = trainer.into_state();

        assert_eq!(
            curve_bits(&full_state.curve),
            curve_bits(&resumed_state.curve)
        );
        assert_eq!(full_state.epochs_done, resumed_state.epochs_done);
        assert_eq!(full_state.adam.t, resumed_state.adam.t);
        assert_eq!(full_state.adam.config, resumed_state.adam.config);
        assert!(
            full_state.adam.m == resumed_state.adam.m,
            "first moments differ"
        );
        assert!(
            full_state.adam.v == resumed_state.adam.v,
            "second moments differ"
        );
        assert_eq!(
            full_state.best.as_ref().map(|b| b.epoch),
            resumed_state.best.as_ref().map(|b| b.epoch)
        );
        assert!(full_state.best == resumed_state.best, "best weights differ");
        assert_eq!(full_state.stale_epochs, resumed_state.stale_epochs);
        assert_eq!(full_state.beta.to_bits(), resumed_state.beta.to_bits());
        assert!(full_state == resumed_state, "training states differ");
        let (a, b) = (
            tmp.path().join("full.cpsp"),
            tmp.path().join("resumed.cpsp"),
        );
        full.save_weights(&a).unwrap();
        second.save_weights(&b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    })
    .unwrap();
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let net = PoseNet::new(&tiny_spec(12)).unwrap();
    let (a, b) = (tmp.path().join("a.cpsp"), tmp.path().join("b.cpsp"));
    net.save_weights(&a).unwrap();
    let mut copy = PoseNet::new(&tiny_spec(13)).unwrap();
    let report = copy.load_weights(&a).unwrap();
    assert!(report.untouched.is_empty() && report.ignored.is_empty());
    copy.save_weights(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(net.snapshot(), copy.snapshot());
}
