use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use capsule_pose_cli::{run_with, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("capsule-pose").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, seed: &str, frames: &str) -> PathBuf {
    let out = dir.join(name);
    let r = run(&[
        "synth",
        "--seed",
        seed,
        "--frames",
        frames,
        "--size",
        "32",
        "--out",
        p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    out
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

#[test]
fn help_succeeds_for_every_subcommand() {
    for sub in ["synth", "train", "eval", "gradcheck", "bench", "export"] {
        let r = run(&[sub, "--help"]);
        assert_eq!(r.code, EXIT_OK, "{sub}");
        assert!(r.stdout.contains("Usage"), "{sub}: {}", r.stdout);
    }
    assert_eq!(run(&["--help"]).code, EXIT_OK);
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let r = run(&["train"]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.stderr.contains("--data"), "{}", r.stderr);
    assert!(r.stderr.contains("Usage"), "{}", r.stderr);
}

#[test]
fn unknown_flags_and_values_are_usage_errors() {
    assert_eq!(
        run(&["synth", "--out", "x", "--colour", "red"]).code,
        EXIT_USAGE
    );
    assert_eq!(
        run(&["synth", "--out", "x", "--trajectory", "zigzag"]).code,
        EXIT_USAGE
    );
    assert_eq!(
        run(&["synth", "--out", "x", "--size", "big"]).code,
        EXIT_USAGE
    );
    assert_eq!(
        run(&["gradcheck", "--precision", "single"]).code,
        EXIT_USAGE
    );
    assert_eq!(run(&["frobnicate"]).code, EXIT_USAGE);
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&[
        "export",
        "--data",
        p(&dir.path().join("nowhere")),
        "--traj",
        "t.csv",
    ]);
    assert_eq!(r.code, EXIT_RUNTIME);
    assert!(r.stderr.starts_with("error:"), "{}", r.stderr);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", "7", "100");
    let b = synth(dir.path(), "b", "7", "100");
    let fa = dir_bytes(&a);
    assert_eq!(fa.len(), 102, "100 frames, manifest and metadata");
    assert_eq!(fa, dir_bytes(&b));
    let c = synth(dir.path(), "c", "8", "100");
    assert_ne!(fa, dir_bytes(&c));
}

#[test]
fn synth_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth(dir.path(), "d", "1", "5");
    let manifest = fs::read_to_string(d.join("manifest.txt")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("CPSD 1 5"));
    let first: Vec<&str> = lines.next().unwrap().split(' ').collect();
    assert_eq!(first[0], "frame_000000.ppm");
    assert_eq!(first.len(), 9);
    let ppm = fs::read(d.join("frame_000004.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), "P6\n32 32\n255\n".len() + 3 * 32 * 32);
}

#[test]
fn augmented_synth_multiplies_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("aug");
    let r = run(&[
        "synth",
        "--frames",
        "4",
        "--size",
        "16",
        "--augment",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("CPSD 1 12\n"));
}

#[test]
fn gradcheck_passes_in_double_precision() {
    let r = run(&["gradcheck", "--precision", "double", "--instances", "10"]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    assert_eq!(r.stdout.matches(" ok").count(), 9, "{}", r.stdout);
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let out = dir.path().join("cfg");
    fs::write(
        &conf,
        format!(
            "# synthetic run\nframes = 6\nsize = 16\nout = {}\n",
            p(&out)
        ),
    )
    .unwrap();

    let r = run(&["synth", "--config", p(&conf)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(fs::read_to_string(out.join("manifest.txt"))
        .unwrap()
        .starts_with("CPSD 1 6\n"));

    let r = run(&["synth", "--frames", "3", "--config", p(&conf)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(fs::read_to_string(out.join("manifest.txt"))
        .unwrap()
        .starts_with("CPSD 1 3\n"));

    fs::write(&conf, "frames: 6\n").unwrap();
    assert_eq!(run(&["synth", "--config", p(&conf)]).code, EXIT_USAGE);
    assert_eq!(
        run(&["synth", "--config", p(&dir.path().join("absent.conf"))]).code,
        EXIT_RUNTIME
    );
}

#[test]
fn train_eval_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "data", "3", "30");
    let w = dir.path().join("w.cpsp");
    let r = run(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&w),
        "--epochs",
        "2",
        "--batch",
        "8",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(fs::read(&w).unwrap().starts_with(b"CPSP"));

    let log = fs::read_to_string(dir.path().join("w.cpsp.log")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows.len(), 2);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split('\t').collect();
        assert_eq!(fields.len(), 6, "{row}");
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1..]
            .iter()
            .all(|f| f.parse::<f64>().unwrap().is_finite()));
    }

    let r = run(&["eval", "--ckpt", p(&w), "--data", p(&data), "--align"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    for key in ["rmse_cm", "rmse_aligned_cm", "bbox_diagonal_cm", "tx", "rz"] {
        assert!(r.stdout.contains(key), "{}", r.stdout);
    }

    let csv = dir.path().join("pred.csv");
    let r = run(&[
        "eval",
        "--ckpt",
        p(&w),
        "--data",
        p(&data),
        "--report",
        "csv",
        "--out",
        p(&csv),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("frame,tx,ty,tz,qw,qx,qy,qz\n"));
    assert_eq!(text.lines().count(), 31);
    assert_eq!(
        run(&[
            "eval",
            "--ckpt",
            p(&w),
            "--data",
            p(&data),
            "--report",
            "svg"
        ])
        .code,
        EXIT_USAGE
    );

    let gt = dir.path().join("gt.csv");
    assert_eq!(
        run(&["export", "--data", p(&data), "--traj", p(&gt)]).code,
        EXIT_OK
    );
    let gt_text = fs::read_to_string(&gt).unwrap();
    assert_eq!(gt_text.lines().count(), 31);
    assert_ne!(gt_text, text);

    let pred_csv = dir.path().join("pred2.csv");
    let r = run(&[
        "export",
        "--data",
        p(&data),
        "--ckpt",
        p(&w),
        "--traj",
        p(&pred_csv),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(fs::read_to_string(&pred_csv).unwrap(), text);

    let svg = dir.path().join("cmp.svg");
    let r = run(&[
        "export",
        "--data",
        p(&data),
        "--ckpt",
        p(&w),
        "--traj",
        p(&svg),
        "--format",
        "svg",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let svg_text = fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg") || svg_text.starts_with("<?xml"));
    assert!(svg_text.contains("xy") && svg_text.contains("xz"));

    let wrong_arch = run(&[
        "eval",
        "--ckpt",
        p(&w),
        "--data",
        p(&data),
        "--arch",
        "reference",
    ]);
    assert_eq!(wrong_arch.code, EXIT_RUNTIME);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "data", "5", "20");
    let base = ["--data", p(&data), "--batch", "4", "--patience", "0"];

    let full = dir.path().join("full.cpsp");
    let mut args = vec!["train", "--out", p(&full), "--epochs", "4"];
    args.extend(base);
    assert_eq!(run(&args).code, EXIT_OK);

    let part = dir.path().join("part.cpsp");
    let mut args = vec!["train", "--out", p(&part), "--epochs", "2"];
    args.extend(base);
    assert_eq!(run(&args).code, EXIT_OK);

    let state = dir.path().join("part.cpsp.state");
    let resumed = dir.path().join("resumed.cpsp");
    let log = dir.path().join("part.cpsp.log");
    let mut args = vec![
        "train",
        "--out",
        p(&resumed),
        "--epochs",
        "4",
        "--resume",
        p(&state),
        "--log",
        p(&log),
    ];
    args.extend(base);
    let r = run(&args);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);

    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());
    assert_eq!(
        fs::read_to_string(dir.path().join("full.cpsp.log")).unwrap(),
        fs::read_to_string(&log).unwrap()
    );
}

#[test]
fn bench_reports_latency() {
    let r = run(&["bench", "--frames", "3", "--size", "32"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.contains("mean_ms") && r.stdout.contains("median_ms"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_capsule-pose");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--version"]), Some(EXIT_OK));
    assert_eq!(status(&["train"]), Some(EXIT_USAGE));
    assert_eq!(
        status(&[
            "eval",
            "--ckpt",
            "/nonexistent/w",
            "--data",
            "/nonexistent/d"
        ]),
        Some(EXIT_RUNTIME)
    );
}
