use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use failband::dataset::write_step_stream;
use failband::eval::{read_report, ReportFormat};
use failband::{CpBand, Dataset, DetectionResult};
use tempfile::TempDir;

fn failband(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failband"))
        .current_dir(dir)
        .env_remove("FAILBAND_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = failband(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    failband(dir, args).status.code().unwrap()
}

fn results(path: &Path) -> Vec<DetectionResult> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Temp dir with train/cal/test datasets, a logpZO model, and a V1 band.
fn pipeline() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["simulate", "--out", "train.jsonl", "--n-rollouts", "30", "--seed", "5"],
    );
    ok(
        d,
        &[
            "simulate",
            "--out",
            "cal.jsonl",
            "--n-rollouts",
            "20",
            "--first-index",
            "30",
            "--seed",
            "5",
        ],
    );
    ok(
        d,
        &[
            "simulate",
            "--out",
            "test.jsonl",
            "--n-rollouts",
            "30",
            "--first-index",
            "50",
            "--failures",
            "slip:0.3,sensor_shift:0.3",
            "--seed",
            "5",
        ],
    );
    ok(
        d,
        &[
            "train-score",
            "--method",
            "logpzo",
            "--train",
            "train.jsonl",
            "--out",
            "model.bin",
            "--epochs",
            "10",
            "--seed",
            "5",
        ],
    );
    ok(
        d,
        &[
            "calibrate",
            "--model",
            "model.bin",
            "--data",
            "cal.jsonl",
            "--out",
            "band.json",
            "--seed",
            "5",
        ],
    );
    tmp
}

#[test]
fn simulate_reports_label_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "simulate",
            "--out",
            "d.jsonl",
            "--n-rollouts",
            "12",
            "--failures",
            "slip:0.5",
        ],
    );
    assert!(out.contains("wrote 12 rollouts"), "{out}");
    let data = Dataset::load(tmp.path().join("d.jsonl")).unwrap().unwrap();
    assert_eq!(data.rollouts.len(), 12);
    let successes = data
        .rollouts
        .iter()
        .filter(|r| r.label == failband::Label::Success)
        .count();
    assert!(out.contains(&format!("success: {successes}")), "{out}");
}

#[test]
fn simulate_without_failures_has_no_injections() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["simulate", "--out", "d.jsonl", "--n-rollouts", "8"]);
    assert!(!out.contains("injected"), "{out}");
    let data = Dataset::load(tmp.path().join("d.jsonl")).unwrap().unwrap();
    assert!(data.rollouts.iter().all(|r| r.failure_mode.is_none()));
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        code(d, &["simulate", "--out", "d.jsonl", "--failures", "wobble:0.5"]),
        2
    );
    assert_eq!(
        code(
            d,
            &["simulate", "--out", "d.jsonl", "--failures", "slip:0.7,jitter:0.7"]
        ),
        2
    );
    fs::write(d.join("c.toml"), "n_rollots = 3\n").unwrap();
    let out = failband(d, &["--config", "c.toml", "simulate", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_rollots"));
}

#[test]
fn parameter_free_methods_refuse_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--out", "d.jsonl", "--n-rollouts", "4"]);
    for method in ["sparc", "stac"] {
        let out = failband(
            d,
            &[
                "train-score",
                "--method",
                method,
                "--train",
                "d.jsonl",
                "--out",
                "m.bin",
            ],
        );
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("requires no training"));
    }
}

#[test]
fn manifest_hash_is_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--out", "d.jsonl", "--n-rollouts", "6"]);
    let hash = |out: &str| -> String {
        ok(
            d,
            &[
                "train-score",
                "--method",
                "rnd",
                "--train",
                "d.jsonl",
                "--out",
                out,
                "--epochs",
                "2",
            ],
        )
        .lines()
        .find_map(|l| l.strip_prefix("config hash ").map(String::from))
        .unwrap()
    };
    let a = hash("a.bin");
    assert_eq!(a, hash("b.bin"));
    assert_eq!(a.len(), 64);
    assert_eq!(fs::read(d.join("a.bin")).unwrap(), fs::read(d.join("b.bin")).unwrap());
}

#[test]
fn calibration_rejects_failed_rollouts_unless_allowed() {
    let tmp = pipeline();
    let d = tmp.path();
    let args = [
        "calibrate",
        "--model",
        "model.bin",
        "--data",
        "test.jsonl",
        "--out",
        "b.json",
    ];
    assert_eq!(code(d, &args), 3);
    let mut mixed = args.to_vec();
    mixed.push("--allow-mixed");
    ok(d, &mixed);
}

#[test]
fn two_rollout_calibration_warns_and_still_writes_a_band() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--out", "cal.jsonl", "--n-rollouts", "2"]);
    let out = failband(
        d,
        &[
            "calibrate",
            "--method",
            "sparc",
            "--data",
            "cal.jsonl",
            "--out",
            "band.json",
            "--alpha",
            "0.05",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let band = CpBand::load(d.join("band.json")).unwrap();
    assert_eq!((band.n1, band.n2), (1, 1));
    assert!(!band.warnings.is_empty());
}

#[test]
fn detect_batch_and_stream_agree() {
    let tmp = pipeline();
    let d = tmp.path();
    let out = ok(
        d,
        &[
            "detect",
            "--model",
            "model.bin",
            "--band",
            "band.json",
            "--data",
            "test.jsonl",
            "--out",
            "batch.jsonl",
            "--step-log",
            "steps.jsonl",
        ],
    );
    assert!(out.contains("p50"), "{out}");
    let batch = results(&d.join("batch.jsonl"));
    assert_eq!(batch.len(), 30);
    let n_steps: usize = Dataset::load(d.join("test.jsonl"))
        .unwrap()
        .unwrap()
        .rollouts
        .iter()
        .map(|r| r.steps.len())
        .sum();
    assert_eq!(
        fs::read_to_string(d.join("steps.jsonl")).unwrap().lines().count(),
        n_steps
    );

    let data = Dataset::load(d.join("test.jsonl")).unwrap().unwrap();
    let mut w = BufWriter::new(File::create(d.join("stream.jsonl")).unwrap());
    write_step_stream(&mut w, &data.header, &data.rollouts).unwrap();
    drop(w);
    ok(
        d,
        &[
            "detect",
            "--model",
            "model.bin",
            "--band",
            "band.json",
            "--stream",
            "stream.jsonl",
            "--out",
            "stream_out.jsonl",
        ],
    );
    assert_eq!(
        fs::read(d.join("batch.jsonl")).unwrap(),
        fs::read(d.join("stream_out.jsonl")).unwrap()
    );
}

#[test]
fn detect_rejects_a_malformed_step_record() {
    let tmp = pipeline();
    let d = tmp.path();
    let data = Dataset::load(d.join("test.jsonl")).unwrap().unwrap();
    let mut w = BufWriter::new(File::create(d.join("stream.jsonl")).unwrap());
    write_step_stream(&mut w, &data.header, &data.rollouts[..2]).unwrap();
    drop(w);
    let mut text = fs::read_to_string(d.join("stream.jsonl")).unwrap();
    text.push_str("{\"rollout_id\": \"x\", \"t\": 0, \"obs\": [1.0]}\n");
    fs::write(d.join("stream.jsonl"), text).unwrap();
    let args = [
        "detect",
        "--model",
        "model.bin",
        "--band",
        "band.json",
        "--stream",
        "stream.jsonl",
        "--out",
        "o.jsonl",
    ];
    assert_eq!(code(d, &args), 3);
}

#[test]
fn evaluate_and_sweep_write_reports() {
    let tmp = pipeline();
    let d = tmp.path();
    ok(
        d,
        &[
            "detect",
            "--model",
            "model.bin",
            "--band",
            "band.json",
            "--data",
            "test.jsonl",
            "--out",
            "r.jsonl",
        ],
    );
    ok(
        d,
        &[
            "evaluate",
            "--results",
            "r.jsonl",
            "--labels",
            "test.jsonl",
            "--band",
            "band.json",
            "--out",
            "report.json",
        ],
    );
    let rows = read_report(d.join("report.json")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "logpzo");
    assert_eq!(rows[0].alpha, 0.05);
    assert_eq!(rows[0].n_test, 30);

    ok(
        d,
        &[
            "sweep-alpha",
            "--model",
            "model.bin",
            "--cal",
            "cal.jsonl",
            "--test",
            "test.jsonl",
            "--out",
            "sweep.csv",
        ],
    );
    assert_eq!(ReportFormat::from_path(Path::new("sweep.csv")), ReportFormat::Csv);
    let sweep = read_report(d.join("sweep.csv")).unwrap();
    assert_eq!(sweep.len(), 10);
    assert!(sweep.windows(2).all(|w| w[0].alpha < w[1].alpha));

    let empty = [
        "sweep-alpha",
        "--model",
        "model.bin",
        "--cal",
        "cal.jsonl",
        "--test",
        "test.jsonl",
        "--grid",
        "",
        "--out",
        "s.csv",
    ];
    assert_ne!(code(d, &empty), 0);
}

#[test]
fn bench_appends_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--out", "d.jsonl", "--n-rollouts", "3"]);
    for _ in 0..2 {
        ok(
            d,
            &[
                "bench",
                "--method",
                "sparc",
                "--data",
                "d.jsonl",
                "--reps",
                "1",
                "--out",
                "bench.csv",
            ],
        );
    }
    let text = fs::read_to_string(d.join("bench.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("method"));
    assert!(lines[1].starts_with("sparc,"));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| -> PathBuf {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_failband"));
        cmd.current_dir(d).env_remove("FAILBAND_SEED");
        if let Some(v) = env {
            cmd.env("FAILBAND_SEED", v);
        }
        cmd.args(["simulate", "--out", name, "--n-rollouts", "3"]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.output().unwrap().status.success());
        d.join(name)
    };
    let env = fs::read(run("env.jsonl", Some("17"), None)).unwrap();
    let flag = fs::read(run("flag.jsonl", None, Some("17"))).unwrap();
    let both = fs::read(run("both.jsonl", Some("3"), Some("17"))).unwrap();
    let none = fs::read(run("none.jsonl", None, None)).unwrap();
    assert_eq!(env, flag);
    assert_eq!(both, flag);
    assert_ne!(none, flag);
    assert_eq!(code(d, &["simulate", "--out", "x.jsonl"]), 0);
    let bad = Command::new(env!("CARGO_BIN_EXE_failband"))
        .current_dir(d)
        .env("FAILBAND_SEED", "abc")
        .args(["simulate", "--out", "y.jsonl", "--n-rollouts", "1"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
