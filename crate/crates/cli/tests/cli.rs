use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use physkit::dds::standardize;
use physkit::rng::{rng_for, standard_normal};
use physkit::signal::{format_waveform, gen_clip, read_waveform, ClipSpec, Waveform};

fn physkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physkit"))
        .current_dir(dir)
        .env_remove("PHYSKIT_SEED")
        .args(args)
        .output()
        .expect("spawn physkit")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

fn write_samples(path: &Path, fs: f64, samples: Vec<f64>) {
    fs::write(path, format_waveform(&Waveform { fs, samples })).unwrap();
}

fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, "cli-noise");
    (0..n).map(|_| standard_normal(&mut rng)).collect()
}

#[test]
fn synth_defaults_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let text = stdout(&physkit(tmp.path(), &["--seed", "7", "--out", "a", "synth"]));
    assert_eq!(field(&text, "clips"), 64.0);
    assert_eq!(field(&text, "len"), 128.0);
    assert_eq!(field(&text, "fs"), 30.0);
    stdout(&physkit(tmp.path(), &["--seed", "7", "--out", "b", "synth"]));
    let a = fs::read(tmp.path().join("a/manifest.jsonl")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/manifest.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 64);
    let w = read_waveform(tmp.path().join("a/clip0063_xenc.csv")).unwrap();
    assert_eq!(w.samples.len(), 128);
}

#[test]
fn synth_of_zero_clips_is_a_contract_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = physkit(tmp.path(), &["synth", "--count", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dds_identity_chain_returns_standardized_input() {
    let tmp = tempfile::tempdir().unwrap();
    let x: Vec<f64> = white_noise(64, 1).iter().map(|v| 3.0 * v + 2.0).collect();
    write_samples(&tmp.path().join("x.csv"), 30.0, x.clone());
    stdout(&physkit(
        tmp.path(),
        &["--alpha", "1", "--beta", "0", "--out", "z.csv", "dds", "x.csv"],
    ));
    let z = read_waveform(tmp.path().join("z.csv")).unwrap();
    assert_eq!(z.samples, standardize(&x, 1e-5).unwrap().values);
}

#[test]
fn dds_white_noise_variance_matches_ema_formula() {
    let tmp = tempfile::tempdir().unwrap();
    write_samples(&tmp.path().join("noise.csv"), 30.0, white_noise(8192, 2));
    let text = stdout(&physkit(tmp.path(), &["--alpha", "0.8", "--beta", "0", "dds", "noise.csv"]));
    let var = field(&text, "variance");
    assert!((0.6..=0.733).contains(&var), "{var}");
    assert!((field(&text, "theoretical_variance") - 0.8 / 1.2).abs() < 1e-12);
    assert!(text.contains("degenerate: false"));
}

#[test]
fn dds_on_constant_input_flags_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    write_samples(&tmp.path().join("c.csv"), 30.0, vec![4.5; 64]);
    let text = stdout(&physkit(tmp.path(), &["dds", "c.csv"]));
    assert!(text.contains("degenerate: true"), "{text}");
}

#[test]
fn malformed_csv_reports_line_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.csv"), "fs=30\n0.5\n0.25\nnope\n").unwrap();
    for cmd in ["dds", "stats", "hr"] {
        let out = physkit(tmp.path(), &[cmd, "bad.csv"]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("line 4"), "{cmd}: {err}");
    }
}

#[test]
fn stats_emits_json_record() {
    let tmp = tempfile::tempdir().unwrap();
    write_samples(&tmp.path().join("x.csv"), 30.0, vec![3.0, 1.0, 2.0, 5.0]);
    let text = stdout(&physkit(tmp.path(), &["stats", "x.csv"]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["min"], 1.0);
    assert_eq!(v["max"], 5.0);
    assert_eq!(v["median"], 2.5);
    assert_eq!(v["trend"], 2.0);
    assert_eq!(v["direction"], 1);
    assert_eq!(v["top_lags"].as_array().unwrap().len(), 2);
}

#[test]
fn hr_of_clean_72_bpm_clip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = ClipSpec {
        hr_bpm: 72.0,
        snr_db: f64::INFINITY,
        ..ClipSpec::default()
    };
    let clip = gen_clip(&spec, 0).unwrap();
    write_samples(&tmp.path().join("c.csv"), spec.fs, clip.bvp);
    let text = stdout(&physkit(tmp.path(), &["hr", "c.csv"]));
    let (path, bpm) = text.trim().split_once('\t').unwrap();
    assert_eq!(path, "c.csv");
    // One bin of the 4x zero-padded 128-sample spectrum at 30 Hz.
    let bin_bpm = 60.0 * 30.0 / 512.0;
    assert!((bpm.parse::<f64>().unwrap() - 72.0).abs() <= bin_bpm, "{bpm}");
}

#[test]
fn eval_of_ground_truth_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    stdout(&physkit(tmp.path(), &["--out", "d", "synth", "--count", "5"]));
    let text = stdout(&physkit(
        tmp.path(),
        &["--out", "hr.csv", "eval", "--gt", "d/manifest.jsonl", "--pred", "d/manifest.jsonl", "--max-mae", "0"],
    ));
    assert_eq!(field(&text, "mae_bpm"), 0.0);
    assert_eq!(field(&text, "rmse_bpm"), 0.0);
    let csv = fs::read_to_string(tmp.path().join("hr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn eval_threshold_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    stdout(&physkit(tmp.path(), &["--seed", "1", "--out", "gt", "synth", "--count", "4"]));
    stdout(&physkit(tmp.path(), &["--seed", "2", "--out", "pred", "synth", "--count", "4"]));
    let out = physkit(
        tmp.path(),
        &["eval", "--gt", "gt/manifest.jsonl", "--pred", "pred/manifest.jsonl", "--max-mae", "0.01"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("status: fail"));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = physkit(tmp.path(), &["train", "absent.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn gradcheck_passes_on_fresh_init() {
    let tmp = tempfile::tempdir().unwrap();
    let text = stdout(&physkit(tmp.path(), &["gradcheck"]));
    let modules: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modules, ["dds", "aggregator", "tpg", "cue", "pipeline"]);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")), "{text}");
}

#[test]
fn train_writes_curve_checkpoint_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    stdout(&physkit(tmp.path(), &["--out", "d", "synth", "--count", "4"]));
    let text = stdout(&physkit(tmp.path(), &["--steps", "2", "--out", "run", "train", "d/manifest.jsonl"]));
    assert_eq!(field(&text, "steps"), 2.0);
    let curve = fs::read_to_string(tmp.path().join("run/loss.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("step,loss"));
    assert_eq!(curve.lines().count(), 3);
    let run = fs::read_to_string(tmp.path().join("run/run.toml")).unwrap();
    assert!(run.contains("steps = 2"));

    // The saved config reproduces the checkpoint's architecture.
    let eval = stdout(&physkit(
        tmp.path(),
        &["--config", "run/run.toml", "eval", "--gt", "d/manifest.jsonl", "--checkpoint", "run/model.params"],
    ));
    assert!(eval.contains("mae_bpm"));
}

#[test]
fn tampered_waveform_is_rejected_by_train() {
    let tmp = tempfile::tempdir().unwrap();
    stdout(&physkit(tmp.path(), &["--out", "d", "synth", "--count", "2"]));
    write_samples(&tmp.path().join("d/clip0001_bvp.csv"), 30.0, vec![0.0; 128]);
    let out = physkit(tmp.path(), &["--steps", "1", "train", "d/manifest.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clip0001"));
}

#[test]
fn config_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "seed = 3\ncount = 2\n").unwrap();
    let manifest = |dir: &str| fs::read(tmp.path().join(dir).join("manifest.jsonl")).unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_physkit"));
        cmd.current_dir(tmp.path()).env_remove("PHYSKIT_SEED").args(args);
        if let Some(seed) = env {
            cmd.env("PHYSKIT_SEED", seed);
        }
        stdout(&cmd.output().unwrap())
    };
    run(&["--seed", "3", "--out", "ref3", "synth", "--count", "2"], None);
    run(&["--seed", "9", "--out", "ref9", "synth", "--count", "2"], None);
    run(&["--config", "c.toml", "--out", "file", "synth"], Some("9"));
    run(&["--config", "c.toml", "--seed", "9", "--out", "flag", "synth"], None);
    run(&["--out", "env", "synth", "--count", "2"], Some("9"));
    assert_eq!(manifest("file"), manifest("ref3"));
    assert_eq!(manifest("flag"), manifest("ref9"));
    assert_eq!(manifest("env"), manifest("ref9"));
    assert_ne!(manifest("ref3"), manifest("ref9"));

    fs::write(tmp.path().join("bad.toml"), "seed = 1\nbogus = 2\n").unwrap();
    let out = physkit(tmp.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(out.status.code(), Some(1));
}
