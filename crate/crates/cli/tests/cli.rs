use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use catdiff::models::load_checkpoint;
use catdiff::models::AnyModel;
use catdiff_cli::commands::init_seed;

fn catdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = catdiff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small masked model on 8gaussians at 6 bits per axis.
const SMALL: [&str; 8] = [
    "--dataset",
    "8gaussians",
    "--bits",
    "6",
    "--model",
    "masked",
    "--set",
    "model.hidden=[32,32]",
];

fn train_small(dir: &Path, steps: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("run-{steps}-{}", extra.join("").replace(['/', '=', '[', ']', ','], "_")));
    let mut args = vec!["train"];
    args.extend(SMALL);
    args.extend(["--steps", steps, "--set", "train.eval_every=50", "--out", path(&out)]);
    args.extend(extra);
    ok(&args);
    out
}

fn last_loss(metrics: &Path) -> f64 {
    let text = std::fs::read_to_string(metrics).unwrap();
    let last = text.lines().filter(|l| !l.starts_with('#')).last().unwrap();
    last.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn training_smoke_run_beats_the_uniform_loss() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "400", &["--set", "train.learning_rate=1e-3"]);
    assert!(run.join("checkpoint.bin").exists());
    let uniform = 12.0 * 2f64.ln();
    let loss = last_loss(&run.join("metrics.csv"));
    assert!(loss < uniform, "final loss {loss} vs {uniform}");
}

#[test]
fn zero_steps_leave_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "0", &[]);
    let ck = load_checkpoint(&run.join("checkpoint.bin")).unwrap();
    let fresh = AnyModel::build(&ck.descriptor, init_seed(0)).unwrap();
    assert_eq!(ck.params, fresh.as_differentiable().parameters().values);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = train_small(a.path(), "60", &[]);
    let rb = train_small(b.path(), "60", &[]);
    for f in ["metrics.csv", "checkpoint.bin", "config.toml"] {
        assert_eq!(std::fs::read(ra.join(f)).unwrap(), std::fs::read(rb.join(f)).unwrap(), "{f}");
    }
    let text = std::fs::read_to_string(ra.join("metrics.csv")).unwrap();
    assert!(text.contains("# config_digest ") && text.contains("# seed 0") && text.contains("# catdiff "));
}

#[test]
fn sampling_respects_the_mode_gate_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = train_small(dir.path(), "5", &[]);
    let denoise = train_small(dir.path(), "5", &["--set", "model.mode=denoising", "--set", "train.loss=x0_ce"]);
    let s1 = dir.path().join("a.csv");
    let s2 = dir.path().join("b.csv");
    let cfg = denoise.join("config.toml");
    let ck = denoise.join("checkpoint.bin");
    for s in [&s1, &s2] {
        ok(&[
            "sample", "--config", path(&cfg), "--checkpoint", path(&ck), "--sampler", "analytical", "--steps", "4",
            "--out", path(s),
        ]);
    }
    let a = std::fs::read(&s1).unwrap();
    assert_eq!(a, std::fs::read(&s2).unwrap());
    let text = String::from_utf8(a).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "x,y,state");
    assert_eq!(rows.len() - 1, 4000);
    assert!(text.contains("# config_digest "));

    let gated = catdiff(&[
        "sample",
        "--config",
        path(&noisy.join("config.toml")),
        "--checkpoint",
        path(&noisy.join("checkpoint.bin")),
        "--sampler",
        "analytical",
        "--out",
        path(&dir.path().join("c.csv")),
    ]);
    assert_eq!(gated.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&gated.stderr).contains("denoising"));
}

#[test]
fn checkpoint_must_match_the_configured_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_small(dir.path(), "1", &[]);
    let out = catdiff(&[
        "sample",
        "--config",
        path(&run.join("config.toml")),
        "--set",
        "model.hidden=[16]",
        "--checkpoint",
        path(&run.join("checkpoint.bin")),
        "--out",
        path(&dir.path().join("s.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_aggregates_per_repeat_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["gen-data", "--dataset", "2spirals", "--bits", "6", "--n", "3000", "--out", path(&data)]);
    let ev = dir.path().join("ev");
    ok(&[
        "eval", "--dataset", "2spirals", "--bits", "6", "--samples", path(&data), "--set", "eval.samples_per_repeat=300",
        "--out", path(&ev),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    let per: Vec<f64> = report["per_repeat"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(per.len(), 10);
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    assert!((mean - report["metrics"]["mmd_mean"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(report["metadata"]["sample_blocks"], "disjoint");
    assert!(report["metadata"]["config_digest"].is_string());
    assert!(std::fs::read_to_string(ev.join("metrics.csv")).unwrap().contains("mmd_mean"));
}

#[test]
fn eval_reports_missing_files_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let out = catdiff(&["eval", "--samples", path(&missing), "--out", path(&dir.path().join("ev"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(path(&missing)));
}

#[test]
fn eval_on_a_table_reports_total_variation() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.json");
    let space = catdiff::StateSpace::new(3, 3).unwrap();
    let mut rng = catdiff::rng::seeded(5);
    let dist = catdiff::ctmc::TabularDistribution::random_positive(space, 0.0, &mut rng).unwrap();
    std::fs::write(&table, dist.to_json().unwrap()).unwrap();
    let ev = dir.path().join("ev");
    ok(&[
        "eval", "--baseline", "oracle", "--set", "data.source=table", "--set", &format!("data.path={}", path(&table)),
        "--set", "sample.sampler=exact_oracle", "--set", "process.base_rate=2", "--repeats", "2", "--out", path(&ev),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(report["metrics"]["tv_mean"].as_f64().unwrap() < 0.05);
}

#[test]
fn configuration_precedence_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    std::fs::write(&file, "[train]\nsteps = 5\nlearning_rate = 2e-3\n").unwrap();
    let printed = ok(&["train", "--config", path(&file), "--steps", "7", "--print-config", "--out", "unused"]).stdout;
    let printed = String::from_utf8(printed).unwrap();
    assert!(printed.contains("train.steps = 7\n"));
    assert!(printed.contains("train.learning_rate = 0.002\n"));
    let over = ok(&[
        "train", "--config", path(&file), "--steps", "7", "--set", "train.steps=9", "--print-config", "--out", "unused",
    ])
    .stdout;
    assert!(String::from_utf8(over).unwrap().contains("train.steps = 9\n"));

    let normalized = dir.path().join("n.toml");
    std::fs::write(&normalized, &printed).unwrap();
    let again = ok(&["train", "--config", path(&normalized), "--print-config", "--out", "unused"]).stdout;
    assert_eq!(String::from_utf8(again).unwrap(), printed);
}

#[test]
fn usage_and_numeric_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = catdiff(&["train", "--set", "train.stpes=3", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.stpes"));
    assert_eq!(catdiff(&["train"]).status.code(), Some(2));
    let out = catdiff(&[
        "train", "--bits", "4", "--model", "ebm", "--set", "model.hidden=[8]", "--steps", "50", "--set",
        "train.learning_rate=1e200", "--set", "train.eval_every=10", "--out", path(&dir.path().join("nan")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        ok(&["gen-data", "--dataset", "checkerboard", "--bits", "8", "--n", "100", "--seed", "3", "--out", path(p)]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.lines().next().unwrap().contains("config_digest"));
    assert_eq!(text.lines().nth(1).unwrap(), "x,y,state");
    assert_eq!(text.lines().count(), 102);
}

#[test]
fn verify_fast_enumerates_every_check() {
    let start = std::time::Instant::now();
    let out = ok(&["verify", "--level", "fast"]);
    assert!(start.elapsed().as_secs() < 120);
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(verdict["passed"], true);
    let names: Vec<&str> = verdict["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, catdiff::verify::check_names());
}

#[test]
fn verify_catches_the_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("verdict.json");
    let out = catdiff(&["verify", "--inject-fault", "--only", "reverse_simulation_tv", "--out", path(&file)]);
    assert_eq!(out.status.code(), Some(4));
    let verdict: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(verdict["checks"][0]["passed"], false);
    assert_eq!(catdiff(&["verify", "--only", "no_such_check"]).status.code(), Some(2));
}
