use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_sphereflow");

/// A small model and sampler so each command finishes in well under a second.
const TINY: &[&str] = &[
    "--set", "batch_size=32",
    "--set", "hidden=32",
    "--set", "depth=1",
    "--set", "time_embed_dim=8",
    "--set", "sampler_steps=8",
    "--set", "eval_samples=4000",
    "--set", "eval_interval=0",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json_field(line: &str, key: &str) -> serde_json::Value {
    serde_json::from_str::<serde_json::Value>(line).unwrap()[key].clone()
}

#[test]
fn make_data_defaults_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["make-data", "--out-dir", s(&a)]);
    ok(&["make-data", "--out-dir", s(&b)]);
    let data = std::fs::read(a.join("data.csv")).unwrap();
    assert_eq!(data, std::fs::read(b.join("data.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("data.csv.truth")).unwrap(), std::fs::read(b.join("data.csv.truth")).unwrap());
    let text = String::from_utf8(data).unwrap();
    assert!(text.starts_with("# sphereflow make-data format_version=1 config="));
    // Header line, column names, then one row per sequence.
    assert_eq!(text.lines().count(), 100_000 + 2);
    assert_eq!(text.lines().nth(1), Some("x0,x1,x2,x3"));
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["make-data", "--K", "1", "--out-dir", s(dir.path())]).status.code(), Some(2));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = run(&["make-data", "--n", "10", "--out", s(&blocker.join("data.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--set", "learnin_rate=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
    let out = run(&["train", "--data", s(&dir.path().join("missing.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dump_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dumped = ok(&["train", "--dump-config", "--seed", "9", "--set", "learning_rate=0.002", "--chart", "simplex"]);
    assert!(dumped.contains("seed=9\n") && dumped.contains("chart=simplex\n"));
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, &dumped).unwrap();
    assert_eq!(ok(&["train", "--dump-config", "--config", s(&path)]), dumped);
    // Flags override the file.
    assert!(ok(&["train", "--dump-config", "--config", s(&path), "--seed", "4"]).contains("seed=4\n"));
}

#[test]
fn ten_step_smoke_run_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "10000"]);
    let start = Instant::now();
    // Default model and training settings; the closing evaluation is kept small
    // so the timing measures training rather than 512k-sample generation.
    let out = ok(&[
        "train", "--out-dir", d, "--steps", "10", "--eval-samples", "2000", "--set", "sampler_steps=20", "--threads", "1",
    ]);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "10 steps took {secs:.1} s");
    assert!(out.contains("step 10 final eval kl="));
    for f in ["final.ckpt", "best.ckpt", "metrics.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# sphereflow train format_version=1 config="));
    assert_eq!(metrics.lines().count(), 2 + 10);
}

#[test]
fn zero_steps_reports_the_untrained_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "2000", "--seed", "2"]);
    let out = ok(&with_tiny(&["train", "--out-dir", d, "--steps", "0", "--seed", "2"]));
    let kl: f64 = out.trim().rsplit('=').next().unwrap().parse().unwrap();
    ok(&with_tiny(&["sample", "--out-dir", d, "--seed", "2"]));
    let line = ok(&with_tiny(&["eval", "--out-dir", d, "--seed", "2"]));
    assert_eq!(json_field(line.trim(), "kl").as_f64().unwrap(), kl);
    let ckpt = std::fs::read(dir.path().join("final.ckpt")).unwrap();
    assert!(String::from_utf8_lossy(&ckpt[..200]).contains("\nstep=0\n"));
}

#[test]
fn resume_continues_the_step_counter() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["make-data", "--out", s(&data), "--n", "2000"]);
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    ok(&with_tiny(&["train", "--data", s(&data), "--out-dir", s(&straight), "--steps", "24"]));
    ok(&with_tiny(&["train", "--data", s(&data), "--out-dir", s(&split), "--steps", "10"]));
    let first = split.join("final.ckpt");
    ok(&with_tiny(&["train", "--data", s(&data), "--out-dir", s(&split), "--steps", "24", "--resume", s(&first)]));
    assert_eq!(std::fs::read(straight.join("final.ckpt")).unwrap(), std::fs::read(split.join("final.ckpt")).unwrap());
    let metrics = std::fs::read_to_string(split.join("metrics.csv")).unwrap();
    let steps: Vec<u64> = metrics.lines().skip(2).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=24).collect::<Vec<_>>());
}

#[test]
fn sampling_is_deterministic_and_checks_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "1000"]);
    ok(&with_tiny(&["train", "--out-dir", d, "--steps", "5"]));
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["sample", "--out-dir", d, "--n", "512000", "--sampler-steps", "4", "--seed", "7", "--out", s(&a)]);
    ok(&["sample", "--out-dir", d, "--n", "512000", "--sampler-steps", "4", "--seed", "7", "--out", s(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 512_000 + 2);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());

    let e = dir.path().join("e.csv");
    ok(&["sample", "--out-dir", d, "--n", "10", "--scheme", "endpoint", "--keep-continuous", "--out", s(&e)]);
    let text = std::fs::read_to_string(&e).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("# sphereflow sample ") && header.contains("scheme=endpoint"));
    assert!(text.lines().nth(1).unwrap().starts_with("x0,x1,x2,x3,s0_0,"));

    assert_eq!(run(&["sample", "--out-dir", d, "--n", "10", "--K", "5"]).status.code(), Some(2));
    assert_eq!(run(&["sample", "--out-dir", d, "--n", "10", "--k", "3"]).status.code(), Some(2));
}

#[test]
fn eval_of_truth_samples_matches_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "512000", "--seed", "1"]);
    let out = ok(&["eval", "--out-dir", d, "--samples", s(&dir.path().join("data.csv")), "--seed", "1"]);
    let line = out.trim();
    let (kl, floor) = (json_field(line, "kl").as_f64().unwrap(), json_field(line, "floor_kl").as_f64().unwrap());
    let ratio = kl / floor;
    assert!((1.0 / 1.1..=1.1).contains(&ratio), "kl {kl} floor {floor}");
    for key in ["kl", "floor_kl", "sample_count", "seed", "config_hash", "frequencies", "kl_infinite"] {
        assert!(!json_field(line, key).is_null(), "{key}");
    }
    assert_eq!(json_field(line, "sample_count").as_u64(), Some(512_000));
    let file = std::fs::read_to_string(dir.path().join("eval.jsonl")).unwrap();
    assert!(json_field(file.lines().next().unwrap(), "header").as_str().unwrap().starts_with("sphereflow eval"));
}

#[test]
fn malformed_samples_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "10"]);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# sphereflow sample config=0\nx0,x1,x2,x3\n0,1,2,3\n0,1,two,3\n").unwrap();
    let out = run(&["eval", "--out-dir", d, "--samples", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    std::fs::write(&bad, "# sphereflow sample config=0\nx0,x1,x2\n0,1,2\n").unwrap();
    assert_eq!(run(&["eval", "--out-dir", d, "--samples", s(&bad)]).status.code(), Some(2));
}

#[test]
fn ablation_accounts_for_every_run_and_appends() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "1000"]);
    let out = ok(&with_tiny(&["ablate", "--out-dir", d, "--seeds", "5", "--set", "steps=4"]));
    assert!(out.lines().any(|l| l.starts_with("winner: ")));
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("arm,seed,kl,floor_kl,ot_cost_mean"));
    assert_eq!(csv.lines().count(), 2 + 20);

    ok(&with_tiny(&["ablate", "--out-dir", d, "--seeds", "1", "--charts", "simplex", "--ot", "off", "--set", "steps=4"]));
    let after = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert!(after.starts_with(&csv));
    assert_eq!(after.lines().count(), 2 + 21);
}

#[test]
fn single_arm_ablation_equals_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--n", "2000", "--seed", "5"]);
    let common = ["--seed", "5", "--set", "steps=15", "--set", "chart=simplex", "--set", "ot=true"];
    let mut args = vec!["ablate", "--out-dir", d, "--seeds", "1", "--charts", "simplex", "--ot", "on"];
    args.extend_from_slice(&common);
    ok(&with_tiny(&args));
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let ablation_kl: f64 = csv.lines().nth(2).unwrap().split(',').nth(2).unwrap().parse().unwrap();

    for cmd in ["train", "sample", "eval"] {
        let mut args = vec![cmd, "--out-dir", d];
        args.extend_from_slice(&common);
        let out = ok(&with_tiny(&args));
        if cmd == "eval" {
            assert_eq!(json_field(out.trim(), "kl").as_f64().unwrap().to_bits(), ablation_kl.to_bits());
        }
    }
}

#[test]
fn smiley_pipeline_emits_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["make-data", "--out-dir", d, "--kind", "smiley", "--n", "3000"]);
    let text = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("p0,p1,p2"));
    let out = ok(&with_tiny(&["train", "--out-dir", d, "--steps", "5"]));
    assert!(out.contains("final eval tv="));
    ok(&with_tiny(&["sample", "--out-dir", d, "--keep-continuous"]));
    let line = ok(&with_tiny(&["eval", "--out-dir", d]));
    let tv = json_field(line.trim(), "tv").as_f64().unwrap();
    assert!((0.0..=1.0).contains(&tv));
    for f in ["target.svg", "generated.svg"] {
        let svg = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<!-- sphereflow eval ") && svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
    }
    // Index-only samples cannot be placed on the simplex.
    ok(&with_tiny(&["sample", "--out-dir", d]));
    assert_eq!(run(&with_tiny(&["eval", "--out-dir", d])).status.code(), Some(2));
}
