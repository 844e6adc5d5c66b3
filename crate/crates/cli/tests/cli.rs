use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protoflow::io::{decode_checkpoint, parse_trajectories_csv, parse_trajectories_jsonl, MANDATORY_FILES};

const SMALL: &str = r#"
seed = 3

[model]
field_hidden = 16

[train]
iterations = 30
warmup = 5
eval_per_class = 40
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protoflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join(format!("cfg{}.toml", extra.len()));
    fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[train]\nlearning_rate = 3\n").unwrap();
    let o = run(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(code(&run(&["run"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["run", "--variant", "bogus", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["run", "--order", "1,1,2", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["sweep", "--grid", "curve=0", "--out", s(&out)])), 2);
    let o = bin().env("PROTOFLOW_THREADS", "zero").args(["gradcheck", "--seeds", "1"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn run_writes_a_complete_deterministic_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = run(&["run", "--config", s(&cfg), "--out", s(dir)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in MANDATORY_FILES.iter().chain(["run_log.jsonl"].iter()) {
        let x = fs::read(a.join(f)).unwrap_or_else(|_| panic!("missing {f}"));
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs between identical runs");
    }
    for t in 0..4 {
        let text = fs::read_to_string(a.join("checkpoints").join(format!("step_{t}.ckpt"))).unwrap();
        assert_eq!(decode_checkpoint(&text).unwrap().step, t);
    }
    let csv = parse_trajectories_csv(&fs::read_to_string(a.join("trajectories.csv")).unwrap()).unwrap();
    let jsonl = parse_trajectories_jsonl(&fs::read_to_string(a.join("trajectories.jsonl")).unwrap()).unwrap();
    assert_eq!(csv, jsonl);
    assert_eq!(csv.len(), 6);

    let o = run(&["run", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(code(&o), 2, "clobbered without --overwrite");
    assert!(stderr(&o).contains("--overwrite"));
    let o = run(&["run", "--config", s(&cfg), "--out", s(&a), "--overwrite"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let first = tmp.path().join("first");
    let o = run(&["run", "--config", s(&cfg), "--out", s(&first), "--seed", "9", "--variant", "no_sep", "--alpha", "0.5", "--order", "2,1,3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echo = first.join("config.toml");
    let text = fs::read_to_string(&echo).unwrap();
    assert!(text.contains("seed = 9") && text.contains("no_sep") && text.contains("time_shuffle = 0.5"));
    let second = tmp.path().join("second");
    assert_eq!(code(&run(&["run", "--config", s(&echo), "--out", s(&second)])), 0);
    for f in MANDATORY_FILES {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn numeric_blowup_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("hot.toml");
    fs::write(&cfg, format!("{SMALL}lr = 1e300\nclip_norm = 1e300\n")).unwrap();
    let o = run(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"), "{}", stderr(&o));
}

#[test]
fn analyze_compares_matching_runs_and_rejects_mismatched_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let full = tmp.path().join("full");
    let ft = tmp.path().join("ft");
    let other = tmp.path().join("other");
    assert_eq!(code(&run(&["run", "--config", s(&cfg), "--out", s(&full)])), 0);
    assert_eq!(code(&run(&["run", "--config", s(&cfg), "--variant", "fine_tune", "--out", s(&ft)])), 0);
    assert_eq!(code(&run(&["run", "--config", s(&cfg), "--order", "3,2,1", "--out", s(&other)])), 0);

    let report = tmp.path().join("report");
    let o = run(&["analyze", s(&full), s(&ft), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("favorable quadrant"));
    let deltas = fs::read_to_string(report.join("deltas.csv")).unwrap();
    assert_eq!(deltas.lines().count(), 7);
    assert!(report.join("angles.csv").exists());

    assert_eq!(code(&run(&["analyze", s(&full), s(&other)])), 2);
    assert_eq!(code(&run(&["analyze", s(&full), s(&tmp.path().join("absent"))])), 2);
}

#[test]
fn suites_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let abl = tmp.path().join("abl");
    let o = run(&["ablate", "--config", s(&cfg), "--seed", "0,1", "--variant", "full,no_curve", "--out", s(&abl)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(abl.join("ablation.csv")).unwrap().lines().count(), 3);
    assert!(abl.join("runs/no_curve_seed1/summary.csv").exists());

    let sw = tmp.path().join("sw");
    let o = run(&["sweep", "--config", s(&cfg), "--grid", "curve=0,0.5;sep=0", "--seed", "0", "--out", s(&sw)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let heat = fs::read_to_string(sw.join("sweep_forgetting.csv")).unwrap();
    assert!(heat.starts_with("curve,sep=0\n0,"), "{heat}");
    assert_eq!(fs::read_to_string(sw.join("sweep.csv")).unwrap().lines().count(), 3);
}

#[test]
fn theory_and_gradcheck_pass_on_small_suites() {
    let tmp = tempfile::tempdir().unwrap();
    let th = tmp.path().join("th");
    let o = run(&[
        "theory", "--worlds", "8", "--samples", "4000", "--trajectories", "50", "--grid-points", "100", "--out", s(&th),
    ]);
    assert_eq!(code(&o), 0, "{}{}", stderr(&o), String::from_utf8_lossy(&o.stdout));
    for f in ["theory_lemmas.json", "theory_bounds.json", "theory_bounds.csv"] {
        assert!(th.join(f).exists(), "{f}");
    }
    let gc = tmp.path().join("gc");
    let o = bin().env("PROTOFLOW_THREADS", "2").args(["gradcheck", "--seeds", "2", "--out", s(&gc)]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(gc.join("gradcheck.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 7);
    assert!(!table.contains(",false"));
}
