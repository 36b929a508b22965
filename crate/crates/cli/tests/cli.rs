use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn dpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpn"))
        .args(args)
        .env("DPN_THREADS", "1")
        .output()
        .expect("spawn dpn")
}

fn ok(args: &[&str]) -> String {
    let out = dpn(args);
    assert!(
        out.status.success(),
        "dpn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command expected to fail and returns its single diagnostic line.
fn fails(args: &[&str]) -> String {
    let out = dpn(args);
    assert!(!out.status.success(), "dpn {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic spans several lines: {err}");
    err
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn eil51() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/eil51.tsp")
}

/// Trains a tiny MTSP model and returns its run directory.
fn tiny_run(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "train", "--preset", "desk", "--kind", "MTSP", "--n", "6", "--epochs", "2", "--epoch-size", "16", "--out",
        p(&out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn gen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for f in [&a, &b] {
        ok(&["gen", "--kind", "MDVRP", "--n", "12", "--depots", "3", "--agents", "2-4", "--count", "5", "--seed", "9", "--out", p(f)]);
    }
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 5);

    let empty = dir.path().join("empty.jsonl");
    ok(&["gen", "--kind", "MTSP", "--n", "49", "--agents", "5", "--count", "0", "--out", p(&empty)]);
    assert!(fs::read(&empty).unwrap().is_empty());
}

#[test]
fn bad_input_gives_one_line_and_nonzero_exit() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.jsonl");
    fails(&["gen", "--kind", "CVRP", "--n", "5", "--agents", "2", "--count", "1", "--out", p(&out)]);
    fails(&["gen", "--kind", "MPDP", "--n", "5", "--agents", "2", "--count", "1", "--out", p(&out)]);
    let nowhere = dir.path().join("missing/x.jsonl");
    let err = fails(&["gen", "--kind", "MTSP", "--n", "5", "--agents", "2", "--count", "1", "--out", p(&nowhere)]);
    assert!(err.contains("does not exist"), "{err}");
    fails(&["solve", "--checkpoint", "nope.bin", "--dataset", "nope.jsonl", "--out", p(&out)]);
}

#[test]
fn train_solve_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let run = tiny_run(dir.path(), "run", &[]);
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let epochs: Vec<u64> = metrics
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![0, 1]);
    for key in ["mean_obj", "mean_baseline", "lr", "wallclock"] {
        assert!(metrics.lines().next().unwrap().contains(key));
    }

    let data = dir.path().join("tiny.jsonl");
    ok(&["gen", "--kind", "MTSP", "--n", "6", "--agents", "2", "--count", "4", "--seed", "1", "--out", p(&data)]);
    let sols = dir.path().join("sols.jsonl");
    let probe = dir.path().join("probe.jsonl");
    let ckpt = run.join("checkpoint.bin");
    let summary = ok(&[
        "solve", "--checkpoint", p(&ckpt), "--dataset", p(&data), "--out", p(&sols), "--aug8", "--per", "2",
        "--probe", p(&probe),
    ]);
    assert!(summary.contains("4 instances"), "{summary}");
    assert!(summary.contains("wall-clock"), "{summary}");
    let mean = summary.split("mean objective ").nth(1).unwrap().split(',').next().unwrap();
    assert_eq!(mean.split('.').nth(1).unwrap().len(), 4, "{summary}");

    let probe_text = fs::read_to_string(&probe).unwrap();
    assert_eq!(probe_text.lines().count(), 4);
    assert!(probe_text.contains("\"agent-customer\""));

    let table = ok(&["eval", "--solutions", p(&sols), "--dataset", p(&data), "--ref", "oracle"]);
    let last = table.lines().last().unwrap();
    let gap: f64 = last.split_whitespace().last().unwrap().parse().unwrap();
    assert!(last.starts_with("    mean") && gap >= -1e-9, "{table}");

    let same = ok(&["eval", "--solutions", p(&sols), "--dataset", p(&data), "--ref", p(&sols)]);
    let gap: f64 = same.lines().last().unwrap().split_whitespace().last().unwrap().parse().unwrap();
    assert_eq!(gap, 0.0);

    let short = dir.path().join("short.jsonl");
    ok(&["gen", "--kind", "MTSP", "--n", "6", "--agents", "2", "--count", "3", "--seed", "1", "--out", p(&short)]);
    let err = fails(&["eval", "--solutions", p(&sols), "--dataset", p(&short)]);
    assert!(err.contains("4 solutions") && err.contains("3 instances"), "{err}");

    let kind_mismatch = dir.path().join("pd.jsonl");
    ok(&["gen", "--kind", "MPDP", "--n", "6", "--agents", "2", "--count", "1", "--out", p(&kind_mismatch)]);
    fails(&["solve", "--checkpoint", p(&ckpt), "--dataset", p(&kind_mismatch), "--out", p(&sols)]);
}

#[test]
fn resume_and_ablation_flags() {
    let dir = TempDir::new().unwrap();
    let run = tiny_run(dir.path(), "abl", &["--no-navigation-part", "--pe", "sinusoidal"]);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["model"]["navigation"], false);
    assert_eq!(cfg["model"]["pe"], "sinusoidal");

    let err = fails(&["train", "--preset", "desk", "--kind", "MTSP", "--n", "6", "--out", p(&run)]);
    assert!(err.contains("--resume"), "{err}");
    ok(&["train", "--resume", "--epochs", "3", "--out", p(&run)]);
    let lines = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    let err = fails(&[
        "train", "--resume", "--preset", "desk", "--kind", "MTSP", "--n", "7", "--epochs", "4", "--out", p(&run),
    ]);
    assert!(err.contains("differs"), "{err}");
}

#[test]
fn config_files_are_strict() {
    let dir = TempDir::new().unwrap();
    let run = tiny_run(dir.path(), "base", &[]);
    let text = fs::read_to_string(run.join("config.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["learning_rate"] = serde_json::json!(0.1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    let err = fails(&["train", "--config", p(&bad), "--out", p(&dir.path().join("x"))]);
    assert!(err.contains("learning_rate"), "{err}");

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["model"]["dim"] = serde_json::json!(16);
    v["model"]["ff_hidden"] = serde_json::json!(32);
    let small = dir.path().join("small.json");
    fs::write(&small, v.to_string()).unwrap();
    let err = fails(&[
        "finetune", "--config", p(&small), "--checkpoint", p(&run.join("checkpoint.bin")), "--out",
        p(&dir.path().join("ft")),
    ]);
    assert!(err.contains("d=32") && err.contains("d=16"), "{err}");

    let ft = dir.path().join("ft2");
    ok(&[
        "finetune", "--config", p(&run.join("config.json")), "--epochs", "1", "--checkpoint",
        p(&run.join("checkpoint.bin")), "--out", p(&ft),
    ]);
    assert!(ft.join("checkpoint.bin").is_file());
}

#[test]
fn tsplib_conversion() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("eil51.jsonl");
    let msg = ok(&["parse-tsplib", "--input", p(&eil51()), "--agents", "10", "--out", p(&out)]);
    assert!(msg.contains("51 nodes"), "{msg}");
    let inst: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(inst["customers"].as_array().unwrap().len(), 50);
    assert_eq!(inst["depots"][0], serde_json::json!([37.0, 52.0]));

    let broken = dir.path().join("broken.tsp");
    fs::write(&broken, "NAME : x\nTYPE : TSP\nEDGE_WEIGHT_TYPE : EUC_2D\nEOF\n").unwrap();
    fails(&["parse-tsplib", "--input", p(&broken), "--agents", "2", "--out", p(&out)]);
}

#[test]
fn plot_data_series() {
    let dir = TempDir::new().unwrap();
    let a = tiny_run(dir.path(), "rotation", &[]);
    let b = tiny_run(dir.path(), "sinusoidal", &["--pe", "sinusoidal"]);
    let csv = ok(&["plot-data", "--metrics", p(&a.join("metrics.jsonl")), "--metrics", p(&b.join("metrics.jsonl"))]);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.starts_with("rotation,")).count(), 2);
    assert_eq!(rows.iter().filter(|r| r.starts_with("sinusoidal,")).count(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(2).is_some_and(|v| !v.is_empty())));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let err = fails(&["plot-data", "--metrics", p(&empty)]);
    assert!(err.contains("no epochs"), "{err}");
}
