use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn uts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uts")).args(args).output().expect("run uts")
}

fn ok(args: &[&str]) -> String {
    let out = uts(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn strip_oracles(src: &Path, dst: &Path) {
    let lines: Vec<String> = fs::read_to_string(src)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("oracle");
            v.to_string()
        })
        .collect();
    fs::write(dst, lines.join("\n") + "\n").unwrap();
}

fn oracles(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["oracle"].clone())
        .collect()
}

#[test]
fn synth_and_make_oracle_agree() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.jsonl");
    let bare = dir.path().join("bare.jsonl");
    let labelled = dir.path().join("labelled.jsonl");
    ok(&["synth", "--n", "20", "--seed", "4", "--out", p(&synth)]);
    strip_oracles(&synth, &bare);
    assert!(oracles(&bare).iter().all(|o| o.is_null()));
    ok(&["make-oracle", "--input", p(&bare), "--output", p(&labelled)]);
    assert_eq!(oracles(&labelled), oracles(&synth));
}

#[test]
fn train_evaluate_summarize_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, run) = (dir.path().join("train.jsonl"), dir.path().join("val.jsonl"), dir.path().join("run"));
    ok(&["synth", "--n", "6", "--seed", "1", "--out", p(&train)]);
    ok(&["synth", "--n", "3", "--seed", "2", "--out", p(&val)]);
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, "# tiny\nhidden_dim = 8\nlocal_dim = 8\nembed_dim = 4\nkey_dim = 4\nglobal_dim = 8\n").unwrap();
    let summary = ok(&[
        "train", "--train", p(&train), "--val", p(&val), "--desk", "--config", p(&cfg), "--set", "max_epochs=3",
        "--set", "beam=2", "--out", p(&run),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["epochs"], 3);
    let ckpts: Vec<String> =
        summary["checkpoints"].as_array().unwrap().iter().map(|c| c["path"].as_str().unwrap().to_string()).collect();
    assert!(!ckpts.is_empty() && ckpts.len() <= 3);
    assert!(fs::read_to_string(run.join("config.txt")).unwrap().contains("hidden_dim = 8"));
    let log = run.join("losses.csv");
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 4);

    let mut args = vec!["evaluate", "--corpus", p(&val), "--max-len", "10"];
    for c in &ckpts {
        args.extend(["--checkpoint", c.as_str()]);
    }
    let report: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(report["examples"], 3);
    assert_eq!(report["checkpoints"].as_array().unwrap().len(), ckpts.len());

    for mode in ["abs", "ext"] {
        let out = ok(&["summarize", "--corpus", p(&val), "--checkpoint", &ckpts[0], "--mode", mode, "--max-len", "10"]);
        let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l["mode"] == mode));
    }

    let maps = dir.path().join("maps");
    let stdout = ok(&["analyze", "time-attention", "--checkpoint", &ckpts[0], "--corpus", p(&val), "--out", p(&maps)]);
    assert!(stdout.contains("center of mass"));
    let trend: serde_json::Value = serde_json::from_str(&fs::read_to_string(maps.join("trend.json")).unwrap()).unwrap();
    assert_eq!(trend["time_attention"]["examples"], 3);
    let pi = fs::read_to_string(maps.join("synth-2-0.pi.csv")).unwrap();
    let mut rows = pi.lines();
    assert!(rows.next().unwrap().starts_with("step,token,event0"));
    for row in rows {
        let sum: f64 = row.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{row}");
    }
    ok(&["analyze", "two-level", "--checkpoint", &ckpts[0], "--corpus", p(&val), "--out", p(&maps), "--limit", "1"]);
    for suffix in ["alpha", "beta", "gamma"] {
        assert!(maps.join(format!("synth-2-0.{suffix}.csv")).exists());
    }
    assert!(!maps.join("synth-2-1.alpha.csv").exists());

    let svg = dir.path().join("losses.svg");
    ok(&["analyze", "plot-losses", "--log", p(&log), "--out", p(&svg)]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn gradcheck_passes_quickly() {
    let start = Instant::now();
    let out = ok(&["gradcheck"]);
    assert!(start.elapsed().as_secs() < 60);
    assert!(out.contains("PASS"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(uts(&["--bogus"]).status.code(), Some(1));
    assert_eq!(uts(&["synth", "--n", "x", "--out", "a"]).status.code(), Some(1));
    assert_eq!(uts(&["--help"]).status.code(), Some(0));
    let train = dir.path().join("t.jsonl");
    ok(&["synth", "--n", "2", "--out", p(&train)]);
    let run = dir.path().join("run");
    assert_eq!(uts(&["train", "--train", p(&train), "--set", "no_such_key=1", "--out", p(&run)]).status.code(), Some(1));
    assert_eq!(uts(&["train", "--train", p(&missing), "--desk", "--out", p(&run)]).status.code(), Some(2));
    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "{not json\n").unwrap();
    assert_eq!(uts(&["make-oracle", "--input", p(&garbage), "--output", p(&missing)]).status.code(), Some(2));
    assert_eq!(uts(&["gradcheck", "--tolerance", "1e-30"]).status.code(), Some(3));
}
