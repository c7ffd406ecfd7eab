use std::path::Path;
use std::process::{Command, Output};

fn todmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_todmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = todmt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "model": {"model_dim": 16, "n_layers": 1},
  "train": {"lm_epochs": 1, "mt_epochs": 1, "lr": 0.003}
}"#;

/// Synthesizes both domains and trains the tiny config into `dir/run`.
fn tiny_run(dir: &Path) {
    for domain in ["furniture", "fashion"] {
        let out = dir.join(format!("{domain}.jsonl"));
        ok(&["synth", "--seed", "1", "--n", "3", "--domain", domain, "--out", p(&out)]);
    }
    std::fs::write(dir.join("tiny.json"), TINY).unwrap();
    ok(&[
        "train",
        "--config",
        p(&dir.join("tiny.json")),
        "--furniture",
        p(&dir.join("furniture.jsonl")),
        "--fashion",
        p(&dir.join("fashion.jsonl")),
        "--out-dir",
        p(&dir.join("run")),
    ]);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let stdout = ok(&["synth", "--seed", "4", "--n", "5", "--domain", "fashion", "--out", p(out)]);
        assert!(stdout.contains("mean turns"), "{stdout}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 5);
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    let r = todmt(&["synth", "--n", "0", "--domain", "furniture", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
    assert_eq!(todmt(&["synth", "--n", "2", "--domain", "garden", "--out", p(&out)]).status.code(), Some(1));
    assert_eq!(todmt(&["fly"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"warmup_steps": 10}}"#).unwrap();
    let r = todmt(&["train", "--config", p(&cfg), "--out-dir", p(&dir.path().join("run"))]);
    assert_eq!(r.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.contains("train") && stderr.contains("warmup_steps"), "{stderr}");
}

#[test]
fn multi_domain_needs_both_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let furn = dir.path().join("furniture.jsonl");
    ok(&["synth", "--n", "2", "--domain", "furniture", "--out", p(&furn)]);
    let r = todmt(&["train", "--furniture", p(&furn), "--out-dir", p(&dir.path().join("run"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--fashion"));
}

#[test]
fn train_eval_generate_round() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(dir.path());
    let run = dir.path().join("run");
    for f in ["config.json", "vocab.json", "intents.json", "run.json", "train_log.jsonl", "ckpt-0.bin", "ckpt-1.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ckpt = run.join("ckpt-1.bin");
    let report = dir.path().join("report.json");
    let preds = dir.path().join("preds.jsonl");
    let table = ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--corpus",
        p(&dir.path().join("furniture.jsonl")),
        "--corpus",
        p(&dir.path().join("fashion.jsonl")),
        "--report",
        p(&report),
        "--predictions",
        p(&preds),
    ]);
    assert!(table.starts_with("Model | Act. Acc."), "{table}");
    assert!(table.contains("[furniture]") && table.contains("[fashion]"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["overall"]["joint_accuracy"].is_number());
    let corpus_turns: usize = ["furniture", "fashion"]
        .iter()
        .map(|d| {
            std::fs::read_to_string(dir.path().join(format!("{d}.jsonl")))
                .unwrap()
                .lines()
                .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["turns"].as_array().unwrap().len())
                .sum::<usize>()
        })
        .sum();
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), corpus_turns);

    let first = std::fs::read_to_string(dir.path().join("fashion.jsonl")).unwrap();
    let id = serde_json::from_str::<serde_json::Value>(first.lines().next().unwrap()).unwrap()["dialogue_id"]
        .as_str()
        .unwrap()
        .to_string();
    let corpus = dir.path().join("fashion.jsonl");
    let turn = format!("{id}:0");
    let out = ok(&["generate", "--ckpt", p(&ckpt), "--corpus", p(&corpus), "--turn", &turn]);
    for field in ["belief:", "action:", "attributes:", "response:"] {
        assert!(out.contains(field), "{out}");
    }
    let off = ok(&["generate", "--ckpt", p(&ckpt), "--corpus", p(&corpus), "--turn", &turn, "--gt-action", "off"]);
    assert!(off.contains("response:"));

    let r = todmt(&["generate", "--ckpt", p(&ckpt), "--corpus", p(&corpus), "--turn", "no-such-dialogue:0"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no-such-dialogue"));
    let r = todmt(&["generate", "--ckpt", p(&ckpt), "--corpus", p(&corpus), "--turn", &format!("{id}:99")]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn repeated_training_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    tiny_run(a.path());
    tiny_run(b.path());
    let files = |d: &Path| {
        let mut names: Vec<_> = std::fs::read_dir(d.join("run"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        names
    };
    assert_eq!(files(a.path()), files(b.path()));
    for name in files(a.path()) {
        let read = |d: &Path| std::fs::read(d.join("run").join(&name)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{name:?}");
    }
}
