use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DESK: &str = "\
encoder.hidden = 32
embed.word_dim = 32
embed.char_filters = 10
trainer.patience = 20
trainer.lr = 3e-3
coref.hidden = 32
relation.hidden = 32
";

fn hmtl(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hmtl"));
    cmd.args(args).env_remove("HMTL_SEED").env("RUST_LOG", "warn");
    if let Some(s) = seed {
        cmd.env("HMTL_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate a corpus under `root/data` and write a desk-scale config
/// pointing at it. Returns the config path.
fn setup(root: &Path, extra: &str) -> String {
    let data = root.join("data");
    let out = hmtl(&["generate-data", "--out", s(&data), "--docs", "30"], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let generated = fs::read_to_string(data.join("config.txt")).unwrap();
    let config = root.join("run.txt");
    fs::write(&config, format!("{generated}{DESK}{extra}")).unwrap();
    config.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_data_writes_splits_and_probe_tasks() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), "");
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "probe/SentLen.tsv", "probe/WC.tsv", "probe/BShift.tsv"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    let train = fs::read_to_string(dir.path().join("data/train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 24);
}

#[test]
fn train_eval_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "setup = B\ntrainer.max_updates = 400\n");
    let run = dir.path().join("run");
    let out = hmtl(&["train", "--config", &config, "--out", s(&run)], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["report.json", "metrics.json", "timing.json", "config.txt", "checkpoint/manifest.json", "final/spec.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = json(&run.join("report.json"));
    assert_eq!(report["tasks"], serde_json::json!(["ner"]));
    assert!(report["config"].as_str().unwrap().contains("encoder.dropout = 0.2"));

    // Overfit check: the checkpoint scores its own training data.
    let train = dir.path().join("data/train.jsonl");
    let ev = dir.path().join("eval");
    let out = hmtl(&["eval", "--checkpoint", s(&run), "--data", s(&train), "--out", s(&ev)], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = fs::read(ev.join("metrics.json")).unwrap();
    let metrics = json(&ev.join("metrics.json"));
    assert!(metrics["metrics"]["tasks"]["ner"]["f1"].as_f64().unwrap() >= 0.99, "{metrics}");
    assert!(metrics["model"].get("word_vocab").is_none());

    let out = hmtl(&["eval", "--checkpoint", s(&run), "--data", s(&train), "--out", s(&ev)], None);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(ev.join("metrics.json")).unwrap(), first);

    let out = hmtl(&["eval", "--checkpoint", s(&run), "--data", s(&train), "--gold-mentions", "--out", s(&ev)], None);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--gold-mentions"));

    let mismatch = dir.path().join("other.txt");
    fs::write(&mismatch, format!("{}\nencoder.hidden = 16\n", fs::read_to_string(&config).unwrap())).unwrap();
    let out = hmtl(
        &["eval", "--checkpoint", s(&run), "--data", s(&train), "--config", s(&mismatch), "--out", s(&ev)],
        None,
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));

    let pr = dir.path().join("probe");
    let out = hmtl(
        &["probe", "--checkpoint", s(&run), "--synthetic", "--layers", "g_emb-avg,g_ner", "--epochs", "50", "--out", s(&pr)],
        None,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = fs::read_to_string(pr.join("probe.tsv")).unwrap();
    assert_eq!(tsv.lines().next().unwrap(), "layer\tSentLen\tWC\tBShift");
    assert_eq!(tsv.lines().count(), 3);
    assert_eq!(json(&pr.join("probe.json"))["which"], "best");

    let out = hmtl(&["probe", "--checkpoint", s(&run), "--layers", "g_cr", "--synthetic", "--out", s(&pr)], None);
    assert_eq!(code(&out), 2);
}

#[test]
fn training_artifacts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "setup = F\ntrainer.max_updates = 60\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = hmtl(&["train", "--config", &config, "--out", s(d)], None);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for f in ["report.json", "metrics.json", "config.txt", "checkpoint/params/emb.word.f32"] {
        let (x, y) = (a.join(f), b.join(f));
        if x.exists() {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{f}");
        }
    }
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "setup = B\ntrainer.max_updates = 5\nseed = 1\n");
    let run = dir.path().join("run");
    let out = hmtl(&["train", "--config", &config, "--out", s(&run)], Some("7"));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&run.join("report.json"))["seed"], 7);
    let out = hmtl(&["train", "--config", &config, "--set", "seed=9", "--out", s(&run)], Some("7"));
    assert_eq!(code(&out), 0);
    assert_eq!(json(&run.join("metrics.json"))["seed"], 9);
    let out = hmtl(&["train", "--config", &config, "--out", s(&run)], Some("seven"));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("HMTL_SEED"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let out = hmtl(&["train", "--set", "setup=B", "--out", s(&out_dir)], None);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data.train"), "{}", stderr(&out));

    let out = hmtl(&["train", "--set", "setup=B", "--set", "data.ner.train=/no/such.conll", "--out", s(&out_dir)], None);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data.ner.train"));

    let out = hmtl(&["train", "--set", "trainer.patience=soon", "--out", s(&out_dir)], None);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("trainer.patience"));

    let out = hmtl(&["train", "--config", "/no/such/config", "--out", s(&out_dir)], None);
    assert_eq!(code(&out), 2);

    let out = hmtl(&["train", "--set", "setup=B", "--set", "gold_mentions=true", "--out", s(&out_dir)], None);
    assert_eq!(code(&out), 2);

    let out = hmtl(&["frobnicate"], None);
    assert_eq!(code(&out), 2);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"doc_id\": \"d\", \"sentences\": [[\"a\"]], \"ner\": [[0, 4, \"PER\"]]}\n").unwrap();
    let out = hmtl(&["train", "--set", "setup=B", "--set", &format!("data.train={}", s(&bad)), "--out", s(&dir.path().join("o"))], None);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("invalid document d"), "{}", stderr(&out));
}

#[test]
fn ablation_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path(), "trainer.max_updates = 30\n");
    let out = hmtl(&["ablate", "--config", &config, "--spec", "", "--out", s(&dir.path().join("e"))], None);
    assert_eq!(code(&out), 2);
    let out = hmtl(&["ablate", "--config", &config, "--spec", "B,Q", "--out", s(&dir.path().join("e"))], None);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("e").exists(), "no run may start before the spec is validated");

    let seq = dir.path().join("seq");
    let out = hmtl(&["ablate", "--config", &config, "--spec", "B,C,F,-context", "--out", s(&seq)], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(seq.join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("B\tner\t"));
    assert!(rows[3].starts_with("-context\tner,emd,re,cr\ttrue\ttrue\tfalse\t"));
    let speed = fs::read_to_string(seq.join("speed.tsv")).unwrap();
    assert_eq!(speed.lines().count(), 3, "F against B and C: {speed}");
    let ablation = json(&seq.join("ablation.json"));
    assert_eq!(ablation["runs"][3]["embed"]["context"], false);
    assert!(seq.join("03-_context/report.json").is_file());

    let par = dir.path().join("par");
    let out = hmtl(&["ablate", "--config", &config, "--spec", "B,C,F,-context", "--parallel", "--out", s(&par)], None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(par.join("ablation.tsv")).unwrap(), table);
    assert_eq!(fs::read(par.join("ablation.json")).unwrap(), fs::read(seq.join("ablation.json")).unwrap());
}
