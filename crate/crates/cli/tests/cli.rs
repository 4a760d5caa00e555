use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pairfeat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairfeat"))
        .args(args)
        .env_remove("PAIRFEAT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// 10 x 8 frames and a single-stage model so a full run takes a second.
const TINY: &str = r#"
[frontend]
frame_seconds = 0.64
hop_fraction = 0.5
stft_window = 2048
stft_hop = 1024
mel_bins = 8

[model]
code_channels = 4
hidden_channels = []
frame_time = 10
frame_mel = 8

[training]
batch_size = 4
stage1_epochs = 2
stage2_epochs = 1
baseline_epochs = 3

[evaluation]
kmeans_restarts = 3

[evaluation.classifier]
epochs = 50

[evaluation.tsne]
perplexity = 3.0
iterations = 150
"#;

fn synth_tiny(dir: &Path) -> String {
    let data = dir.join("data");
    let d = data.to_str().unwrap();
    ok(&pairfeat(&["synth", "--per-class", "4", "--seconds", "2.56", "--seed", "7", "--out", d]));
    d.to_string()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_corpus_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = pairfeat(&["synth", "--classes", "4", "--per-class", "3", "--seconds", "1", "--seed", "7", "--out", out.to_str().unwrap()]);
        ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("wrote 12 clips"));
    }
    let mut n = 0;
    for class in ["tone", "chirp", "noise_burst", "clicks"] {
        for entry in fs::read_dir(a.join(class)).unwrap() {
            let p = entry.unwrap().path();
            let q = b.join(class).join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
            n += 1;
        }
    }
    assert_eq!(n, 12);
    // existing tree without --overwrite
    assert!(!pairfeat(&["synth", "--per-class", "3", "--seconds", "1", "--out", a.to_str().unwrap()]).status.success());
}

#[test]
fn synth_rejects_zero_classes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairfeat(&["synth", "--classes", "0", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = pairfeat(&[
        "train", "--config", "/nonexistent/run.toml", "--mode", "baseline",
        "--data", dir.path().to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn train_evaluate_compare_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());
    let cfg = write_config(dir.path());
    let prepared = dir.path().join("prepared");
    ok(&pairfeat(&["prepare", "--config", &cfg, "--data", &data, "--out", prepared.to_str().unwrap()]));

    let mut reports = Vec::new();
    for (mode, source) in [("baseline", data.clone()), ("pairloss", prepared.to_str().unwrap().to_string())] {
        let run = dir.path().join(mode);
        let r = run.to_str().unwrap();
        ok(&pairfeat(&["train", "--config", &cfg, "--mode", mode, "--data", &source, "--out", r, "--seed", "3"]));
        let log = fs::read_to_string(run.join("training_log.csv")).unwrap();
        let stages: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        if mode == "baseline" {
            assert_eq!(stages, ["mse", "mse", "mse"]);
        } else {
            assert_eq!(stages, ["mse", "mse", "mse+pair"]);
        }
        for f in ["checkpoint.pfck", "normalization.json", "config.toml", "manifest.json"] {
            assert!(run.join(f).is_file(), "{f}");
        }
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["complete"], true);

        let ev = run.join("eval");
        ok(&pairfeat(&[
            "evaluate", "--checkpoint", run.join("checkpoint.pfck").to_str().unwrap(),
            "--data", &source, "--out", ev.to_str().unwrap(), "--config", &cfg, "--seed", "3",
        ]));
        for f in ["report.json", "confusion.csv", "embedding.csv", "tsne.png", "distributions.png"] {
            assert!(ev.join(f).is_file(), "{f}");
        }
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
        for key in ["classifier_accuracy", "clustering_accuracy"] {
            let v = report[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        reports.push(ev.join("report.json"));
    }

    let table = dir.path().join("cmp.csv");
    let o = pairfeat(&["compare", reports[0].to_str().unwrap(), reports[1].to_str().unwrap(), "--out", table.to_str().unwrap()]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("w/o PairLoss") && text.contains("w/ PairLoss") && text.contains("clustering"));
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 3);

    let o = pairfeat(&["compare", reports[0].to_str().unwrap(), reports[0].to_str().unwrap()]);
    ok(&o);
    let delta = String::from_utf8_lossy(&o.stdout).lines().last().unwrap().to_string();
    assert_eq!(delta.matches("+0.00%").count(), 2, "{delta}");
}

#[test]
fn evaluate_is_deterministic_and_rejects_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    ok(&pairfeat(&["train", "--config", &cfg, "--mode", "pairloss", "--data", &data, "--out", run.to_str().unwrap()]));
    let ckpt = run.join("checkpoint.pfck");
    let mut reports = Vec::new();
    for i in 0..2 {
        let ev = dir.path().join(format!("eval{i}"));
        ok(&pairfeat(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", &data, "--out", ev.to_str().unwrap(), "--config", &cfg, "--seed", "11"]));
        reports.push(fs::read(ev.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let bytes = fs::read(&ckpt).unwrap();
    let bad = dir.path().join("bad.pfck");
    fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let o = pairfeat(&["evaluate", "--checkpoint", bad.to_str().unwrap(), "--data", &data, "--out", dir.path().join("e").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn resume_finishes_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_tiny(dir.path());
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();
    ok(&pairfeat(&["train", "--config", &cfg, "--mode", "pairloss", "--data", &data, "--out", r, "--seed", "1"]));
    let full = fs::read(run.join("checkpoint.pfck")).unwrap();
    // resuming a finished run is a no-op on the weights
    ok(&pairfeat(&["train", "--config", &cfg, "--mode", "pairloss", "--data", &data, "--out", r, "--seed", "1", "--resume"]));
    assert_eq!(fs::read(run.join("checkpoint.pfck")).unwrap(), full);
    // different mode against the same checkpoint
    assert!(!pairfeat(&["train", "--config", &cfg, "--mode", "baseline", "--data", &data, "--out", r, "--seed", "1", "--resume"]).status.success());
}

#[test]
fn compare_rejects_malformed_report() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"classifier_accuracy\": ").unwrap();
    let o = pairfeat(&["compare", bad.to_str().unwrap(), bad.to_str().unwrap()]);
    assert!(!o.status.success());
}
