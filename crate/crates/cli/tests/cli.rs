//! End-to-end checks of the command-line surface: flag handling, exit
//! codes, and artifact layout.

use std::path::Path;
use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emoembed"))
}

fn write_dataset(path: &Path, n: usize) {
    let mut lines = String::new();
    for i in 0..n {
        let v = -2.0 + (i % 5) as f64;
        let a = -2.0 + (i % 4) as f64;
        lines.push_str(&format!(
            "{{\"neutral_prompt\":\"scene {i}\",\"emotional_prompt\":\"vivid scene {i}\",\
             \"valence\":{v},\"arousal\":{a},\"source_id\":\"id{i}\"}}\n"
        ));
    }
    std::fs::write(path, lines).unwrap();
}

const CFG: &str = "[model]\nnum_blocks = 1\nd_model = 4\nd_prompt = 8\nl = 3\nnum_heads = 1\n\
                   d_ffn = 8\nmlp_hidden = 8\n\n[train]\nlearning_rate = 1e-3\n\
                   weight_decay = 0.0\nepochs = 2\nbatch_size = 8\nseed = 1\n\
                   checkpoint_every = 0\n\n[train.loss]\nalpha = 1.0\nmin_density = 1e-4\n";

#[test]
fn train_produces_artifacts_and_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, 20);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CFG).unwrap();
    let out = dir.path().join("run");
    let status = cli()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in [
        "checkpoint_final.ckpt",
        "trainer_state.ckpt",
        "density.txt",
        "metrics.jsonl",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn out_of_range_va_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(
        &data,
        "{\"neutral_prompt\":\"a\",\"emotional_prompt\":\"b\",\"valence\":0.0,\"arousal\":0.0}\n\
         {\"neutral_prompt\":\"c\",\"emotional_prompt\":\"d\",\"valence\":7.5,\"arousal\":0.0}\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let result = cli()
        .args(["train", "--dataset"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line 2"), "stderr was: {stderr}");
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let status = cli()
        .args(["train", "--dataset"])
        .arg(dir.path().join("nope.jsonl"))
        .arg("--out")
        .arg(dir.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn unknown_flag_exits_2() {
    let status = cli().args(["train", "--bogus"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn bad_sweep_step_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // Checkpoint errors would mask the sweep validation, so train first.
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, 12);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CFG).unwrap();
    let run = dir.path().join("run");
    assert_eq!(
        cli()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--dataset")
            .arg(&data)
            .arg("--out")
            .arg(&run)
            .status()
            .unwrap()
            .code(),
        Some(0)
    );
    let status = cli()
        .args(["sweep", "--checkpoint"])
        .arg(run.join("checkpoint_final.ckpt"))
        .arg("--out")
        .arg(dir.path().join("sweep"))
        .args(["--start", "-3", "--stop", "3", "--step", "0.7"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "step must divide the span");
}

#[test]
fn empty_prompt_sweep_works_and_eval_scores_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, 12);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CFG).unwrap();
    let run = dir.path().join("run");
    assert_eq!(
        cli()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--dataset")
            .arg(&data)
            .arg("--out")
            .arg(&run)
            .status()
            .unwrap()
            .code(),
        Some(0)
    );
    let sweep = dir.path().join("sweep");
    let status = cli()
        .args(["sweep", "--checkpoint"])
        .arg(run.join("checkpoint_final.ckpt"))
        .arg("--out")
        .arg(&sweep)
        .args(["--axis", "arousal", "--start", "-2", "--stop", "2", "--step", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0), "empty-prompt sweep must run");
    assert!(sweep.join("index.json").exists());
    assert!(sweep.join("point_000_000.png").exists());

    let eval = dir.path().join("eval");
    let status = cli()
        .args(["eval", "--sweep-dir"])
        .arg(&sweep)
        .arg("--out")
        .arg(&eval)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(eval.join("report.jsonl").exists());
    assert!(eval.join("table.txt").exists());
}

#[test]
fn sweep_with_emotion_preset_sets_fixed_coordinate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, 12);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CFG).unwrap();
    let run = dir.path().join("run");
    assert_eq!(
        cli()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--dataset")
            .arg(&data)
            .arg("--out")
            .arg(&run)
            .status()
            .unwrap()
            .code(),
        Some(0)
    );
    let sweep = dir.path().join("sweep");
    let status = cli()
        .args(["sweep", "--checkpoint"])
        .arg(run.join("checkpoint_final.ckpt"))
        .arg("--out")
        .arg(&sweep)
        .args([
            "--axis", "valence", "--start", "-1", "--stop", "1", "--step", "1", "--emotion",
            "anger",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sweep.join("index.json")).unwrap()).unwrap();
    // anger sits at (-2, 2); a valence sweep holds arousal at 2.
    assert_eq!(index["fixed"].as_f64().unwrap(), 2.0);
    assert_eq!(index["entries"][0]["a"].as_f64().unwrap(), 2.0);

    let status = cli()
        .args(["sweep", "--checkpoint"])
        .arg(run.join("checkpoint_final.ckpt"))
        .arg("--out")
        .arg(dir.path().join("sweep2"))
        .args(["--emotion", "no-such-emotion"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "unknown preset name must fail validation");
}

#[test]
fn rerun_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, 12);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CFG).unwrap();
    let run = dir.path().join("run");
    assert_eq!(
        cli()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--dataset")
            .arg(&data)
            .arg("--out")
            .arg(&run)
            .status()
            .unwrap()
            .code(),
        Some(0)
    );
    // Tamper with the dataset after the fact.
    write_dataset(&data, 13);
    let status = cli()
        .args(["rerun", "--manifest"])
        .arg(run.join("manifest.json"))
        .arg("--out")
        .arg(dir.path().join("run2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3), "changed inputs must be rejected");
}

#[test]
fn eval_rejects_corrupt_index() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    std::fs::create_dir_all(&sweep).unwrap();
    std::fs::write(sweep.join("index.json"), "{not json").unwrap();
    let status = cli()
        .args(["eval", "--sweep-dir"])
        .arg(&sweep)
        .arg("--out")
        .arg(dir.path().join("eval"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
