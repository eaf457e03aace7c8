use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_docbinformer"));
    cmd.env_remove("DOCBINFORMER_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--years",
        "2016,2017",
        "--per-year",
        "2",
        "--size",
        "40",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

const TINY: &str = "[model]\npreset = tiny\ntile_size = 32\n\n[train]\nlearning_rate = 1e-2\nbatch_size = 2\nepochs = 2\n";

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for cmd in ["train", "binarize", "eval", "ablate", "baseline"] {
        assert!(stdout(&out).contains(cmd), "{cmd}");
    }
    assert_eq!(run(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "[train]\nlearning_rte = 0.1\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--dataset",
        "x",
        "--year",
        "2017",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("train.learning_rte"),
        "{}",
        stderr(&out)
    );

    let out = run(&["eval", "--baseline", "otsu", "--set", "model.colour=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model.colour"));
}

#[test]
fn bad_arguments_and_environment_are_usage_errors() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&["eval", "--dataset", "x", "--year", "2017"])
            .status
            .code(),
        Some(2)
    );
    let out = bin()
        .env("DOCBINFORMER_THREADS", "zero")
        .args([
            "baseline", "--method", "otsu", "--input", "a.png", "--output", "b.png",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("DOCBINFORMER_THREADS"));
}

#[test]
fn unknown_ablation_row_is_a_usage_error() {
    let out = run(&["ablate", "--rows", "7", "--dataset", "x", "--year", "2017"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ablation row 7"), "{}", stderr(&out));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "eval",
        "--baseline",
        "otsu",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--year",
        "2017",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let missing = dir.path().join("none.png");
    let out = run(&[
        "baseline",
        "--method",
        "otsu",
        "--input",
        missing.to_str().unwrap(),
        "--output",
        "o.png",
    ]);
    assert_eq!(out.status.code(), Some(3));
    synth(dir.path());
    let out = run(&[
        "eval",
        "--baseline",
        "otsu",
        "--dataset",
        dir.path().to_str().unwrap(),
        "--year",
        "1999",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("2016"), "{}", stderr(&out));
}

#[test]
fn baselines_on_a_synthetic_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let csv = dir.path().join("scores.csv");
    let out = bin()
        .env("DOCBINFORMER_THREADS", "2")
        .args([
            "eval",
            "--baseline",
            "sauvola",
            "--dataset",
            data.to_str().unwrap(),
            "--year",
            "2017",
        ])
        .args(["--csv", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("mean"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("sample_id,year,psnr,fm,fps,drd"));
    assert_eq!(text.lines().count(), 4);

    let input = data.join("2017/degraded/2017_000.png");
    let output = dir.path().join("otsu.pgm");
    let out = run(&[
        "baseline",
        "--method",
        "otsu",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(std::fs::read(&output)
        .unwrap()
        .starts_with(b"P5\n40 40\n255\n"));
    let out = run(&[
        "baseline",
        "--method",
        "sauvola",
        "--window",
        "4",
        "--input",
        input.to_str().unwrap(),
        "--output",
        "x.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn train(data: &Path, out_dir: &Path, cfg: &str, extra: &[&str]) -> Output {
    bin()
        .args([
            "train",
            "--config",
            cfg,
            "--dataset",
            data.to_str().unwrap(),
            "--year",
            "2017",
            "--seed",
            "3",
        ])
        .args(["--output-dir", out_dir.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn train_is_deterministic_and_resumable_then_binarize_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );

    let out = train(&data, &a, &cfg, &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(train(&data, &b, &cfg, &[]).status.success());
    let log_a = std::fs::read_to_string(a.join("loss_log.csv")).unwrap();
    assert_eq!(
        log_a,
        std::fs::read_to_string(b.join("loss_log.csv")).unwrap()
    );
    // Two 40px documents give 4 tiles each at 32px: 8 tiles, 4 steps per epoch.
    assert_eq!(log_a.lines().count(), 1 + 2 * 4);
    assert_eq!(
        std::fs::read(a.join("final.ckpt")).unwrap(),
        std::fs::read(b.join("final.ckpt")).unwrap()
    );

    let half = train(&data, &c, &cfg, &["--epochs", "1"]);
    assert!(half.status.success(), "{}", stderr(&half));
    let resumed = train(
        &data,
        &c,
        &cfg,
        &["--resume", c.join("final.ckpt").to_str().unwrap()],
    );
    assert!(resumed.status.success(), "{}", stderr(&resumed));
    assert_eq!(
        std::fs::read_to_string(c.join("loss_log.csv")).unwrap(),
        log_a
    );

    let ckpt = a.join("final.ckpt");
    let input = data.join("2017/degraded/2017_001.png");
    let output = dir.path().join("pred.png");
    let out = run(&[
        "binarize",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(output.exists());

    let saved = dir.path().join("preds");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--year",
        "2017",
        "--save-dir",
        saved.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("2017_000"));
    assert!(saved.join("2017_001.png").exists());

    let other = dir.path().join("other.cfg");
    std::fs::write(
        &other,
        TINY.replace("tile_size = 32", "tile_size = 32\nglobal_dim = 32"),
    )
    .unwrap();
    let out = train(
        &data,
        &dir.path().join("d"),
        other.to_str().unwrap(),
        &["--resume", ckpt.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("patch_embed.weight"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn ablate_runs_a_capped_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let csv = dir.path().join("ablation.csv");
    let out = run(&[
        "ablate",
        "--rows",
        "4",
        "--max-steps",
        "1",
        "--dataset",
        data.to_str().unwrap(),
        "--year",
        "2017",
        "--set",
        "model.tile_size=32",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("4,16,4,256,256,6,4,"));
}
