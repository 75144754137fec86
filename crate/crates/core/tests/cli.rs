//! End-to-end checks of the `tempagg` executable.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tempagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempagg"))
        .args(args)
        .env_remove("TEMPAGG_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen_tiny(dir: &Path) {
    let out = tempagg(&[
        "gen-data", "--actors", "4", "--clips-per-actor", "3", "--frames", "24", "--height", "12", "--width", "12",
        "--seed", "3", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

const TINY_MODEL: &[&str] = &["--segments", "2", "--epochs", "1", "--batch-size", "4", "--spec-height", "12", "--spec-width", "12"];

#[test]
fn help_lists_flags_with_defaults() {
    let out = tempagg(&["cv", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--data", "--folds", "--segments", "--seed", "--out", "--workers", "--epochs", "--config", "--paper-dims"] {
        assert!(text.contains(flag), "missing {flag} in\n{text}");
    }
    assert!(text.contains("[default: 4]"));
    assert!(tempagg(&["--help"]).status.success());
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["frobnicate"][..], &["cv", "--bogus"], &[]] {
        let out = tempagg(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(stderr(&out).starts_with("error: usage: "), "{}", stderr(&out));
    }
}

#[test]
fn runtime_errors_exit_two_with_a_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = tempagg(&["cv", "--data", missing.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error: io: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let out = tempagg(&["gen-data", "--actors", "0", "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: invalid-argument: "));
}

#[test]
fn gen_data_writes_manifest_and_clips() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    assert!(dir.path().join("manifest.json").is_file());
    let clips = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(clips, 12);
    let resolved = fs::read_to_string(dir.path().join("config_resolved.txt")).unwrap();
    assert!(resolved.contains("actors=4\n") && resolved.contains("seed=3\n"));
}

#[test]
fn inspect_writes_a_pgm_of_the_configured_size() {
    let dir = tempfile::tempdir().unwrap();
    gen_tiny(dir.path());
    let pgm = dir.path().join("spec.pgm");
    let out = tempagg(&[
        "inspect", "--clip", dir.path().join("clip_000").to_str().unwrap(), "--segment", "2", "--spec-height", "20",
        "--spec-width", "30", "--out", pgm.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = fs::read(&pgm).unwrap();
    let header = b"P5\n30 20\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 600);
}

#[test]
fn cv_is_reproducible_from_its_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny(&data);
    let run_a = dir.path().join("a");
    let mut args = vec!["cv", "--data", data.to_str().unwrap(), "--folds", "2", "--seed", "5", "--out", run_a.to_str().unwrap()];
    args.extend_from_slice(TINY_MODEL);
    let out = tempagg(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["cv_results.json", "confusion.csv", "history_fold0.csv", "history_fold1.csv", "model_fold1.tagg", "config_resolved.txt"] {
        assert!(run_a.join(f).is_file(), "missing {f}");
    }

    // the resolved file alone reproduces the run, apart from the output directory
    let run_b = dir.path().join("b");
    let cfg = run_a.join("config_resolved.txt");
    let out = tempagg(&["cv", "--config", cfg.to_str().unwrap(), "--out", run_b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(run_a.join("cv_results.json")).unwrap(), fs::read(run_b.join("cv_results.json")).unwrap());
    assert_eq!(fs::read(run_a.join("model_fold0.tagg")).unwrap(), fs::read(run_b.join("model_fold0.tagg")).unwrap());

    // checkpoints load back for evaluation
    let model = run_a.join("model_fold0.tagg");
    let mut args = vec!["eval", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--fold", "0", "--folds", "2", "--seed", "5"];
    args.extend_from_slice(TINY_MODEL);
    let out = tempagg(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("accuracy "));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tempagg"))
        .args(["gen-data", "--actors", "2", "--clips-per-actor", "1", "--frames", "24", "--height", "4", "--width", "4"])
        .arg("--out")
        .arg(dir.path())
        .env("TEMPAGG_SEED", "41")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let resolved = fs::read_to_string(dir.path().join("config_resolved.txt")).unwrap();
    assert!(resolved.contains("seed=41\n"), "{resolved}");
}

#[test]
fn sweep_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny(&data);
    let run = dir.path().join("sweep");
    let mut args = vec!["sweep", "--data", data.to_str().unwrap(), "--segments-list", "1,2", "--folds", "2", "--out", run.to_str().unwrap()];
    args.extend(TINY_MODEL.iter().skip(2));
    let out = tempagg(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("N,mean_acc,std_acc,wall_s"));
    assert_eq!(csv.lines().count(), 3);
    assert!(fs::read_to_string(run.join("sweep.svg")).unwrap().contains("<polyline"));
}
