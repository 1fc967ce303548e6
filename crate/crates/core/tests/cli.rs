use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gazekit::harness::read_samples_csv;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazekit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "tsv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

fn overall(report_csv: &Path) -> f64 {
    let text = fs::read_to_string(report_csv).unwrap();
    let line = text.lines().find(|l| l.starts_with("overall,")).unwrap();
    line.split(',').nth(3).unwrap().parse().unwrap()
}

#[test]
fn pipeline_is_deterministic_and_report_recomputes_the_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for name in ["a", "b"] {
        ok(&["synth", "--persons", "3", "--samples", "30", "--seed", "7", "--out-dir", name], d);
    }
    let archive = tree(&d.join("a"));
    assert!(archive.len() > 100);
    assert_eq!(archive, tree(&d.join("b")));

    for name in ["e1", "e2"] {
        ok(
            &["eval", "--protocol", "lopo", "--train", "a", "--estimator", "knn", "--seed", "3", "--fuse-eyes", "--out-dir", name],
            d,
        );
    }
    let e1 = csv_files(&d.join("e1"));
    assert!(e1.iter().any(|(n, _)| n == "fusion.csv"));
    assert_eq!(e1, csv_files(&d.join("e2")));
    assert!(d.join("e1/plots/per_person.svg").exists());
    let config = fs::read_to_string(d.join("e1/run-config.txt")).unwrap();
    assert!(config.contains("estimator=knn") && config.contains("reference only"));

    ok(&["report", "--samples", "e1/samples.csv", "--out-dir", "r"], d);
    let results = read_samples_csv(d.join("e1/samples.csv")).unwrap();
    let recomputed = results.iter().map(|r| r.error_deg).sum::<f64>() / results.len() as f64;
    assert!((overall(&d.join("e1/report.csv")) - recomputed).abs() < 1e-12);
    assert!((overall(&d.join("r/report.csv")) - recomputed).abs() < 1e-12);
}

#[test]
fn cross_protocol_with_grid_and_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--persons", "2", "--samples", "20", "--seed", "1", "--out-dir", "tr"], d);
    ok(&["synth", "--persons", "1", "--samples", "20", "--seed", "2", "--out-dir", "te"], d);
    let args = [
        "eval", "--protocol", "cross", "--train", "tr", "--test", "te", "--estimator", "linear", "--resolutions", "30x18,15x9",
        "--out-dir",
    ];
    for name in ["g1", "g2"] {
        let mut a = args.to_vec();
        a.push(name);
        ok(&a, d);
    }
    assert_eq!(csv_files(&d.join("g1")), csv_files(&d.join("g2")));
    let grid = fs::read_to_string(d.join("g1/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 5);

    let train = [
        "train", "--train", "tr", "--estimator", "cnn", "--iterations", "3", "--batch-size", "4", "--input-size", "15x9",
        "--seed", "5", "--out-dir",
    ];
    for name in ["m1", "m2"] {
        let mut a = train.to_vec();
        a.push(name);
        ok(&a, d);
    }
    assert_eq!(fs::read(d.join("m1/model.gkm")).unwrap(), fs::read(d.join("m2/model.gkm")).unwrap());
    assert_eq!(csv_files(&d.join("m1")), csv_files(&d.join("m2")));
}

#[test]
fn raw_frames_normalize_to_the_same_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--persons", "2", "--samples", "5", "--seed", "4", "--raw-dir", "raw", "--out-dir", "a"], d);
    ok(&["normalize", "--input", "raw", "--out-dir", "n"], d);
    assert_eq!(tree(&d.join("a")), tree(&d.join("n")));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--persons", "1", "--samples", "5", "--out-dir", "one"], d);
    let out = run(&["eval", "--protocol", "lopo", "--train", "one", "--estimator", "mean", "--out-dir", "e"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 persons"));

    assert_eq!(run(&["eval", "--no-such-flag"], d).status.code(), Some(1));
    assert_eq!(run(&["synth", "--persons", "0", "--out-dir", "z"], d).status.code(), Some(1));
    assert_eq!(run(&["eval", "--train", "missing", "--out-dir", "e"], d).status.code(), Some(1));
    let cross = ["eval", "--protocol", "cross", "--train", "one", "--out-dir", "e"];
    assert_eq!(run(&cross, d).status.code(), Some(1));
    assert_eq!(run(&["--help"], d).status.code(), Some(0));

    // An unwritable output location is a runtime failure.
    fs::write(d.join("file"), "x").unwrap();
    let out = run(&["eval", "--protocol", "lopo", "--train", "one", "--estimator", "mean", "--out-dir", "file/sub"], d);
    assert_eq!(out.status.code(), Some(1), "still one person");
    ok(&["synth", "--persons", "2", "--samples", "5", "--out-dir", "two"], d);
    let out = run(&["eval", "--train", "two", "--estimator", "mean", "--out-dir", "file/sub"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
