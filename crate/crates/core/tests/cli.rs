//! The command-line interface: outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn deepdof(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepdof"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

#[test]
fn generators_write_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, stem, extra) in [
        ("gen-mlr", "mlr", vec!["--n", "30"]),
        ("gen-deep", "deep", vec!["--n", "20"]),
        ("gen-xor", "xor", vec!["--replicas", "2"]),
    ] {
        let mut args = vec![cmd, "--seed", "4"];
        args.extend(extra);
        let out = deepdof(&args, dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let csv = std::fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
        assert!(csv.starts_with("x1,"), "{stem}");
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(format!("{stem}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 4);
        assert_eq!(manifest["generator_hash"].as_str().unwrap().len(), 64);
    }
    assert!(dir.path().join("deep_test.csv").exists());
}

#[test]
fn single_model_dof_on_a_csv_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&deepdof(&["gen-mlr", "--n", "40", "--p", "3", "--k", "3"], dir.path())), 0);
    let data = dir.path().join("mlr.csv");
    let out = deepdof(
        &["dof", "--kind", "identity", "--data", data.to_str().unwrap(), "--replicates", "3"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let df: f64 = row[headers.iter().position(|h| h == "df").unwrap()].parse().unwrap();
    // Identity replicates are ‖B‖², so their mean is n(k−1) only in expectation.
    assert!((df - 80.0).abs() < 80.0 * 0.5, "{df}");
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&deepdof(&["no-such-command"], dir.path())), 1);
    assert_eq!(code(&deepdof(&["dof", "--no-such-flag"], dir.path())), 1);
    assert_eq!(code(&deepdof(&["dof", "--kind", "mean", "--n", "20", "--replicates", "0"], dir.path())), 1);
    assert_eq!(code(&deepdof(&["cv", "--kind", "mean", "--n", "20", "--folds", "1"], dir.path())), 1);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&deepdof(&["dof", "--data", missing.to_str().unwrap()], dir.path())), 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,label\n0.5,notanumber\n").unwrap();
    assert_eq!(code(&deepdof(&["dof", "--data", bad.to_str().unwrap()], dir.path())), 2);
    let bad_idx = dir.path().join("bad.idx");
    std::fs::write(&bad_idx, [0u8, 0, 8, 1]).unwrap();
    let p = bad_idx.to_str().unwrap();
    assert_eq!(code(&deepdof(&["dof", "--mnist-images", p, "--mnist-labels", p], dir.path())), 2);
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepdof(
        &["dof", "--n", "40", "--width", "3", "--depth", "1", "--epochs", "2", "--lr", "1e300"],
        dir.path(),
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cv_report_has_cross_validated_deviance() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepdof(&["cv", "--kind", "mean", "--n", "50", "--folds", "5"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let row = rdr.records().next().unwrap().unwrap();
    let cv: f64 = row[headers.iter().position(|h| h == "cv_mean_deviance").unwrap()].parse().unwrap();
    assert!(cv > 0.0 && cv.is_finite());
}
