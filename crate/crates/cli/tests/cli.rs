use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tssc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tssc"))
        .args(args)
        .output()
        .expect("run tssc")
}

fn ok(args: &[&str]) -> String {
    let out = tssc(args);
    assert!(
        out.status.success(),
        "tssc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d1.tssd");
    let gen = [
        "generate",
        "--dataset",
        "D1",
        "--params-per-map",
        "4",
        "--slices",
        "2",
        "--series-len",
        "64",
        "--seed",
        "3",
        "--out",
    ];
    ok(&[&gen[..], &[p(&data)]].concat());
    let again = dir.path().join("again.tssd");
    ok(&[&gen[..], &[p(&again)]].concat());
    assert_eq!(fs::read(&data).unwrap(), fs::read(&again).unwrap());

    let images = dir.path().join("img");
    ok(&[
        "encode", "--method", "tssc", "--grid", "16", "--in", p(&data), "--out", p(&images), "--quadrant", "dp",
    ]);
    // 9 maps x 2 parameters per quadrant x 2 slices
    assert_eq!(fs::read_dir(&images).unwrap().count(), 36);

    let model = dir.path().join("m.tssm");
    let metrics = dir.path().join("metrics.csv");
    ok(&[
        "train",
        "--classifier",
        "tssc",
        "--train-quadrant",
        "base",
        "--epochs",
        "2",
        "--grid",
        "16",
        "--data",
        p(&data),
        "--out",
        p(&model),
        "--metrics",
        p(&metrics),
    ]);
    let csv = fs::read_to_string(&metrics).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,split,loss,accuracy\n1,train,"));

    let report = ok(&[
        "eval",
        "--model",
        p(&model),
        "--test-quadrant",
        "ns-dp",
        "--data",
        p(&data),
        "--classifier",
        "tssc",
    ]);
    let acc: f64 = report.lines().next().unwrap().strip_prefix("accuracy,").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report.lines().count(), 2 + 9);

    let missing = tssc(&["eval", "--model", p(&model), "--test-quadrant", "dp", "--data", p(&data)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--classifier"));
}

#[test]
fn series_model_needs_no_classifier_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d0.tssd");
    ok(&[
        "generate", "--dataset", "d0", "--params-per-map", "4", "--series-len", "40", "--out", p(&data),
    ]);
    let model = dir.path().join("ts.tssm");
    ok(&[
        "train", "--classifier", "ts", "--epochs", "1", "--data", p(&data), "--out", p(&model),
    ]);
    let report = ok(&["eval", "--model", p(&model), "--test-quadrant", "dp", "--data", p(&data)]);
    assert!(report.starts_with("accuracy,"));
}

#[test]
fn render_figures_writes_eighteen_images() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["render-figures", "--out", p(dir.path()), "--grid", "32"]);
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 18);
    assert!(names.contains(&"logistic-tssc.pgm".to_string()));
    let pgm = fs::read(dir.path().join("cat-dcr.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), 13 + 32 * 32);
}

#[test]
fn bad_arguments_are_rejected() {
    for args in [
        &["generate", "--dataset", "D6", "--out", "x"][..],
        &["encode", "--method", "gaf", "--in", "a", "--out", "b"],
        &["train", "--classifier", "resnet", "--data", "a", "--out", "b"],
        &["experiment", "--id", "e4"],
        &["experiment", "--id", "e1", "--scale", "huge"],
    ] {
        let out = tssc(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = tssc(&["eval", "--model", "/nonexistent.tssm", "--test-quadrant", "dp", "--data", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.tssm"));
}

#[test]
fn corrupt_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.tssd");
    fs::write(&path, b"NOPE").unwrap();
    let out = tssc(&[
        "train", "--classifier", "ts", "--data", p(&path), "--out", p(&dir.path().join("m")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.tssd"));
}

#[test]
fn experiment_writes_report_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e1.csv");
    let cache = dir.path().join("cache");
    ok(&[
        "experiment",
        "--id",
        "e1",
        "--params-per-map",
        "4",
        "--epochs",
        "1",
        "--cache-dir",
        p(&cache),
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("experiment,trial,i,classifier,accuracy"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6 * 3);
    assert!(rows.iter().all(|r| r.starts_with("e1_control_params,dp,")));
    assert!(fs::read_dir(&cache).unwrap().count() > 0);
}
