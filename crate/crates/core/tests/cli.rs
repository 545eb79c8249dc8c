use std::path::Path;
use std::process::{Command, Output};

fn cftnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cftnet"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn synth_is_deterministic_and_oracle_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(&cftnet(&["synth", "--count", "6", "--seed", "3", "--out", out], d));
    }
    assert_eq!(read(d.join("a/annotations.csv")), read(d.join("b/annotations.csv")));
    assert_eq!(read(d.join("a/images/face_00004.png")), read(d.join("b/images/face_00004.png")));

    let stdout = ok(&cftnet(&["eval", "--dataset", "a", "--oracle", "--out", "oracle.csv"], d));
    assert!(stdout.contains("0.00"), "{stdout}");
    let same = ok(&cftnet(&["compare", "--a", "oracle.csv", "--b", "oracle.csv"], d));
    assert!(same.contains("mean"), "{same}");
}

#[test]
fn augment_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cftnet(&["synth", "--count", "2", "--out", "src"], d));
    std::fs::write(
        d.join("aug.toml"),
        "rotation_angles = [0.0, 5.0]\ntranslation_offsets = [[0.0, 0.0]]\ncompression_qualities = [90]\n",
    )
    .unwrap();
    ok(&cftnet(&["augment", "--dataset", "src", "--config", "aug.toml", "--out", "aug"], d));
    let manifest = String::from_utf8(read(d.join("aug/manifest.csv"))).unwrap();
    assert!(manifest.starts_with("image,source_index,source,aug_index,angle_deg,dx,dy,flipped,quality"));
    assert_eq!(manifest.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn train_both_algorithms_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cftnet(&["synth", "--count", "40", "--seed", "1", "--split", "24,8,8", "--out", "data"], d));
    std::fs::write(
        d.join("train.toml"),
        r#"seed = 5
[data]
train = "data/train"
validation = "data/val"
test = "data/test"
[network]
block_channels = [4, 4, 4, 8]
fc_units = 16
[schedule]
k = 2
max_epochs_per_stage = 2
[schedule.optimizer]
learning_rate = 1e-4
batch_size = 8
"#,
    )
    .unwrap();
    for algo in ["cft", "dt"] {
        ok(&cftnet(&["train", "--config", "train.toml", "--algo", algo, "--out", algo], d));
        for f in ["final.ckpt", "train_log.csv", "steps.csv", "eval_report.csv", "config.toml"] {
            assert!(d.join(algo).join(f).is_file(), "{algo}/{f} missing");
        }
    }
    let log = String::from_utf8(read(d.join("cft/train_log.csv"))).unwrap();
    assert!(log.starts_with("stage,lambda,epoch,learning_rate,train_loss,val_loss"));
    assert_eq!(log.lines().count(), 1 + 4);

    let table = ok(&cftnet(
        &["compare", "--a", "dt/eval_report.csv", "--b", "cft/eval_report.csv", "--labels", "DT,CFT"],
        d,
    ));
    assert!(table.contains("DT") && table.contains("CFT"), "{table}");

    ok(&cftnet(&["predict", "--dataset", "data/test", "--checkpoint", "cft/final.ckpt", "--out", "pred"], d));
    let via_table = ok(&cftnet(&["eval", "--dataset", "data/test", "--predictions", "pred/predictions.csv"], d));
    let via_ckpt = ok(&cftnet(&["eval", "--dataset", "data/test", "--checkpoint", "cft/final.ckpt"], d));
    assert_eq!(via_table, via_ckpt);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| cftnet(args, d).status.code();

    // clap usage errors
    assert_eq!(code(&["eval"]), Some(2));
    // dataset path that does not exist
    assert_eq!(code(&["eval", "--dataset", "nowhere", "--oracle"]), Some(2));
    // split that does not add up
    assert_eq!(code(&["synth", "--count", "5", "--split", "1,1,1", "--out", "s"]), Some(2));

    ok(&cftnet(&["synth", "--count", "3", "--out", "ds"], d));
    std::fs::write(d.join("bad.toml"), "[data]\ntrain = \"ds\"\n[schedule]\nlambda0 = 1.5\n").unwrap();
    assert_eq!(code(&["train", "--config", "bad.toml"]), Some(3));
    std::fs::write(d.join("garbage.ckpt"), b"not a checkpoint").unwrap();
    let c = code(&["eval", "--dataset", "ds", "--checkpoint", "garbage.ckpt"]);
    assert!(matches!(c, Some(4) | Some(6)), "{c:?}");

    std::fs::remove_file(d.join("ds/images/face_00001.png")).unwrap();
    assert_eq!(code(&["eval", "--dataset", "ds", "--oracle"]), Some(4));
}
