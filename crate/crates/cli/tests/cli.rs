use std::process::Command;

fn mlctx(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mlctx")).args(args).output().unwrap()
}

#[test]
fn shapes_prints_the_multilevel_table() {
    let out = mlctx(&["shapes", "--preset", "alexnet-full++"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("fc6") && l.contains("640x6x6")), "{text}");
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().display().to_string();
    let common = [
        "--preset", "alexnet-mini", "--seed", "3", "--train-size", "64", "--val-size", "16", "--epochs", "1",
        "--init", "normalized", "--input-scale", "0.0625", "--out", &out_dir,
    ];
    let train = mlctx(&[&["train"], &common[..]].concat());
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(dir.path().join("train_log.csv").is_file());
    assert!(dir.path().join("checkpoint.mlck").is_file());
    let eval = mlctx(&[&["eval", "--eval-mode", "center"], &common[..]].concat());
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn missing_seed_and_unknown_keys_fail() {
    let out = mlctx(&["train", "--preset", "alexnet-mini"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = mlctx(&["train", "--seed", "1", "--set", "colour=red"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}
