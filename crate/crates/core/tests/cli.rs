mod common;

use std::path::Path;
use std::process::{Command, Output};

use qtmt_fast::ddff::{load_dataset, save_dataset, synthetic_rule_dataset};
use qtmt_fast::frame_io::save_yuv;
use serde_json::Value;

fn qtmt(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qtmt-fast"));
    cmd.args(args);
    for (flag, p) in paths {
        cmd.arg(flag).arg(p);
    }
    cmd.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn small_clip(dir: &Path) -> std::path::PathBuf {
    let clip = common::pan(&common::camera(), (40, 300), (3, -2), (96, 64), 3);
    let p = dir.join("clip.yuv");
    save_yuv(&p, &clip).unwrap();
    p
}

#[test]
fn train_is_reproducible_and_learns_the_synthetic_rule() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rule.dds");
    save_dataset(&data, &synthetic_rule_dataset(6000, 11)).unwrap();
    let train = |name: &str| {
        let out = dir.path().join(name);
        ok(&qtmt(&["train", "--seed", "4", "--epochs", "8"], &[("--data", &data), ("--out", &out)]));
        std::fs::read(out).unwrap()
    };
    let a = train("a.ddff");
    assert_eq!(a, train("b.ddff"));

    let model = dir.path().join("a.ddff");
    let report = dir.path().join("eval.json");
    let o = qtmt(&["eval-model"], &[("--data", &data), ("--model", &model), ("--report", &report)]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("exact-match accuracy"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert!(v["exact_match_accuracy"].as_f64().unwrap() > 0.95, "{v}");
    assert_eq!(v["total"], 6000);
}

#[test]
fn collect_then_encode_with_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let clip = small_clip(dir.path());
    let data = dir.path().join("clip.dds");
    let geometry = ["--width", "96", "--height", "64", "--ctu", "32"];

    let mut args = vec!["collect", "--qps", "27,37"];
    args.extend(geometry);
    ok(&qtmt(&args, &[("--input", &clip), ("--out", &data)]));
    let samples = load_dataset(&data).unwrap();
    // two predicted frames per Qp, every 8×8 block whose map is complete
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|s| (1..=6).contains(&s.label)));

    let model = dir.path().join("m.ddff");
    ok(&qtmt(&["train", "--epochs", "2"], &[("--data", &data), ("--out", &model)]));

    let report = dir.path().join("enc.json");
    let mut args = vec!["encode", "--qp", "32", "--mode", "full", "--no-timing"];
    args.extend(geometry);
    ok(&qtmt(&args, &[("--input", &clip), ("--model", &model), ("--report", &report)]));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["frames"].as_array().unwrap().len(), 3);
    assert_eq!(v["depth_cap_violations"], 0);
    assert!(v["totals"]["psnr"].as_f64().unwrap() > 25.0);
}

#[test]
fn usage_errors_are_one_line_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let clip = small_clip(dir.path());
    type Case<'a> = (&'a [&'a str], Vec<(&'a str, &'a Path)>);
    let cases: [Case; 5] = [
        (&["encode", "--width", "96", "--height", "64", "--qp", "32", "--mode", "oracle"], vec![("--input", Path::new("/nonexistent.yuv"))]),
        (&["encode", "--width", "96", "--height", "64", "--qp", "32", "--mode", "ddff"], vec![("--input", &clip)]),
        (&["encode", "--width", "0", "--height", "64", "--qp", "32", "--mode", "oracle"], vec![("--input", &clip)]),
        (&["encode", "--width", "96", "--height", "64", "--qp", "32", "--bogus"], vec![("--input", &clip)]),
        (&["encode", "--width", "96", "--height", "64"], vec![("--input", &clip)]),
    ];
    for (args, paths) in cases {
        let o = qtmt(args, &paths);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("qtmt-fast: "));
    }
}

#[test]
fn truncated_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.yuv");
    std::fs::write(&p, vec![0u8; 96 * 64 + 10]).unwrap();
    let o = qtmt(&["encode", "--width", "96", "--height", "64", "--qp", "32", "--mode", "oracle", "--no-timing"], &[("--input", &p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame 0"));
}
