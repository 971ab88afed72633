//! End-to-end tests of the `mbhx` binary: flag handling, file outputs,
//! determinism, and exit codes (0 success, 1 usage, 2 I/O, 3 numeric).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mbhx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mbhx"))
}

fn run(args: &[&str]) -> Output {
    mbhx().args(args).output().expect("binary runs")
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn synth(dir: &Path, split: &str, count: usize, exact: bool) {
    let mut cmd = mbhx();
    cmd.args([
        "synth", "--seed", "9", "--split", split, "--extent", "32x32", "--count",
    ])
    .arg(count.to_string())
    .arg("--out")
    .arg(dir);
    if exact {
        cmd.arg("--exact");
    }
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_layout_and_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let (d1, d2) = (root.path().join("a"), root.path().join("b"));
    for d in [&d1, &d2] {
        synth(d, "train", 3, true);
    }
    for file in [
        "manifest.json",
        "train/sample_000000/image.png",
        "train/sample_000000/alpha.png",
        "train/sample_000000/fg.png",
        "train/sample_000000/bg.png",
        "train/sample_000002/image.tsr",
    ] {
        assert!(d1.join(file).exists(), "missing {file}");
    }
    let (s1, s2) = (snapshot(&d1), snapshot(&d2));
    assert_eq!(s1, s2, "synth reruns differ");
}

#[test]
fn synth_rejects_indivisible_extent_with_usage_exit() {
    let root = tempfile::tempdir().unwrap();
    let out = mbhx()
        .args(["synth", "--seed", "1", "--count", "1", "--split", "train", "--extent", "40x40"])
        .arg("--out")
        .arg(root.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible by 16"));
}

#[test]
fn unknown_subcommand_and_missing_data_exit_codes() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1), "usage errors exit 1");

    let out = run(&["eval", "--ckpt", "/nonexistent.ckpt", "--data", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(2), "I/O errors exit 2");
}

#[test]
fn gradcheck_passes_and_detects_injected_fault() {
    let out = run(&["gradcheck", "--seed", "42"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all gradient checks passed"));

    let out = run(&["gradcheck", "--seed", "42", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(3), "numeric failures exit 3");
}

/// One pipeline pass: synth → train → eval → extract, checking the
/// emitted files agree with each other.
#[test]
fn train_eval_extract_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    synth(&data, "train", 4, true);
    synth(&data, "test", 2, true);

    // Train model 4 briefly; reruns must be byte-identical.
    let (ck1, ck2) = (root.path().join("a.ckpt"), root.path().join("b.ckpt"));
    for ck in [&ck1, &ck2] {
        let out = mbhx()
            .args([
                "train", "--model", "4", "--epochs", "2", "--seed", "3",
                "--base-channels", "4", "--batch-size", "2",
            ])
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(ck)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(&ck1).unwrap(),
        std::fs::read(&ck2).unwrap(),
        "training reruns differ"
    );
    assert!(ck1.with_extension("log.jsonl").exists());

    // Evaluate: prints the two-section table and valid JSON.
    let report_path = root.path().join("eval.json");
    let out = mbhx()
        .args(["eval", "--split", "test"])
        .arg("--ckpt")
        .arg(&ck1)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Alpha prediction"));
    assert!(stdout.contains("Foreground prediction"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["rows"][0]["model_id"], 4);

    // Extract with a new background.
    let image = data.join("test/sample_000000/image.png");
    let new_bg = data.join("test/sample_000001/bg.png");
    let out_dir = root.path().join("extracted");
    let out = mbhx()
        .args(["extract"])
        .arg("--ckpt")
        .arg(&ck1)
        .arg("--in")
        .arg(&image)
        .arg("--out-dir")
        .arg(&out_dir)
        .arg("--new-bg")
        .arg(&new_bg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let alpha = mbhx::io::read_image(&out_dir.join("alpha.png")).unwrap();
    let foreground = mbhx::io::read_image(&out_dir.join("foreground.png")).unwrap();
    let extracted = mbhx::io::read_image(&out_dir.join("extracted.png")).unwrap();
    let recomposed = mbhx::io::read_image(&out_dir.join("recomposed.png")).unwrap();
    assert_eq!(alpha.channels(), 1);
    assert_eq!(extracted.channels(), 3);

    // extracted == alpha * foreground up to the PNG quantization of the
    // three files involved.
    let plane = 32 * 32;
    for c in 0..3 {
        for i in 0..plane {
            let expect = alpha.data()[i] * foreground.data()[c * plane + i];
            let got = extracted.data()[c * plane + i];
            assert!(
                (got - expect).abs() < 2.0 / 255.0,
                "extracted mismatch at c{c} i{i}: {got} vs {expect}"
            );
        }
    }

    // recomposed == composite(foreground, new_bg, alpha) up to quantization.
    let bg = mbhx::io::read_image(&new_bg).unwrap();
    let expected = mbhx::compositing::recompose_onto(&alpha, &foreground, &bg).unwrap();
    for (got, expect) in recomposed.data().iter().zip(expected.data()) {
        assert!((got - expect).abs() < 2.0 / 255.0);
    }

    // Naive extraction differs from the emitted hand wherever the matte
    // is fractional and B != F.
    let observed = mbhx::io::read_image(&image).unwrap();
    let naive = mbhx::compositing::extract_naive(&alpha, &observed).unwrap();
    let differing = naive
        .data()
        .iter()
        .zip(extracted.data())
        .filter(|(n, e)| (*n - *e).abs() > 4.0 / 255.0)
        .count();
    assert!(differing > 0, "alpha*I coincided with alpha*F everywhere");

    // Extent not divisible by 16 is rejected with pad/crop advice.
    let odd = root.path().join("odd.png");
    mbhx::io::write_image(&odd, &mbhx::compositing::ImageBuffer::filled(40, 40, 3, 0.5).unwrap())
        .unwrap();
    let out = mbhx()
        .args(["extract"])
        .arg("--ckpt")
        .arg(&ck1)
        .arg("--in")
        .arg(&odd)
        .arg("--out-dir")
        .arg(root.path().join("nope"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pad or crop"), "{stderr}");
}
