use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eshdr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eshdr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch eshdr")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn metrics(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn metric(m: &[(String, String)], key: &str) -> String {
    m.iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no {key} in {m:?}"))
        .1
        .clone()
}

const SMALL_STATIC: &str = "[scene]\nmotion_bound = 0.0\n\n[scene.synthetic]\nwidth = 32\nheight = 32\n\n[bracket]\nnoise_a = 0.0\nnoise_b = 0.0\n";

fn static_run(dir: &Path) -> Output {
    fs::write(dir.join("static.toml"), SMALL_STATIC).unwrap();
    eshdr(dir, &["--config", "static.toml", "--out", "run", "pipeline"])
}

#[test]
fn static_pipeline_is_near_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let out = static_run(dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for stage in ["scene", "bracket", "events", "deblur", "align", "fuse", "tonemap", "evaluate"] {
        assert!(dir.path().join("run").join(stage).is_dir(), "missing {stage}/");
    }
    assert!(dir.path().join("run/manifest.toml").is_file());
    let text = fs::read_to_string(dir.path().join("run/evaluate/metrics.txt")).unwrap();
    let psnr: f64 = metric(&metrics(&text), "mu_psnr").parse().unwrap();
    assert!(psnr >= 50.0, "mu_psnr {psnr}");
}

#[test]
fn evaluate_file_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    assert!(static_run(dir.path()).status.success());
    let out = eshdr(dir.path(), &["evaluate", "run/fuse/hdr.pfm", "run/fuse/hdr.pfm"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = metrics(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(metric(&m, "mu_psnr"), "inf");
    assert_eq!(metric(&m, "mu_ssim").parse::<f64>().unwrap(), 1.0);

    let out = eshdr(dir.path(), &["evaluate", "--json", "run/fuse/hdr.pfm", "run/fuse/hdr.pfm"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mu_ssim"].as_f64(), Some(1.0));
}

#[test]
fn corrupt_event_file_names_file_and_magic() {
    let dir = tempfile::tempdir().unwrap();
    assert!(static_run(dir.path()).status.success());
    let path = dir.path().join("run/events/events.eshdr");
    let mut bytes = fs::read(&path).unwrap();
    bytes[..8].copy_from_slice(b"GARBAGE!");
    fs::write(&path, bytes).unwrap();
    let out = eshdr(dir.path(), &["--config", "static.toml", "--out", "run", "deblur"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("events.eshdr"), "{err}");
    assert!(err.contains("ESHDR1"), "{err}");
    assert!(err.contains("byte 0"), "{err}");
}

#[test]
fn truncated_pfm_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.pfm"), b"PF\nxx\n").unwrap();
    let out = eshdr(dir.path(), &["evaluate", "bad.pfm", "bad.pfm"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("bad.pfm"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.toml"), "[scene]\nmotion_bund = 0.1\n").unwrap();
    let out = eshdr(dir.path(), &["--config", "typo.toml", "pipeline"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("motion_bund"), "{err}");
    assert!(err.contains("typo.toml"), "{err}");
}

#[test]
fn bad_arguments_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = eshdr(dir.path(), &["--threads", "0", "pipeline"]);
    assert_eq!(out.status.code(), Some(2));
    let out = eshdr(dir.path(), &["evaluate", "only-one.pfm"]);
    assert_eq!(out.status.code(), Some(2));
}
