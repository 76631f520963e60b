//! Builds a C program against the generated header and the shared library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// `target/<profile>/deps`, where cargo also places the cdylib.
fn deps_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(manifest_dir().join("include/eshdr.h")).unwrap();
    let source = std::fs::read_to_string(manifest_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from eshdr.h");
    }
}

#[cfg(target_os = "linux")]
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let deps = deps_dir();
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c/smoke.c"))
        .arg("-o")
        .arg(&exe)
        .arg(format!("-L{}", deps.display()))
        .arg(format!("-Wl,-rpath,{}", deps.display()))
        .arg("-leshdr_ffi")
        .arg("-lm")
        .status()
        .unwrap_or_else(|e| panic!("cannot run {cc}: {e}"));
    assert!(status.success(), "C build failed");
    let out = Command::new(&exe).arg(dir.path().join("b.pfm")).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
