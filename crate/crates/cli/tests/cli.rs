use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn regkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regkit")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn phantom_writes_a_graymap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ramp.pgm");
    let status = regkit(&["phantom", "ramp", "4", "1", out.to_str().unwrap()]);
    assert!(status.status.success());
    assert_eq!(fs::read(&out).unwrap(), b"P5\n4 1\n255\n\x00\x55\xaa\xff".to_vec());

    let status = regkit(&["phantom", "spiral", "4", "4", out.to_str().unwrap()]);
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn restore_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.conf",
        "input = phantom:blocks\nwidth = 24\nheight = 24\npenalizer = grad2\nseed = 3\noutput_dir = out\n",
    );
    let out = regkit(&["restore", "run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("relative L2 error"));
    for name in ["f_true.pgm", "g_blurred.pgm", "g_noisy.pgm", "f_restored.pgm", "metrics.csv", "lcurve.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name} missing");
    }
}

#[test]
fn restore_lcurve_reports_corner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lc.conf", "width = 16\nheight = 16\nalpha_count = 10\noutput_dir = lc\n");
    let out = regkit(&["restore", "lcurve", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("corner alpha"));
    let csv = fs::read_to_string(dir.path().join("lc/lcurve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn stability_run_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "st.conf", "count = 10\nperturb = data,weights\n");
    let out = regkit(&["stability", "run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("n,delta_y,delta_alpha_max,error,q4_bound,n3_residual\n"));
    assert!(stdout.contains("passed = true"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.conf", "colour = blue\n");
    assert_eq!(regkit(&["restore", "run", &bad]).status.code(), Some(2));
    let missing = dir.path().join("absent.conf");
    assert_eq!(regkit(&["restore", "run", missing.to_str().unwrap()]).status.code(), Some(2));
    let neg = write(dir.path(), "neg.conf", "noise_level = -0.5\n");
    assert_eq!(regkit(&["restore", "run", &neg]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    // a constant image leaves the L-curve without any turn
    let dir = tempfile::tempdir().unwrap();
    let mut flat = b"P5\n8 8\n255\n".to_vec();
    flat.extend([128u8; 64]);
    fs::write(dir.path().join("flat.pgm"), flat).unwrap();
    let cfg = write(dir.path(), "flat.conf", "input = flat.pgm\nnoise_level = 0\npenalizer = grad2\n");
    let out = regkit(&["restore", "run", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
