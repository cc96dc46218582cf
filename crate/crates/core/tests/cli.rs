use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DIRAC: &str = r#"
[grid]
z_min_cm = 0.0
z_max_cm = 5.0
n_points = 1024

[physics]
v_g_cm_per_us = 1.0
kappa = 3.3
loss = { gamma_per_us = 0.3 }

[mass]
type = "constant"
delta_mhz = 0.35

[initial]
type = "gaussian"
center_plus_cm = 2.5
center_minus_cm = 2.5
width_plus_cm = 1.0
width_minus_cm = 1.0
amplitude_ratio = 0.0

[sweep]
tau_start_us = 0.0
tau_stop_us = 3.0
tau_count = 61
deltas_mhz = [0.35, 0.70]
"#;

const KINK: &str = r#"
[grid]
z_min_cm = 0.0
z_max_cm = 5.0
n_points = 512

[physics]
v_g_cm_per_us = 1.0
boundary = "outflow"

[mass]
type = "linear"
slope_mhz_per_cm = 0.745
offset_mhz = 0.35
z_ref_cm = 2.5

[overlap]
phase_points = 64
"#;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssl-dirac"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSL_DIRAC_WORKERS")
        .output()
        .unwrap()
}

fn report_value(path: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn sweep_frequency_ratio_from_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), DIRAC).unwrap();
    let out = cli(&["sweep", "--config", "run.toml", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let w0 = report_value(&o.join("oscillation_plus_0.txt"), "omega_rad_per_us");
    let w1 = report_value(&o.join("oscillation_plus_1.txt"), "omega_rad_per_us");
    assert!((w1 / w0 - 2.0).abs() <= 0.05, "{}", w1 / w0);
    let csv = fs::read_to_string(o.join("sweep_0.csv")).unwrap();
    assert!(csv.starts_with("tau_us,i_plus,i_minus,norm_total\n"));
    assert_eq!(csv.lines().count(), 62);
    assert!(o.join("manifest.toml").is_file());
}

#[test]
fn overlap_matches_half_angle_sine() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), KINK).unwrap();
    let out = cli(&["overlap", "--config", "run.toml", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/overlap.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("phi_rad,overlap"));
    for line in lines {
        let (phi, o) = line.split_once(',').unwrap();
        let (phi, o): (f64, f64) = (phi.parse().unwrap(), o.parse().unwrap());
        assert!((o - (phi / 2.0).sin().abs()).abs() < 1e-10);
    }
}

#[test]
fn unit_suffix_error_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = KINK.replace("boundary = \"outflow\"", "boundary = \"outflow\"\ngamma = 0.3");
    fs::write(dir.path().join("run.toml"), bad).unwrap();
    let out = cli(&["overlap", "--config", "run.toml", "--out-dir", "out"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("physics.gamma"), "{err}");
}

#[test]
fn failed_run_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // constant mass has no zero mode
    fs::write(dir.path().join("run.toml"), DIRAC).unwrap();
    let out = cli(&["zero-mode", "--config", "run.toml", "--out-dir", "out"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero-mode"));
    assert_eq!(fs::read_dir(dir.path().join("out")).unwrap().count(), 0);
}

#[test]
fn orientation_flag_is_recorded_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), KINK).unwrap();
    let out = cli(
        &[
            "overlap",
            "--config",
            "run.toml",
            "--out-dir",
            "a",
            "--orientation",
            "intuitive",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("a/manifest.toml")).unwrap();
    assert!(manifest.contains("orientation = \"intuitive\""));
    let out = cli(
        &["overlap", "--config", "a/manifest.toml", "--out-dir", "b"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        fs::read(dir.path().join("a/overlap.csv")).unwrap(),
        fs::read(dir.path().join("b/overlap.csv")).unwrap()
    );
}

#[test]
fn workers_env_fallback_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), KINK).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ssl-dirac"))
        .args(["overlap", "--config", "run.toml", "--out-dir", "out"])
        .current_dir(dir.path())
        .env("SSL_DIRAC_WORKERS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_ssl-dirac"))
        .args(["overlap", "--config", "run.toml", "--out-dir", "out"])
        .current_dir(dir.path())
        .env("SSL_DIRAC_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn fit_does_not_touch_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = "tau_us,i_plus,i_minus\n0,0.5,0.5\n0.25,0.4,0.38\n0.5,0.33,0.3\n0.75,0.27,0.25\n1,0.22,0.2\n";
    fs::write(dir.path().join("data.csv"), data).unwrap();
    let config = format!("{KINK}\n[fit]\ndata_path = \"data.csv\"\n");
    fs::write(dir.path().join("run.toml"), &config).unwrap();
    let out = cli(&["fit", "--config", "run.toml", "--out-dir", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("data.csv")).unwrap(), data);
    assert_eq!(fs::read_to_string(dir.path().join("run.toml")).unwrap(), config);
    let report = fs::read_to_string(dir.path().join("out/fit_report.txt")).unwrap();
    for key in ["phi_rad", "amplitude_ratio", "rms_residual", "evaluations", "converged"] {
        assert!(report.contains(&format!("{key}: ")), "{report}");
    }
    let profile = fs::read_to_string(dir.path().join("out/fit_profile.csv")).unwrap();
    assert!(profile.starts_with("phi_rad,rms_residual\n"));
    assert_eq!(profile.lines().count(), 65);
}
