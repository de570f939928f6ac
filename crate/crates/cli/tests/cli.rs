use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracident"))
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("fracident-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn identify_writes_trajectory_and_summary() {
    let dir = tmp("identify");
    let out = bin()
        .args(["identify", "--problem", "II", "--n-elem", "64", "--out"])
        .arg(dir.join("run.csv"))
        .env("FRACIDENT_THREADS", "1")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("h,N,s,delta,iterations,evaluations"));
    assert!(stdout.contains("PASS converged"));
    let traj = std::fs::read_to_string(dir.join("run.csv")).unwrap();
    assert!(traj.contains("# n_elem=64"));
    assert!(dir.join("run_summary.csv").exists());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn flags_override_config_file() {
    let dir = tmp("config");
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, "# coarse run\nproblem=I\nn_elem=32\nmax_iter=1\n").unwrap();
    // one iteration cannot converge: the check fails with exit code 1
    let out = bin()
        .arg("identify")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL converged"));
    let out = bin()
        .arg("identify")
        .arg("--config")
        .arg(&cfg)
        .args(["--max-iter", "100"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn invalid_input_is_reported() {
    let out = bin()
        .args(["identify", "--problem", "III"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = bin()
        .args(["gradcheck", "--s-min", "0.9", "--s-max", "0.1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn convergence_subcommand_reports_rates() {
    let out = bin()
        .args(["convergence", "--problem", "I", "--levels", "3,4,5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("h,N,error_Hs,error_Hs_exact,error_L2,rate_Hs,rate_L2"));
    assert!(stdout.contains("PASS energy rate"));
}
