use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn volterra(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volterra")).args(args).arg("--out-dir").arg(out).output().expect("binary runs")
}

fn config(name: &str) -> String {
    configs_dir().join(name).to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn rotation_conserves_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["run", &config("rotation.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("rotation.csv"));
    assert_eq!(header, ["t", "x1", "x2"]);
    assert_eq!(rows.len(), 4001);
    for r in &rows {
        assert!((r[1] * r[1] + r[2] * r[2] - 1.0).abs() < 1e-8);
    }
    let (stm_header, stm_rows) = read_csv(&dir.path().join("rotation_stm.csv"));
    assert_eq!(stm_header, ["t", "phi11", "phi12", "phi21", "phi22"]);
    let last = &stm_rows[stm_rows.len() - 1];
    assert!((last[1] - 1.0).abs() < 1e-9 && last[2].abs() < 1e-9);
}

#[test]
fn escape_exits_with_blowup_and_names_last_finite_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["run", &config("quadratic_escape.toml")], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let report = std::fs::read_to_string(dir.path().join("quadratic_escape.report.txt")).unwrap();
    let line = report.lines().find(|l| l.starts_with("last finite time = ")).unwrap();
    let t: f64 = line.trim_start_matches("last finite time = ").parse().unwrap();
    assert!(t > 0.99 && t < 1.01, "{t}");
    assert!(!dir.path().join("quadratic_escape.csv").exists());
}

#[test]
fn garbled_configs_exit_one_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "").unwrap();
    let out = volterra(&["run", empty.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("initial"));

    let garbled = dir.path().join("garbled.toml");
    std::fs::write(&garbled, "initial = [1.0]\n[system\nkind = 3\n").unwrap();
    let out = volterra(&["run", garbled.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");

    let bad_expr = dir.path().join("bad_expr.toml");
    let text = std::fs::read_to_string(configs_dir().join("pendulum.toml")).unwrap().replace("-sin(x1)", "-sin(x1");
    std::fs::write(&bad_expr, text).unwrap();
    let out = volterra(&["run", bad_expr.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("system.field[1]") && err.contains("line"), "{err}");

    let out = volterra(&["run", dir.path().join("missing.toml").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = volterra(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_constant_matrix_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["verify", &config("rotation.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("matrix-exponential vs peano-baker"));
    assert!(report.contains("status = all checks passed"));
    assert!(dir.path().join("rotation.report.verify.txt").exists());
}

#[test]
fn verify_refuses_non_commuting_family() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["verify", &config("noncommuting.toml")], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("refused"));
    let out = volterra(&["run", &config("noncommuting.toml")], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_zero_matrix_has_exactly_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["verify", &config("zero_matrix.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = String::from_utf8_lossy(&out.stdout).into_owned();
    let table: Vec<&str> =
        report.lines().skip_while(|l| *l != "[residuals]").skip(2).take_while(|l| !l.is_empty()).collect();
    assert!(table.len() >= 10);
    for row in table {
        assert!(row.contains(" 0.000e0 "), "{row}");
    }
}

#[test]
fn rtol_override_and_seed_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["run", &config("commuting_sine.toml"), "--rtol", "1e-8", "--seed", "42"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("commuting_sine.report.txt")).unwrap();
    assert!(report.contains("rtol = 1.000e-8"));
    assert!(report.contains("seed = 42"));
    assert!(report.contains("route = commuting"));
    let out = volterra(&["run", &config("commuting_sine.toml"), "--rtol", "5"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn nonlinear_reports_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["run", &config("pendulum.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("pendulum.report.txt")).unwrap();
    let order = ["[run]", "[route]", "[convergence]", "[certificates]", "[oracle]", "[status]"];
    let pos: Vec<usize> = order.iter().map(|s| report.find(s).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert!(report.contains("contraction holds = false"));
    assert!(report.contains("envelope e^(l T) = 2.009e1"));
}

#[test]
fn impulses_show_in_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["run", &config("kicked_oscillator.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let (_, rows) = read_csv(&dir.path().join("kicked_oscillator.csv"));
    // the kick at t = 1 adds 0.5 to x2 between neighbouring samples
    let k = rows.iter().position(|r| r[0] == 1.0).unwrap();
    let jump = rows[k][2] - rows[k - 1][2];
    assert!((jump - 0.5).abs() < 0.01, "{jump}");
    assert!(dir.path().join("kicked_oscillator_stm.csv").exists());
}

#[test]
fn sqrt_field_reports_non_uniqueness() {
    let dir = tempfile::tempdir().unwrap();
    let out = volterra(&["run", &config("sqrt_field.toml")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("sqrt_field.report.txt")).unwrap();
    assert!(report.contains("non-uniqueness flagged = true"), "{report}");
    let (_, rows) = read_csv(&dir.path().join("sqrt_field.csv"));
    assert!(rows.iter().all(|r| r[1] == 0.0));
}
