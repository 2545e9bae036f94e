use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn shipped_text(name: &str) -> String {
    std::fs::read_to_string(shipped(name)).unwrap()
}

fn heatsteer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatsteer"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Value of `key = value` in command output.
fn reported(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from\n{text}"))
        .parse()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn shipped_configs_validate() {
    for name in ["heat_reference.toml", "semilinear_demo.toml"] {
        let out = heatsteer(&["validate", path_str(&shipped(name))]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains("valid"));
    }
}

#[test]
fn invalid_configs_exit_with_one_and_name_fields() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("semilinear_demo.toml")
        .replace("start = 1.0", "start = 1.5")
        .replace("tail = [0.4, 0.2, 0.1]", "tail = [0.4, 0.2, 0.6]");
    let cfg = write_config(&dir, "bad.toml", &text);
    let out = heatsteer(&["validate", &cfg]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("impulses:"), "{err}");
    // The tail check needs a valid schedule, so fix it and look again.
    let text = text.replace("start = 1.5", "start = 1.0");
    let cfg = write_config(&dir, "bad.toml", &text);
    let err = stderr(&heatsteer(&["validate", &cfg]));
    assert!(err.contains("steering.tail[2]"), "{err}");
}

#[test]
fn unreadable_and_unparsable_configs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&heatsteer(&["validate", path_str(&missing)])), 2);

    let cfg = write_config(&dir, "broken.toml", "[discretization]\nmodes = = 3\n");
    let out = heatsteer(&["validate", &cfg]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn grammian_reports_positive_minimum_eigenvalue() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("heat_reference.toml").replace("modes = 32", "modes = 16");
    let cfg = write_config(&dir, "ref16.toml", &text);
    let q_path = dir.path().join("q.csv");
    let out = heatsteer(&["grammian", &cfg, "--eigvals", "--out", path_str(&q_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(reported(&text, "lambda_min") > 0.0);
    assert!(text.contains("cond(alpha I + Q)"));

    let q = read_matrix(&q_path);
    assert_eq!((q.len(), q[0].len()), (16, 16));
    let ev = csv_rows(&dir.path().join("q.eigvals.csv"));
    assert_eq!(ev.len(), 16);
    let smallest: f64 = ev[0][1].parse().unwrap();
    let printed = reported(&text, "lambda_min");
    assert!((smallest - printed).abs() <= 1e-8 * printed);
}

#[test]
fn full_actuator_grammian_approaches_its_limit() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("heat_reference.toml")
        .replace("horizon = \"pi\"", "horizon = 12")
        .replace("delay = \"pi\"", "delay = 12")
        .replace(
            "actuator = [[\"pi/4\", \"pi\"]]",
            "actuator = [[0, \"pi\"]]",
        )
        .replace("tail = [\"7pi/8\"]", "tail = [10]")
        .replace("modes = 32", "modes = 4");
    let cfg = write_config(&dir, "full.toml", &text);
    let q_path = dir.path().join("q.csv");
    let out = heatsteer(&["grammian", &cfg, "--out", path_str(&q_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let matrix = read_matrix(&q_path);
    assert!((matrix[0][0] - 0.5).abs() < 1e-6);
    for (n, row) in matrix.iter().enumerate().skip(1) {
        let limit = 1.0 / (2.0 * ((n + 1) * (n + 1)) as f64);
        assert!((row[n] - limit).abs() < 1e-12);
        assert!(matrix[0][n].abs() < 1e-12);
    }
}

#[test]
fn unwritable_output_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("no_such_dir").join("q.csv");
    let out = heatsteer(&[
        "grammian",
        path_str(&shipped("heat_reference.toml")),
        "--out",
        path_str(&target),
    ]);
    assert_eq!(code(&out), 3);
    // A directory cannot be opened as a file either.
    let out = heatsteer(&[
        "grammian",
        path_str(&shipped("heat_reference.toml")),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn linear_steering_matches_prediction() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.csv");
    let traj = dir.path().join("traj.csv");
    let out = heatsteer(&[
        "steer",
        path_str(&shipped("heat_reference.toml")),
        "--linear",
        "--report-out",
        path_str(&report),
        "--traj-out",
        path_str(&traj),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let achieved = reported(&text, "achieved_error");
    let predicted = reported(&text, "predicted_error");
    assert!((achieved - predicted).abs() <= 1e-3 * predicted);
    // Nine significant digits in scientific notation.
    let line = text
        .lines()
        .find(|l| l.starts_with("achieved_error"))
        .unwrap();
    let mantissa = line.split(" = ").nth(1).unwrap().split('e').next().unwrap();
    assert_eq!(mantissa.replace(['.', '-'], "").len(), 9, "{line}");

    let rows = csv_rows(&report);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].last().unwrap(), "ok");
    let traj_text = std::fs::read_to_string(&traj).unwrap();
    assert!(traj_text.starts_with("t,segment,c_1,"));
    assert!(traj_text.lines().count() > 3000);
}

#[test]
fn zero_target_gives_zero_error() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("heat_reference.toml").replace(
        "[target]\npreset = \"sine\"\namplitude = 1.0",
        "[target]\npreset = \"zero\"",
    );
    let cfg = write_config(&dir, "zero.toml", &text);
    let out = heatsteer(&["steer", &cfg, "--linear"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(reported(&stdout(&out), "achieved_error"), 0.0);
}

#[test]
fn semilinear_demo_report_is_populated() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.csv");
    let out = heatsteer(&[
        "steer",
        path_str(&shipped("semilinear_demo.toml")),
        "--semilinear",
        "--report-out",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let header = std::fs::read_to_string(&report).unwrap();
    assert!(header
        .starts_with("alpha,l,achieved_error,linear_predicted_error,tail_perturbation,runtime_s"));
    let row = &csv_rows(&report)[0];
    for (i, name) in ["achieved", "predicted", "tail", "runtime"]
        .iter()
        .enumerate()
    {
        let v: f64 = row[2 + i].parse().unwrap();
        assert!(v > 0.0 && v.is_finite(), "{name}: {v}");
    }
}

#[test]
fn steer_requires_exactly_one_mode() {
    let cfg = shipped("heat_reference.toml");
    assert_ne!(code(&heatsteer(&["steer", path_str(&cfg)])), 0);
    assert_ne!(
        code(&heatsteer(&[
            "steer",
            path_str(&cfg),
            "--linear",
            "--semilinear"
        ])),
        0
    );
}

fn blow_up_config(dir: &TempDir) -> String {
    let text = shipped_text("semilinear_demo.toml").replace(
        "f = { preset = \"sine\", scale = 0.1 }",
        "f = { preset = \"linear\", scale = 1e300 }",
    );
    write_config(dir, "blowup.toml", &text)
}

#[test]
fn simulation_failure_exits_with_four() {
    let dir = TempDir::new().unwrap();
    let cfg = blow_up_config(&dir);
    let out = heatsteer(&["steer", &cfg, "--semilinear"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("t = "), "{}", stderr(&out));
}

#[test]
fn alpha_sweep_decreases_and_is_ordered() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("heat_reference.toml")
        .replace("alpha = [1e-3]", "alpha = [1e-2, 1e-1, 1e-3]")
        .replace("modes = 32", "modes = 16");
    let cfg = write_config(&dir, "alphas.toml", &text);
    let csv = dir.path().join("sweep.csv");
    let out = heatsteer(&["sweep", &cfg, "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 3);
    let alphas: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(alphas, vec![1e-1, 1e-2, 1e-3]);
    let errors: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn two_by_two_sweep_has_fixed_order_and_stable_bytes() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("heat_reference.toml")
        .replace("alpha = [1e-3]", "alpha = [1e-3, 1e-2]")
        .replace("tail = [\"7pi/8\"]", "tail = [\"pi/2\", \"3pi/4\"]")
        .replace("modes = 32", "modes = 8");
    let cfg = write_config(&dir, "grid.toml", &text);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = heatsteer(&["sweep", &cfg, "--out", path_str(p), "--no-timing"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let cells: Vec<(String, String)> = csv_rows(&a)
        .into_iter()
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect();
    let l = |x: f64| format!("{x:.8e}");
    let pi = std::f64::consts::PI;
    assert_eq!(
        cells,
        vec![
            (l(1e-2), l(0.75 * pi)),
            (l(1e-2), l(0.5 * pi)),
            (l(1e-3), l(0.75 * pi)),
            (l(1e-3), l(0.5 * pi)),
        ]
    );
}

#[test]
fn empty_or_failed_sweeps_exit_with_five() {
    let dir = TempDir::new().unwrap();
    let text = shipped_text("heat_reference.toml").replace("alpha = [1e-3]", "alpha = []");
    let cfg = write_config(&dir, "empty.toml", &text);
    let csv = dir.path().join("sweep.csv");
    assert_eq!(
        code(&heatsteer(&["sweep", &cfg, "--out", path_str(&csv)])),
        5
    );

    let cfg = blow_up_config(&dir);
    let out = heatsteer(&["sweep", &cfg, "--out", path_str(&csv)]);
    assert_eq!(code(&out), 5);
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.last().unwrap() != "ok"));
}
