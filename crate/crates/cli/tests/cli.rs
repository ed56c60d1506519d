use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rothe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rothe")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SCALAR: &str = r#"{
    "problem": {"kind": "system", "gram_v": [[1.0]], "gram_h": [[1.0]], "trace": [[1.0]], "gram_u": [[1.0]],
                "a": [[2.0]], "laws": [{"law": "zero"}]},
    "load": {"kind": "polynomial", "coefficients": [[1.0, -3.0]]},
    "initial": {"u0": [0.25], "w0": [0.5]},
    "ladder": [5, 10]
}"#;

#[test]
fn scalar_run_matches_closed_form_recursion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scalar.json", SCALAR);
    let out = rothe(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // j = 0, A = 2, B = 0, f(t) = 1 - 3t: cell means combine to f(τ/2) then f(t_n)
    let (alpha, tau, n_steps) = (2.0, 0.1, 10);
    let f = |t: f64| 1.0 - 3.0 * t;
    let mut w = vec![0.5];
    let mut u = vec![0.25];
    w.push((tau * f(tau / 2.0) + w[0]) / (1.0 + tau * alpha));
    u.push(u[0] + tau * w[1]);
    for n in 2..=n_steps {
        let t = n as f64 * tau;
        w.push((tau * f(t) + 2.0 * w[n - 1] - 0.5 * w[n - 2]) / (1.5 + tau * alpha));
        u.push(2.0 / 3.0 * (tau * w[n] + 2.0 * u[n - 1] - 0.5 * u[n - 2]));
    }

    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["t_n", "u_0", "w_0", "xi_0", "residual"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), n_steps + 1);
    for (n, row) in rows.iter().enumerate() {
        let un: f64 = row[1].parse().unwrap();
        let wn: f64 = row[2].parse().unwrap();
        assert!((un - u[n]).abs() <= 1e-12, "u at {n}: {un} vs {}", u[n]);
        assert!((wn - w[n]).abs() <= 1e-12, "w at {n}: {wn} vs {}", w[n]);
    }
    for name in ["bounds.csv", "solver_trace.csv", "report.txt"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("w_norm.svg").exists());
}

#[test]
fn zero_problem_gives_zero_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCALAR
        .replace(r#""coefficients": [[1.0, -3.0]]"#, r#""coefficients": [[0.0]]"#)
        .replace(r#""u0": [0.25], "w0": [0.5]"#, r#""u0": [0.0], "w0": [0.0]"#);
    let cfg = write_config(dir.path(), "zero.json", &text);
    let out = rothe(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--plots"]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    for row in rdr.records() {
        let row = row.unwrap();
        for cell in row.iter().skip(1).filter(|c| !c.is_empty()) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
        }
    }
    for name in ["w_norm.svg", "u_norm.svg", "residuals.svg"] {
        let svg = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "{name}");
    }
}

#[test]
fn rod_run_residuals_small() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("rod_study.json")).unwrap();
    let cfg = write_config(dir.path(), "rod.json", &text);
    let out = rothe(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 65);
    for row in &rows[1..] {
        let r: f64 = row[row.len() - 1].parse().unwrap();
        assert!(r <= 1e-8, "{r}");
    }
}

#[test]
fn study_csv_is_byte_identical() {
    let base = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("sin_mode.json");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out_dir = base.path().join(format!("run{k}"));
        let out = rothe(&["study", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--plots"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            std::fs::read(out_dir.join("study.csv")).unwrap(),
            std::fs::read(out_dir.join("study.svg")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_errors_exit_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SCALAR.replace(r#""a": [[2.0]]"#, r#""a": "two""#);
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let out = rothe(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("problem.a"), "{err}");

    let cfg = write_config(dir.path(), "ladder.json", &SCALAR.replace("[5, 10]", "[10, 5]"));
    let out = rothe(&["study", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`ladder`"));
}

#[test]
fn step_above_threshold_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // A = -20 forces β = 21, so τ₀ < 1/21 < τ = 0.1
    let text = SCALAR.replace(r#""a": [[2.0]]"#, r#""a": [[-20.0]]"#);
    let cfg = write_config(dir.path(), "tau.json", &text);
    let out = rothe(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solver_failure_exits_3_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("rod_study.json"))
        .unwrap()
        .replace(r#""seed": 1"#, r#""seed": 1, "solver": {"max_iters": 1, "tol_residual": 1e-300}"#);
    let cfg = write_config(dir.path(), "rod.json", &text);
    let out = rothe(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at step"));
}

#[test]
fn nonsmooth_manufactured_reference_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
        "problem": {"kind": "manufactured",
            "base": {"kind": "system", "gram_v": [[1.0]], "gram_h": [[1.0]], "trace": [[1.0]], "gram_u": [[1.0]],
                     "a": [[1.0]], "laws": [{"law": "friction", "mu_static": 1.0, "mu_kinetic": 0.5, "slope": 1.0}]},
            "exact": {"kind": "sin_mode", "mode": [1.0], "frequency": 3.0}},
        "ladder": [8, 16]
    }"#;
    let cfg = write_config(dir.path(), "kink.json", text);
    let out = rothe(&["study", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_passes_and_reports() {
    let out = rothe(&["validate", "--seed", "3", "--sweep", "300"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
