//! Config-driven `run`, `study` and `validate` commands.

pub mod config;
pub mod study;
pub mod svg;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{apriori_suite, identity_sweeps, SweepReport};
use crate::error::{Error, Result};
use crate::inclusion::{scalar_oracle_solve, solve_inclusion, SolveOptions, StepOperator};
use crate::spaces::{GalerkinSetting, Matrix, OperatorA, OperatorB, ScalarLaw, Superpotential, Vector};
use crate::stepper::{fmt_num, run_scheme, RotheTrajectory};
use crate::timegrid::TimeGrid;

pub use config::{BuiltProblem, LoadConfig, ProblemConfig, StudyConfig};
pub use study::{run_study, Eoc, LevelRecord, StudyReport};
use svg::{line_plot, Axes, Series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_REFERENCE: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Precondition(_) | Error::Setup(_) | Error::Argument(_) | Error::Construction(_) => {
            EXIT_CONFIG
        }
        Error::NonConvergence { .. } | Error::Oracle(_) => EXIT_SOLVER,
        Error::Reference(_) => EXIT_REFERENCE,
        Error::Io(_) => EXIT_IO,
    }
}

/// Command-line overrides of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub plots: bool,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut StudyConfig) -> Result<()> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.emit_plots |= self.plots;
        if let Some(tol) = self.tol {
            cfg.solver.tol_residual = tol;
        }
        cfg.validate()
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<StudyConfig> {
    let mut cfg = StudyConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

#[derive(Debug)]
pub struct RunOutput {
    pub trajectory: RotheTrajectory,
    pub report: String,
    pub files: Vec<PathBuf>,
}

/// One scheme run at the largest ladder level.
pub fn cmd_run(cfg: &StudyConfig) -> Result<RunOutput> {
    let built = cfg.build()?;
    let problem = &built.instance;
    let mut opts = cfg.scheme_options();
    opts.solver.record_trace = true;
    let steps = *cfg.ladder.last().expect("validated ladder");
    let grid = TimeGrid::new(cfg.horizon, steps)?;
    let traj = run_scheme(problem, &grid, &opts)?;
    let bounds = apriori_suite(&traj, problem)?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    traj.write_csv(create(dir, "trajectory.csv")?)?;
    files.push(dir.join("trajectory.csv"));
    bounds.write_csv(create(dir, "bounds.csv")?, true)?;
    files.push(dir.join("bounds.csv"));
    traj.write_solver_trace(create(dir, "solver_trace.csv")?)?;
    files.push(dir.join("solver_trace.csv"));

    let mut report = String::new();
    let _ = writeln!(report, "run: {} N = {} tau = {}", problem.label, steps, fmt_num(traj.tau()));
    let _ = writeln!(report, "tau0 = {}", fmt_num(traj.tau0));
    let _ = writeln!(report, "max residual = {}", fmt_num(traj.max_residual()));
    let _ = writeln!(report, "fallback steps = {:?}", traj.fallback_steps);
    report.push_str(&bounds.write_text());
    fs::write(dir.join("report.txt"), &report)?;
    files.push(dir.join("report.txt"));

    if cfg.emit_plots {
        let s = &problem.setting;
        let nodes: Vec<f64> = traj.grid.nodes().collect();
        let nodal = |vals: Vec<f64>, label: &str| Series::new(label, nodes.iter().copied().zip(vals).collect());
        let plots = [
            (
                "w_norm.svg",
                line_plot(
                    "nodal |w^n|_H",
                    "t",
                    "|w^n|_H",
                    &[nodal(traj.w.iter().map(|w| s.norm_h(w)).collect(), "|w^n|")],
                    Axes::default(),
                ),
            ),
            (
                "u_norm.svg",
                line_plot(
                    "nodal ||u^n||_V",
                    "t",
                    "||u^n||_V",
                    &[nodal(traj.u.iter().map(|u| s.norm_v(u)).collect(), "||u^n||")],
                    Axes::default(),
                ),
            ),
            (
                "residuals.svg",
                line_plot(
                    "inclusion residuals",
                    "t",
                    "residual",
                    &[Series::new(
                        "residual",
                        nodes[1..].iter().copied().zip(traj.residuals.iter().copied()).collect(),
                    )],
                    Axes {
                        log_x: false,
                        log_y: true,
                    },
                ),
            ),
        ];
        for (name, svg) in plots {
            fs::write(dir.join(name), svg)?;
            files.push(dir.join(name));
        }
    }
    Ok(RunOutput {
        trajectory: traj,
        report,
        files,
    })
}

#[derive(Debug)]
pub struct StudyOutput {
    pub report: StudyReport,
    pub files: Vec<PathBuf>,
}

/// Refinement study over the whole ladder.
pub fn cmd_study(cfg: &StudyConfig) -> Result<StudyOutput> {
    let built = cfg.build()?;
    let top = *cfg.ladder.last().expect("validated ladder");
    let reference_steps = match (cfg.reference_steps, &built.manufactured) {
        (Some(r), _) => r,
        (None, Some(_)) => 0,
        (None, None) => {
            let r = 8 * top;
            if let Some(n) = cfg.ladder.iter().find(|&&n| !r.is_multiple_of(n)) {
                return Err(Error::Config {
                    path: "reference_steps".into(),
                    message: format!("default 8 × {top} is not divisible by ladder level {n}; set it explicitly"),
                });
            }
            r
        }
    };
    let (report, _) = run_study(
        &built.instance,
        built.manufactured.as_ref(),
        cfg.horizon,
        &cfg.ladder,
        reference_steps,
        &cfg.scheme_options(),
    )?;

    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    report.write_csv(create(dir, "study.csv")?)?;
    files.push(dir.join("study.csv"));
    fs::write(dir.join("study.txt"), report.write_text())?;
    files.push(dir.join("study.txt"));
    if cfg.emit_plots {
        let series: Vec<Series> = study::ERROR_NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| Series::new(*name, report.levels.iter().map(|l| (l.tau, l.errors[k])).collect()))
            .collect();
        let svg = line_plot("error vs tau", "tau", "error", &series, Axes { log_x: true, log_y: true });
        fs::write(dir.join("study.svg"), svg)?;
        files.push(dir.join("study.svg"));
    }
    Ok(StudyOutput { report, files })
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub suites: Vec<SweepReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SweepReport::passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.suites {
            let status = if r.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{status} {} instances={} max_deviation={:.3e} tolerance={:.1e}",
                r.name, r.instances, r.max_deviation, r.tolerance
            );
            if !r.passed() {
                if let Some(w) = &r.witness {
                    let _ = writeln!(s, "  witness: {w}");
                }
            }
        }
        s
    }
}

/// Oracle and smoothing Newton on the same scalar step problem; largest `|w_oracle − w_newton|`.
fn oracle_agreement(name: &str, cases: Vec<(f64, f64, ScalarLaw, f64)>) -> SweepReport {
    let setting = GalerkinSetting::scalar();
    let opts = SolveOptions::default();
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for (alpha, tau, law, rhs) in &cases {
        let describe = || format!("alpha={alpha} tau={tau} law={law:?} rhs={rhs}");
        let deviation = (|| -> Result<f64> {
            let a = OperatorA::linear_auto(&setting, Matrix::from_element(1, 1, *alpha))?;
            let b = OperatorB::zero(1);
            let j = Superpotential::new(vec![law.clone()], law.growth_bound())?;
            let op = StepOperator::first_step(&setting, &a, &b, &j, *tau);
            let rhs = Vector::from_element(1, *rhs);
            let (w, _) = scalar_oracle_solve(&op, &rhs)?;
            let out = solve_inclusion(&op, &rhs, &Vector::zeros(1), &opts)?;
            Ok((w[0] - out.w[0]).abs())
        })()
        .unwrap_or(f64::INFINITY);
        if deviation > worst || deviation.is_nan() {
            worst = deviation;
            witness = Some(describe());
        }
    }
    SweepReport {
        name: name.into(),
        instances: cases.len(),
        max_deviation: worst,
        tolerance: 1e-8,
        witness,
    }
}

/// Identity sweeps plus scalar oracle against Newton, `sweep` instances each.
pub fn cmd_validate(seed: u64, sweep: usize) -> ValidationReport {
    let mut suites = identity_sweeps(seed, sweep);
    let abs = ScalarLaw::friction(1.0, 1.0, 0.0).expect("valid law");
    let count = sweep.max(2);
    suites.push(oracle_agreement(
        "oracle_vs_newton_abs",
        (0..count)
            .map(|k| (1.0, 0.1, abs.clone(), -2.0 + 4.0 * k as f64 / (count - 1) as f64))
            .collect(),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cases = (0..sweep)
        .map(|_| {
            let mu_s = rng.random_range(0.2..1.5);
            let mu_k = mu_s * rng.random_range(0.1..1.0);
            let slope = rng.random_range(0.0..5.0);
            let alpha = rng.random_range(0.5..2.0);
            // keep the step operator strictly monotone: τλ(μs − μk) < 1 + τα
            let drop = slope * (mu_s - mu_k);
            let tau_max: f64 = if drop > alpha { 1.0 / (drop - alpha) } else { 1.0 };
            let tau = rng.random_range(0.01..0.9) * tau_max.min(1.0);
            let law = ScalarLaw::friction(mu_s, mu_k, slope).expect("valid law");
            (alpha, tau, law, rng.random_range(-3.0..3.0))
        })
        .collect();
    suites.push(oracle_agreement("oracle_vs_newton_friction", cases));
    ValidationReport { suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg = Error::Config {
            path: "x".into(),
            message: "y".into(),
        };
        assert_eq!(exit_code(&cfg), 2);
        assert_eq!(exit_code(&Error::Precondition("p".into())), 2);
        assert_eq!(exit_code(&Error::Reference("r".into())), 4);
    }

    #[test]
    fn validate_passes_by_default() {
        let report = cmd_validate(7, 200);
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.suites.len(), 6);
    }
}
