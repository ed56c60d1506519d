//! τ-refinement studies against an exact solution or a fine reference run.

use std::io::Write;

use serde::Serialize;

use crate::diagnostics::{apriori_suite, BoundReport};
use crate::error::{Error, Result};
use crate::interpolants::RotheInterpolants;
use crate::problems::{ManufacturedCase, ProblemInstance};
use crate::spaces::Vector;
use crate::stepper::{csv_err, fmt_num, run_scheme, RotheTrajectory, SchemeOptions};
use crate::timegrid::TimeGrid;

/// Errors at or below this level on both sides of a refinement make the order meaningless.
pub const EXACT_THRESHOLD: f64 = 1e-9;

pub const ERROR_NAMES: [&str; 3] = ["error_LinfH_w", "error_L2V_w", "error_LinfV_u"];

#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord {
    pub steps: usize,
    pub tau: f64,
    /// Ordered as [`ERROR_NAMES`].
    pub errors: [f64; 3],
    pub gap_w_vstar: f64,
    pub gap_u_v: f64,
    /// `|w¹ − w⁰|_H`.
    pub first_increment: f64,
    pub max_residual: f64,
    pub apriori: BoundReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Eoc {
    Order(f64),
    Exact,
}

impl Eoc {
    pub fn between(e0: f64, e1: f64, n0: usize, n1: usize) -> Eoc {
        if e0 <= EXACT_THRESHOLD && e1 <= EXACT_THRESHOLD {
            Eoc::Exact
        } else {
            Eoc::Order((e0 / e1).ln() / (n1 as f64 / n0 as f64).ln())
        }
    }

    pub fn order(self) -> Option<f64> {
        match self {
            Eoc::Order(p) => Some(p),
            Eoc::Exact => None,
        }
    }

    fn render(self) -> String {
        match self {
            Eoc::Order(p) => fmt_num(p),
            Eoc::Exact => "exact".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub label: String,
    /// `exact` or `fine:<N_ref>`.
    pub reference: String,
    pub levels: Vec<LevelRecord>,
    /// One row per adjacent pair of levels, ordered as [`ERROR_NAMES`].
    pub eoc: Vec<[Eoc; 3]>,
}

enum Reference<'a> {
    Exact(&'a ManufacturedCase),
    Fine(Box<RotheTrajectory>),
}

impl Reference<'_> {
    /// `(u, w)` at node `n` of a grid with `steps` steps.
    fn at(&self, n: usize, steps: usize, grid: &TimeGrid) -> (Vector, Vector) {
        match self {
            Reference::Exact(case) => {
                let t = grid.node(n);
                (case.u_exact(t), case.w_exact(t))
            }
            Reference::Fine(fine) => {
                let k = n * (fine.steps() / steps);
                (fine.u[k].clone(), fine.w[k].clone())
            }
        }
    }
}

fn level_errors(traj: &RotheTrajectory, problem: &ProblemInstance, reference: &Reference<'_>) -> [f64; 3] {
    let s = &problem.setting;
    let steps = traj.steps();
    let mut linf_h = 0.0_f64;
    let mut l2v = 0.0;
    let mut linf_v = 0.0_f64;
    for n in 0..=steps {
        let (u_ref, w_ref) = reference.at(n, steps, &traj.grid);
        let ew = &traj.w[n] - w_ref;
        linf_h = linf_h.max(s.norm_h(&ew));
        if n > 0 {
            l2v += s.norm_v(&ew).powi(2);
        }
        linf_v = linf_v.max(s.norm_v(&(&traj.u[n] - u_ref)));
    }
    [linf_h, (traj.tau() * l2v).sqrt(), linf_v]
}

/// Runs every level of `ladder` (concurrently) and the reference, then assembles the report
/// in ladder order. Without a manufactured case a fine run with `reference_steps` is used.
pub fn run_study(
    problem: &ProblemInstance,
    manufactured: Option<&ManufacturedCase>,
    horizon: f64,
    ladder: &[usize],
    reference_steps: usize,
    opts: &SchemeOptions,
) -> Result<(StudyReport, Vec<RotheTrajectory>)> {
    if ladder.len() < 2 {
        return Err(Error::Config {
            path: "ladder".into(),
            message: "a study needs at least 2 levels".into(),
        });
    }
    let grids = ladder
        .iter()
        .map(|&n| TimeGrid::new(horizon, n))
        .collect::<Result<Vec<_>>>()?;

    let (runs, fine) = std::thread::scope(|scope| {
        let fine = manufactured.is_none().then(|| {
            scope.spawn(move || {
                let grid = TimeGrid::new(horizon, reference_steps)?;
                run_scheme(problem, &grid, opts)
            })
        });
        let handles: Vec<_> = grids
            .iter()
            .map(|grid| scope.spawn(move || run_scheme(problem, grid, opts)))
            .collect();
        let runs: Vec<Result<RotheTrajectory>> = handles
            .into_iter()
            .map(|h| h.join().expect("level worker panicked"))
            .collect();
        (runs, fine.map(|h| h.join().expect("reference worker panicked")))
    });

    let reference = match (manufactured, fine) {
        (Some(case), _) => Reference::Exact(case),
        (None, Some(Ok(traj))) => Reference::Fine(Box::new(traj)),
        (None, Some(Err(e))) => return Err(Error::Reference(format!("fine run with N = {reference_steps}: {e}"))),
        (None, None) => unreachable!("fine reference is spawned when no exact solution is given"),
    };
    let trajectories = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut levels = Vec::with_capacity(trajectories.len());
    for traj in &trajectories {
        let interp = RotheInterpolants::new(traj, &problem.setting);
        let (gap_w_vstar, gap_u_v) = interp.interpolant_gaps();
        levels.push(LevelRecord {
            steps: traj.steps(),
            tau: traj.tau(),
            errors: level_errors(traj, problem, &reference),
            gap_w_vstar,
            gap_u_v,
            first_increment: problem.setting.norm_h(&(&traj.w[1] - &traj.w[0])),
            max_residual: traj.max_residual(),
            apriori: apriori_suite(traj, problem)?,
        });
    }
    let eoc = levels
        .windows(2)
        .map(|p| std::array::from_fn(|k| Eoc::between(p[0].errors[k], p[1].errors[k], p[0].steps, p[1].steps)))
        .collect();
    let reference = match reference {
        Reference::Exact(_) => "exact".to_string(),
        Reference::Fine(t) => format!("fine:{}", t.steps()),
    };
    Ok((
        StudyReport {
            label: problem.label.clone(),
            reference,
            levels,
            eoc,
        },
        trajectories,
    ))
}

impl StudyReport {
    pub fn errors(&self, k: usize) -> Vec<f64> {
        self.levels.iter().map(|l| l.errors[k]).collect()
    }

    /// Long format `section,level,quantity,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["section", "level", "quantity", "value"]).map_err(csv_err)?;
        let mut row = |section: &str, level: String, quantity: &str, value: String| {
            wtr.write_record([section, &level, quantity, &value]).map_err(csv_err)
        };
        row("meta", String::new(), "reference", self.reference.clone())?;
        for l in &self.levels {
            let n = l.steps.to_string();
            row("level", n.clone(), "tau", fmt_num(l.tau))?;
            for (name, e) in ERROR_NAMES.iter().zip(l.errors) {
                row("level", n.clone(), name, fmt_num(e))?;
            }
            row("level", n.clone(), "max_residual", fmt_num(l.max_residual))?;
        }
        for (pair, orders) in self.levels.windows(2).zip(&self.eoc) {
            let span = format!("{}-{}", pair[0].steps, pair[1].steps);
            for (name, o) in ERROR_NAMES.iter().zip(orders) {
                row("eoc", span.clone(), name, o.render())?;
            }
        }
        for l in &self.levels {
            let n = l.steps.to_string();
            row("gap", n.clone(), "gap_w_Vstar", fmt_num(l.gap_w_vstar))?;
            row("gap", n, "gap_u_V", fmt_num(l.gap_u_v))?;
        }
        for l in &self.levels {
            row("first_increment", l.steps.to_string(), "w1_minus_w0_H", fmt_num(l.first_increment))?;
        }
        for l in &self.levels {
            for r in &l.apriori.records {
                row("apriori", l.steps.to_string(), &r.name, fmt_num(r.value))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "study: {} (reference {})", self.label, self.reference);
        let _ = writeln!(s, "{:>6} {:>12} {:>12} {:>12} {:>12}", "N", "tau", "LinfH_w", "L2V_w", "LinfV_u");
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                l.steps, l.tau, l.errors[0], l.errors[1], l.errors[2]
            );
        }
        let _ = writeln!(s, "EOC");
        for (pair, orders) in self.levels.windows(2).zip(&self.eoc) {
            let cells: Vec<String> = orders
                .iter()
                .map(|o| match o {
                    Eoc::Order(p) => format!("{p:>12.4}"),
                    Eoc::Exact => format!("{:>12}", "exact"),
                })
                .collect();
            let _ = writeln!(s, "{:>6} {}", format!("{}-{}", pair[0].steps, pair[1].steps), cells.join(" "));
        }
        let _ = writeln!(s, "{:>6} {:>12} {:>12} {:>14}", "N", "gap_w_V*", "gap_u_V", "|w1-w0|_H");
        for l in &self.levels {
            let _ = writeln!(
                s,
                "{:>6} {:>12.4e} {:>12.4e} {:>14.4e}",
                l.steps, l.gap_w_vstar, l.gap_u_v, l.first_increment
            );
        }
        s
    }
}
