//! Algebraic identity sweeps, the a-priori quantities of a trajectory, and decay tables.

use std::fmt::Write as _;
use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interpolants::{NormKind, RotheInterpolants, Which};
use crate::problems::ProblemInstance;
use crate::spaces::{Matrix, Metric, Vector};
use crate::stepper::{csv_err, fmt_num, RotheTrajectory};

/// Coefficients `(a, b, c)` of the double step `a·xₙ + b·xₙ₋₁ + c·xₙ₋₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleStepCoefficients {
    pub lead: f64,
    pub mid: f64,
    pub tail: f64,
}

impl Default for DoubleStepCoefficients {
    fn default() -> Self {
        Self {
            lead: 1.5,
            mid: -2.0,
            tail: 0.5,
        }
    }
}

impl DoubleStepCoefficients {
    fn combine(&self, a: &Vector, b: &Vector, c: &Vector) -> Vector {
        a * self.lead + b * self.mid + c * self.tail
    }
}

fn check_lengths(a: &Vector, b: &Vector, c: &Vector) -> Result<()> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::Argument("identity arguments must have equal lengths".into()));
    }
    Ok(())
}

/// `(3/2a − 2b + ½c, a)` against `¼(|a|² + |2a−b|² − |b|² − |2b−c|² + |a−2b+c|²)`.
pub fn identity_ap8(a: &Vector, b: &Vector, c: &Vector, metric: &Metric) -> Result<(f64, f64)> {
    identity_ap8_with(a, b, c, metric, &DoubleStepCoefficients::default())
}

pub fn identity_ap8_with(
    a: &Vector,
    b: &Vector,
    c: &Vector,
    metric: &Metric,
    coeffs: &DoubleStepCoefficients,
) -> Result<(f64, f64)> {
    check_lengths(a, b, c)?;
    let lhs = metric.inner(&coeffs.combine(a, b, c), a);
    let rhs = 0.25
        * (metric.norm_sq(a) + metric.norm_sq(&(a * 2.0 - b)) - metric.norm_sq(b) - metric.norm_sq(&(b * 2.0 - c))
            + metric.norm_sq(&(a - b * 2.0 + c)));
    Ok((lhs, rhs))
}

/// `(3/2a − 2b + ½c, a − 2b + c)` against `½|a−b|² + |a−2b+c|² − ½|b−c|²`.
pub fn identity_c25(a: &Vector, b: &Vector, c: &Vector, metric: &Metric) -> Result<(f64, f64)> {
    identity_c25_with(a, b, c, metric, &DoubleStepCoefficients::default())
}

pub fn identity_c25_with(
    a: &Vector,
    b: &Vector,
    c: &Vector,
    metric: &Metric,
    coeffs: &DoubleStepCoefficients,
) -> Result<(f64, f64)> {
    check_lengths(a, b, c)?;
    let second = a - b * 2.0 + c;
    let lhs = metric.inner(&coeffs.combine(a, b, c), &second);
    let rhs = 0.5 * metric.norm_sq(&(a - b)) + metric.norm_sq(&second) - 0.5 * metric.norm_sq(&(b - c));
    Ok((lhs, rhs))
}

fn bwk_parts(deltas: &[Vector], metric: &Metric, coeffs: &DoubleStepCoefficients) -> Result<(Vec<f64>, Vec<f64>)> {
    if deltas.is_empty() {
        return Err(Error::Argument("bwk needs at least one increment".into()));
    }
    let norms: Vec<f64> = deltas.iter().map(|d| metric.norm_sq(d)).collect();
    let lead = coeffs.lead;
    let lag = lead + coeffs.mid;
    let mixed: Vec<f64> = deltas
        .windows(2)
        .map(|w| metric.norm_sq(&(&w[1] * lead + &w[0] * lag)))
        .collect();
    Ok((norms, mixed))
}

/// `Σ‖δᵢ‖²` and `‖δ₁‖² + Σ_{i≥2}‖3/2δᵢ − ½δᵢ₋₁‖²`; the inequality holds with factor 9.
pub fn bwk_inequality(deltas: &[Vector], metric: &Metric) -> Result<(f64, f64)> {
    bwk_inequality_with(deltas, metric, &DoubleStepCoefficients::default())
}

pub fn bwk_inequality_with(
    deltas: &[Vector],
    metric: &Metric,
    coeffs: &DoubleStepCoefficients,
) -> Result<(f64, f64)> {
    let (norms, mixed) = bwk_parts(deltas, metric, coeffs)?;
    Ok((norms.iter().sum(), norms[0] + mixed.iter().sum::<f64>()))
}

/// `½Σ_{i≤N−1}‖δᵢ‖² + ‖δ_N‖²` and `9/4‖δ₁‖² + 2Σ_{i≥2}‖3/2δᵢ − ½δᵢ₋₁‖²`.
pub fn bwk_intermediate(deltas: &[Vector], metric: &Metric) -> Result<(f64, f64)> {
    let (norms, mixed) = bwk_parts(deltas, metric, &DoubleStepCoefficients::default())?;
    let n = norms.len();
    let lhs = 0.5 * norms[..n - 1].iter().sum::<f64>() + norms[n - 1];
    Ok((lhs, 2.25 * norms[0] + 2.0 * mixed.iter().sum::<f64>()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub name: String,
    pub instances: usize,
    /// Largest relative deviation for identities, largest `lhs/rhs` ratio excess for inequalities.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub witness: Option<String>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

struct Worst {
    value: f64,
    witness: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            witness: None,
        }
    }

    fn record(&mut self, value: f64, describe: impl FnOnce() -> String) {
        if value > self.value || value.is_nan() {
            self.value = if value.is_nan() { f64::INFINITY } else { value };
            self.witness = Some(describe());
        }
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vector {
    Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)) * scale
}

fn random_metric(rng: &mut ChaCha8Rng, dim: usize) -> Metric {
    if rng.random_range(0.0..1.0) < 0.5 {
        Metric::Euclidean
    } else {
        let l = Matrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        Metric::Gram(&l * l.transpose() + Matrix::identity(dim, dim) * 0.1)
    }
}

fn describe(vectors: &[&Vector]) -> String {
    vectors
        .iter()
        .map(|v| format!("{:?}", v.as_slice()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random sweeps of the two inner-product identities and both forms of the BWK inequality,
/// dimensions cycling through `1..=16`.
pub fn identity_sweeps(seed: u64, instances: usize) -> Vec<SweepReport> {
    identity_sweeps_with(seed, instances, &DoubleStepCoefficients::default())
}

pub fn identity_sweeps_with(seed: u64, instances: usize, coeffs: &DoubleStepCoefficients) -> Vec<SweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ap8 = Worst::new();
    let mut c25 = Worst::new();
    let mut bwk = Worst::new();
    let mut inter = Worst::new();
    for k in 0..instances {
        let dim = 1 + k % 16;
        let metric = random_metric(&mut rng, dim);
        // one magnitude per instance
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let (a, b, c) = (
            random_vector(&mut rng, dim, scale),
            random_vector(&mut rng, dim, scale),
            random_vector(&mut rng, dim, scale),
        );
        let (l, r) = identity_ap8_with(&a, &b, &c, &metric, coeffs).expect("equal lengths");
        ap8.record((l - r).abs() / (1.0 + l.abs()), || describe(&[&a, &b, &c]));
        let (l, r) = identity_c25_with(&a, &b, &c, &metric, coeffs).expect("equal lengths");
        c25.record((l - r).abs() / (1.0 + l.abs()), || describe(&[&a, &b, &c]));

        let len = 1 + rng.random_range(0..40usize);
        let deltas: Vec<Vector> = (0..len).map(|_| random_vector(&mut rng, dim, scale)).collect();
        let (l, r) = bwk_inequality_with(&deltas, &metric, coeffs).expect("nonempty");
        bwk.record((l - 9.0 * r) / (1.0 + l), || format!("{} increments, lhs {l}, rhs {r}", deltas.len()));
        let (l, r) = bwk_intermediate(&deltas, &metric).expect("nonempty");
        inter.record((l - r) / (1.0 + l), || format!("{} increments, lhs {l}, rhs {r}", deltas.len()));
    }
    let make = |name: &str, w: Worst, tolerance: f64| SweepReport {
        name: name.into(),
        instances,
        max_deviation: w.value.max(0.0),
        tolerance,
        witness: w.witness,
    };
    vec![
        make("identity_ap8", ap8, 1e-12),
        make("identity_c25", c25, 1e-12),
        make("bwk_inequality", bwk, 1e-12),
        make("bwk_intermediate", inter, 1e-12),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRecord {
    pub name: String,
    pub value: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsUsed {
    pub alpha: f64,
    pub beta: f64,
    pub d: f64,
    pub initial_cap: f64,
    pub epsilon: f64,
    pub tau0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub label: String,
    pub steps: usize,
    pub tau: f64,
    pub records: Vec<BoundRecord>,
    pub constants: ConstantsUsed,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.records.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn write_text(&self) -> String {
        let mut s = String::new();
        let c = &self.constants;
        let _ = writeln!(s, "bound report: {} (N = {}, tau = {})", self.label, self.steps, fmt_num(self.tau));
        let _ = writeln!(
            s,
            "constants: alpha = {}, beta = {}, d = {}, C = {}, epsilon = {}, tau0 = {}",
            c.alpha, c.beta, c.d, c.initial_cap, c.epsilon, c.tau0
        );
        for r in &self.records {
            let _ = writeln!(s, "{:>4} = {}  {}", r.name, fmt_num(r.value), r.note);
        }
        s
    }

    /// Columns `bound, value, level` where the level is the number of steps.
    pub fn write_csv<W: Write>(&self, out: W, header: bool) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            wtr.write_record(["bound", "value", "level"]).map_err(csv_err)?;
        }
        for r in &self.records {
            wtr.write_record([r.name.clone(), fmt_num(r.value), self.steps.to_string()])
                .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The seven discrete a-priori quantities and the interpolant norms. Report only.
pub fn apriori_suite(traj: &RotheTrajectory, problem: &ProblemInstance) -> Result<BoundReport> {
    let s = &problem.setting;
    let tau = traj.tau();
    let w = &traj.w;
    let steps = traj.steps();
    let vstar = |x: &Vector| s.embedded_dual_norm(x).powi(2);

    let a1 = tau * w.iter().map(|x| s.norm_v(x).powi(2)).sum::<f64>();
    let a2 = w.iter().map(|x| s.norm_h(x)).fold(0.0, f64::max);
    let a3 = tau * traj.xi.iter().map(|x| s.dual_norm_u(x).powi(2)).sum::<f64>();
    let a4 = tau * vstar(&((&w[1] - &w[0]) / tau));
    let a5 = tau
        * (2..=steps)
            .map(|n| vstar(&((&w[n] * 1.5 - &w[n - 1] * 2.0 + &w[n - 2] * 0.5) / tau)))
            .sum::<f64>();
    let a6 = (2..=steps)
        .map(|n| s.norm_h(&(&w[n] - &w[n - 1] * 2.0 + &w[n - 2])).powi(2))
        .sum::<f64>();
    let a7 = traj.u.iter().map(|x| s.norm_v(x)).fold(0.0, f64::max);

    let it = RotheInterpolants::new(traj, s);
    let e1 = it.norm(Which::WLin, NormKind::L2V)?;
    let e2 = it.norm(Which::WBar, NormKind::L2V)?;
    let e3 = it.norm(Which::WBar, NormKind::LinfH)?;
    // w_lin' is piecewise constant with the increments above
    let e4 = (a4 + a5).sqrt();
    let bv2 = it.bv2_upper_bound();
    let e6 = e2 + bv2.sqrt();
    let e7 = it.norm(Which::WLin, NormKind::LinfH)?;
    let e8 = it.norm(Which::XiBar, NormKind::L2Ustar)?;
    let e9 = it.norm(Which::UBar, NormKind::LinfV)?;
    let e10 = it.norm(Which::ULin, NormKind::LinfV)?;

    let rec = |name: &str, value: f64, note: &str| BoundRecord {
        name: name.into(),
        value,
        note: note.into(),
    };
    let records = vec![
        rec("a1", a1, "tau sum_{n=0}^N ||w^n||_V^2"),
        rec("a2", a2, "max_n |w^n|_H"),
        rec("a3", a3, "tau sum_{n=1}^N ||xi^n||_U*^2"),
        rec("a4", a4, "tau ||(w^1 - w^0)/tau||_V*^2"),
        rec("a5", a5, "tau sum_{n>=2} ||double step of w||_V*^2"),
        rec("a6", a6, "sum_{n>=2} |w^n - 2w^{n-1} + w^{n-2}|_H^2"),
        rec("a7", a7, "max_n ||u^n||_V"),
        rec("e1", e1, "||w_lin||_L2(V)"),
        rec("e2", e2, "||w_bar||_L2(V)"),
        rec("e3", e3, "||w_bar||_Linf(H)"),
        rec("e4", e4, "||w_lin'||_L2(V*)"),
        rec("e6", e6, "||w_bar||_L2(V) + sqrt of the BV2(V*) upper bound"),
        rec("e7", e7, "||w_lin||_Linf(H)"),
        rec("e8", e8, "||xi_bar||_L2(U*)"),
        rec("e9", e9, "||u_bar||_Linf(V)"),
        rec("e10", e10, "||u_lin||_Linf(V)"),
        rec("bv2", bv2, "T tau sum ||(w^n - w^{n-1})/tau||_V*^2"),
    ];
    if records.iter().any(|r| !r.value.is_finite()) {
        return Err(Error::Argument("non-finite a-priori quantity".into()));
    }
    let c = problem.a.constants();
    let d = problem.j.growth_d();
    Ok(BoundReport {
        label: problem.label.clone(),
        steps,
        tau,
        records,
        constants: ConstantsUsed {
            alpha: c.coercive_alpha,
            beta: c.coercive_beta,
            d,
            initial_cap: traj.initial.scale_cap,
            epsilon: c.coercive_alpha / (2.0 * (0.5 + d)),
            tau0: traj.tau0,
        },
    })
}

/// `(N, |w¹ − w⁰|_H)` per level, in the given order.
pub fn first_increment_decay(trajectories: &[&RotheTrajectory], problem: &ProblemInstance) -> Result<Vec<(usize, f64)>> {
    if trajectories.len() < 3 {
        return Err(Error::Argument(format!(
            "first-increment table needs at least 3 levels, got {}",
            trajectories.len()
        )));
    }
    Ok(trajectories
        .iter()
        .map(|t| (t.steps(), problem.setting.norm_h(&(&t.w[1] - &t.w[0]))))
        .collect())
}

/// Constant in `τΣ‖fⁿ‖²_{V*} ≤ C‖f‖²_{L²(0,T;V*)}`: `‖fⁿ‖ ≤ 3/2‖avgₙ‖ + ½‖avgₙ₋₁‖`
/// and Jensen on each average give `C = (3/2 + ½)²`.
pub const JENSEN_CONSTANT: f64 = 4.0;

/// `(τΣ‖fⁿ‖²_{V*}, ‖f‖²_{L²(0,T;V*)})`.
pub fn jensen_check(traj: &RotheTrajectory, problem: &ProblemInstance) -> (f64, f64) {
    let s = &problem.setting;
    let lhs = traj.tau() * traj.loads.iter().map(|f| s.dual_norm(f).powi(2)).sum::<f64>();
    (lhs, problem.load.l2_dual_norm_sq(s, &traj.grid))
}

/// `Eₙ = ¼|wⁿ|² + ¼|2wⁿ−wⁿ⁻¹|² + ¼⟨Buⁿ,uⁿ⟩ + ¼⟨B(2uⁿ−uⁿ⁻¹), 2uⁿ−uⁿ⁻¹⟩` for `n = 1..N`.
pub fn discrete_energy(traj: &RotheTrajectory, problem: &ProblemInstance) -> Vec<f64> {
    let s = &problem.setting;
    let b = &problem.b;
    (1..=traj.steps())
        .map(|n| {
            let (w, wp, u, up) = (&traj.w[n], &traj.w[n - 1], &traj.u[n], &traj.u[n - 1]);
            let w2 = w * 2.0 - wp;
            let u2 = u * 2.0 - up;
            0.25 * (s.norm_h(w).powi(2) + s.norm_h(&w2).powi(2) + b.apply(u).dot(u) + b.apply(&u2).dot(&u2))
        })
        .collect()
}
