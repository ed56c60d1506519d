//! Per-step multivalued inclusion `T w ∋ b` with
//! `T w = m·i*i w + τA(w) + c·τ²B w + τι*∂j(ιw)`.
//!
//! The Euler first step uses `(m, c) = (1, 1)` and the double steps use
//! `(m, c) = (3/2, 2/3)`. The default strategy is a smoothing continuation:
//! every kink of `j` is replaced by a ramp of width ε, the smoothed equation is
//! solved by damped Newton for a decreasing ladder of ε, and the last iterate is
//! polished by an active-set Newton solve on the exact inclusion. The result is
//! only accepted after an explicit certificate: the V*-residual of the equation
//! and membership of ξ in the Clarke subdifferential.

use serde::{Deserialize, Serialize};

use crate::error::{BestIterate, Error, Result};
use crate::spaces::{GalerkinSetting, Matrix, OperatorA, OperatorB, Superpotential, Vector, MEMBERSHIP_TOL};

/// Added to the residual when ξ is not a Clarke subgradient at `ιw`.
pub const MEMBERSHIP_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy)]
pub struct StepOperator<'a> {
    pub mass_coeff: f64,
    pub b_coeff: f64,
    pub tau: f64,
    pub setting: &'a GalerkinSetting,
    pub a: &'a OperatorA,
    pub b: &'a OperatorB,
    pub j: &'a Superpotential,
}

impl<'a> StepOperator<'a> {
    /// `T₀`, the operator of the implicit Euler first step.
    pub fn first_step(
        setting: &'a GalerkinSetting,
        a: &'a OperatorA,
        b: &'a OperatorB,
        j: &'a Superpotential,
        tau: f64,
    ) -> Self {
        Self {
            mass_coeff: 1.0,
            b_coeff: 1.0,
            tau,
            setting,
            a,
            b,
            j,
        }
    }

    /// `T`, the operator of the double steps.
    pub fn double_step(
        setting: &'a GalerkinSetting,
        a: &'a OperatorA,
        b: &'a OperatorB,
        j: &'a Superpotential,
        tau: f64,
    ) -> Self {
        Self {
            mass_coeff: 1.5,
            b_coeff: 2.0 / 3.0,
            tau,
            setting,
            a,
            b,
            j,
        }
    }

    pub fn single_valued(&self, w: &Vector) -> Vector {
        let mut out = self.setting.embed_h(w) * self.mass_coeff;
        out.axpy(self.tau, &self.a.apply(w), 1.0);
        out.axpy(self.b_coeff * self.tau * self.tau, &self.b.apply(w), 1.0);
        out
    }

    pub fn single_valued_jacobian(&self, w: &Vector) -> Matrix {
        self.setting.gram_h() * self.mass_coeff
            + self.a.jacobian_or_fd(w) * self.tau
            + self.b.matrix() * (self.b_coeff * self.tau * self.tau)
    }

    /// `b − single_valued(w) − τι*ξ`.
    pub fn equation_defect(&self, w: &Vector, xi: &Vector, rhs: &Vector) -> Vector {
        let mut r = rhs - self.single_valued(w);
        r.axpy(-self.tau, &self.setting.trace_adjoint(xi), 1.0);
        r
    }

    fn smoothed_residual(&self, w: &Vector, eps: f64, rhs: &Vector) -> (Vector, Vector) {
        let xi = self.j.smooth_grad(&self.setting.apply_trace(w), eps);
        let r = -self.equation_defect(w, &xi, rhs);
        (r, xi)
    }

    fn smoothed_jacobian(&self, w: &Vector, eps: f64) -> Matrix {
        let iota = self.setting.trace();
        let curvature = self.j.smooth_hessian_diag(&self.setting.apply_trace(w), eps);
        let mut jac = self.single_valued_jacobian(w);
        if !self.j.is_zero() {
            let scaled = Matrix::from_diagonal(&curvature) * iota;
            jac += iota.transpose() * scaled * self.tau;
        }
        jac
    }

    /// Lower bound of `⟨T(r·d), r·d⟩ / ‖r·d‖` over the extreme subgradients, for each radius.
    pub fn ray_coercivity(&self, direction: &Vector, radii: &[f64]) -> Vec<f64> {
        radii
            .iter()
            .map(|&r| {
                let w = direction * r;
                let sv = self.single_valued(&w);
                let norm = self.setting.norm_v(&w);
                self.j
                    .subdiff(&self.setting.apply_trace(&w))
                    .extreme_points(1024)
                    .into_iter()
                    .map(|xi| {
                        let pairing = self.setting.pairing(&sv, &w)
                            + self.tau * self.setting.pairing(&self.setting.trace_adjoint(&xi), &w);
                        pairing / norm
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    SmoothingNewton,
    Picard,
    ScalarOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub strategy: Strategy,
    pub epsilon_ladder: Vec<f64>,
    pub max_iters: usize,
    pub tol_residual: f64,
    pub damping: f64,
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::SmoothingNewton,
            epsilon_ladder: (2..=10).map(|k| 10f64.powi(-k)).collect(),
            max_iters: 100,
            tol_residual: 1e-8,
            damping: 1.0,
            record_trace: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let ladder = &self.epsilon_ladder;
        if ladder.is_empty() {
            return Err(Error::Argument("epsilon ladder is empty".into()));
        }
        if ladder.iter().any(|&e| !(e > 0.0)) || ladder.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Argument("epsilon ladder must be positive and strictly decreasing".into()));
        }
        if *ladder.last().unwrap() > 1e-8 {
            return Err(Error::Argument("last epsilon must be at most 1e-8".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        if !(self.tol_residual > 0.0) {
            return Err(Error::Argument("tol_residual must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Argument("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub epsilon: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub w: Vector,
    pub xi: Vector,
    /// Certified residual, see [`residual_distance`].
    pub residual: f64,
    pub iterations: usize,
    /// Newton hit a singular Jacobian and switched to Picard.
    pub fallback_used: bool,
    /// Certified residual of the iterate after each ε level (smoothing strategies).
    pub ladder_residuals: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

/// Certified residual: V*-norm of the equation defect, plus [`MEMBERSHIP_PENALTY`]
/// when `ξ ∉ ∂j(ιw)`.
pub fn residual_distance(op: &StepOperator<'_>, w: &Vector, xi: &Vector, rhs: &Vector) -> f64 {
    let defect = op.setting.dual_norm(&op.equation_defect(w, xi, rhs));
    let member = op.j.contains(&op.setting.apply_trace(w), xi);
    if member {
        defect
    } else {
        defect + MEMBERSHIP_PENALTY
    }
}

/// Projects a subgradient candidate onto `∂j(ιw)` and returns the certified residual.
fn certify(op: &StepOperator<'_>, w: &Vector, xi: &Vector, rhs: &Vector) -> (Vector, f64) {
    let set = op.j.subdiff_near(&op.setting.apply_trace(w), MEMBERSHIP_TOL);
    let xi = set.project(xi);
    let r = residual_distance(op, w, &xi, rhs);
    (xi, r)
}

pub fn solve_inclusion(
    op: &StepOperator<'_>,
    rhs: &Vector,
    warm_start: &Vector,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    opts.validate()?;
    let n = op.setting.dim_v();
    if rhs.len() != n || warm_start.len() != n {
        return Err(Error::Argument(format!(
            "right-hand side and warm start must have length {n}"
        )));
    }
    if warm_start.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("warm start is not finite".into()));
    }
    match opts.strategy {
        Strategy::ScalarOracle => {
            let (w, xi) = scalar_oracle_solve(op, rhs)?;
            let residual = residual_distance(op, &w, &xi, rhs);
            Ok(SolveOutcome {
                w,
                xi,
                residual,
                iterations: 0,
                fallback_used: false,
                ladder_residuals: Vec::new(),
                trace: Vec::new(),
            })
        }
        Strategy::SmoothingNewton | Strategy::Picard => smoothing_solve(op, rhs, warm_start, opts),
    }
}

fn smoothing_solve(
    op: &StepOperator<'_>,
    rhs: &Vector,
    warm_start: &Vector,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    let inner_tol = opts.tol_residual * 1e-3;
    let mut w = warm_start.clone();
    let mut use_picard = opts.strategy == Strategy::Picard;
    let mut fallback_used = false;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut ladder_residuals = Vec::with_capacity(opts.epsilon_ladder.len());
    let mut best: Option<(Vector, Vector, f64)> = None;

    // A linear problem without kinks needs no continuation.
    let smooth_problem = op.j.laws().iter().all(|l| l.kinks().is_empty());
    let ladder: &[f64] = if smooth_problem {
        &opts.epsilon_ladder[opts.epsilon_ladder.len() - 1..]
    } else {
        &opts.epsilon_ladder
    };

    for &eps in ladder {
        let mut level_iters = 0;
        loop {
            let (r, _) = op.smoothed_residual(&w, eps, rhs);
            let merit = op.setting.dual_norm(&r);
            if opts.record_trace {
                trace.push(TraceRecord {
                    iteration: iterations,
                    epsilon: eps,
                    residual: merit,
                });
            }
            if merit <= inner_tol || level_iters >= opts.max_iters {
                break;
            }
            level_iters += 1;
            iterations += 1;

            let direction = if use_picard {
                None
            } else {
                let jac = op.smoothed_jacobian(&w, eps);
                let step = jac.lu().solve(&(-&r));
                if step.is_none() {
                    use_picard = true;
                    fallback_used = true;
                }
                step
            };
            let newton = direction.is_some();
            let direction = match direction {
                Some(d) => d,
                None => picard_direction(op, &r),
            };
            if !line_search(op, &mut w, &direction, eps, rhs, merit, opts.damping) {
                // A near-singular Jacobian gives a useless Newton direction.
                if !newton {
                    break;
                }
                use_picard = true;
                fallback_used = true;
            }
        }
        let (_, xi_eps) = op.smoothed_residual(&w, eps, rhs);
        let (xi_c, certified) = certify(op, &w, &xi_eps, rhs);
        ladder_residuals.push(certified);
        if best.as_ref().is_none_or(|b| certified < b.2) {
            best = Some((w.clone(), xi_c, certified));
        }
    }

    let eps_last = *ladder.last().unwrap();
    let (_, xi_last) = op.smoothed_residual(&w, eps_last, rhs);
    for candidate in polish_candidates(op, &w, &xi_last, eps_last, rhs) {
        if best.as_ref().is_none_or(|b| candidate.2 < b.2) {
            best = Some(candidate);
        }
    }
    let (w_best, xi_best, residual) = best.expect("at least one ladder level");
    if let Some(last) = ladder_residuals.last_mut() {
        *last = last.min(residual);
    }
    if residual <= opts.tol_residual {
        Ok(SolveOutcome {
            w: w_best,
            xi: xi_best,
            residual,
            iterations,
            fallback_used,
            ladder_residuals,
            trace,
        })
    } else {
        Err(Error::NonConvergence {
            step: None,
            best: Box::new(BestIterate {
                w: w_best,
                xi: xi_best,
                residual,
                iterations,
            }),
        })
    }
}

/// Frozen-metric Richardson direction `−P⁻¹ r` with SPD `P = m·G_H + τ α G_V + c τ² B`.
fn picard_direction(op: &StepOperator<'_>, r: &Vector) -> Vector {
    let alpha = op.a.constants().coercive_alpha;
    let p = op.setting.gram_h() * op.mass_coeff
        + op.setting.gram_v() * (op.tau * alpha)
        + op.b.matrix() * (op.b_coeff * op.tau * op.tau);
    match p.clone().cholesky() {
        Some(chol) => -chol.solve(r),
        None => -op.setting.riesz(r),
    }
}

/// Armijo backtracking on the squared V*-residual, factor ½, at most 30 halvings.
fn line_search(
    op: &StepOperator<'_>,
    w: &mut Vector,
    direction: &Vector,
    eps: f64,
    rhs: &Vector,
    merit: f64,
    damping: f64,
) -> bool {
    let base = merit * merit;
    let mut step = damping;
    for _ in 0..=30 {
        let trial = &*w + direction * step;
        let (r, _) = op.smoothed_residual(&trial, eps, rhs);
        let m = op.setting.dual_norm(&r);
        if m.is_finite() && m * m <= (1.0 - 1e-4 * step) * base {
            *w = trial;
            return true;
        }
        step *= 0.5;
    }
    // Accept a tiny step that does not increase the merit, otherwise stall.
    let trial = &*w + direction * step;
    let (r, _) = op.smoothed_residual(&trial, eps, rhs);
    let m = op.setting.dual_norm(&r);
    if m < merit {
        *w = trial;
        true
    } else {
        false
    }
}

/// Active-set Newton solves on the exact inclusion: components whose trace sits in
/// the ramp of a kink are pinned to the kink with a free multiplier, the rest follow
/// their smooth branch. Also tries the pure-branch variant with no pinned components.
fn polish_candidates(
    op: &StepOperator<'_>,
    w: &Vector,
    xi: &Vector,
    eps: f64,
    rhs: &Vector,
) -> Vec<(Vector, Vector, f64)> {
    let s = op.setting.apply_trace(w);
    let laws = op.j.laws();
    let mut pinned: Vec<(usize, f64)> = Vec::new();
    for (k, law) in laws.iter().enumerate() {
        if let Some(&kink) = law.kinks().iter().min_by(|a, b| (s[k] - **a).abs().total_cmp(&(s[k] - **b).abs())) {
            if (s[k] - kink).abs() <= 10.0 * eps {
                pinned.push((k, kink));
            }
        }
    }
    let mut out = Vec::new();
    if let Some(c) = active_set_newton(op, w, xi, &pinned, rhs) {
        out.push(c);
    }
    if !pinned.is_empty() {
        if let Some(c) = active_set_newton(op, w, xi, &[], rhs) {
            out.push(c);
        }
    }
    out
}

fn active_set_newton(
    op: &StepOperator<'_>,
    w0: &Vector,
    xi0: &Vector,
    pinned: &[(usize, f64)],
    rhs: &Vector,
) -> Option<(Vector, Vector, f64)> {
    let n = op.setting.dim_v();
    let p = pinned.len();
    let iota = op.setting.trace();
    let laws = op.j.laws();
    let is_pinned = |k: usize| pinned.iter().position(|&(i, _)| i == k);
    let mut w = w0.clone();
    let mut lambda = Vector::from_iterator(p, pinned.iter().map(|&(k, _)| xi0[k]));
    // Branch side is frozen from the starting point.
    let s0 = op.setting.apply_trace(w0);
    let sides: Vec<f64> = s0.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();

    let assemble = |w: &Vector, lambda: &Vector| -> (Vector, Vector) {
        let s = op.setting.apply_trace(w);
        let mut xi = Vector::zeros(laws.len());
        let mut curv = Vector::zeros(laws.len());
        for (k, law) in laws.iter().enumerate() {
            if let Some(i) = is_pinned(k) {
                xi[k] = lambda[i];
            } else {
                let (d, dd) = match law.derivative(s[k]) {
                    Some(d) => (d, law.branch_derivative(s[k], sides[k]).1),
                    None => law.branch_derivative(s[k], sides[k]),
                };
                xi[k] = d;
                curv[k] = dd;
            }
        }
        (xi, curv)
    };

    let residual_vec = |w: &Vector, lambda: &Vector| -> Vector {
        let (xi, _) = assemble(w, lambda);
        let r1 = -op.equation_defect(w, &xi, rhs);
        let s = op.setting.apply_trace(w);
        let mut full = Vector::zeros(n + p);
        full.rows_mut(0, n).copy_from(&r1);
        for (i, &(k, kink)) in pinned.iter().enumerate() {
            full[n + i] = s[k] - kink;
        }
        full
    };

    let mut last_norm = f64::INFINITY;
    for _ in 0..60 {
        let r = residual_vec(&w, &lambda);
        let norm = r.amax();
        if norm > last_norm {
            break;
        }
        last_norm = norm;
        let (_, curv) = assemble(&w, &lambda);
        let mut jac = Matrix::zeros(n + p, n + p);
        let mut top = op.single_valued_jacobian(&w);
        if !op.j.is_zero() {
            top += iota.transpose() * Matrix::from_diagonal(&curv) * iota * op.tau;
        }
        jac.view_mut((0, 0), (n, n)).copy_from(&top);
        for (i, &(k, _)) in pinned.iter().enumerate() {
            for c in 0..n {
                jac[(c, n + i)] = op.tau * iota[(k, c)];
                jac[(n + i, c)] = iota[(k, c)];
            }
        }
        let step = jac.lu().solve(&(-&r))?;
        w += step.rows(0, n);
        lambda += step.rows(n, p);
        if step.amax() <= 1e-16 * (1.0 + w.amax()) {
            break;
        }
    }
    let (xi, _) = assemble(&w, &lambda);
    if w.iter().chain(xi.iter()).any(|x| !x.is_finite()) {
        return None;
    }
    let r = residual_distance(op, &w, &xi, rhs);
    Some((w, xi, r))
}

/// Brute-force solve for `dim V = dim U = 1`: every kink value is tested
/// directly, every smooth branch is bracketed and bisected.
pub fn scalar_oracle_solve(op: &StepOperator<'_>, rhs: &Vector) -> Result<(Vector, Vector)> {
    if op.setting.dim_v() != 1 || op.setting.dim_u() != 1 {
        return Err(Error::Oracle(format!(
            "scalar oracle needs dim V = dim U = 1, got {} and {}",
            op.setting.dim_v(),
            op.setting.dim_u()
        )));
    }
    let b = rhs[0];
    let iota = op.setting.trace()[(0, 0)];
    let law = &op.j.laws()[0];
    let sv = |w: f64| op.single_valued(&Vector::from_element(1, w))[0];
    let tol = 1e-12 * (1.0 + b.abs());
    let vec1 = |x: f64| Vector::from_element(1, x);

    // Kinks in w-coordinates.
    let mut kinks_w: Vec<f64> = if iota != 0.0 {
        law.kinks().iter().map(|&k| k / iota).collect()
    } else {
        Vec::new()
    };
    kinks_w.sort_by(f64::total_cmp);
    for (&kw, &ks) in kinks_w.iter().zip(law.kinks()) {
        let xi = (b - sv(kw)) / (op.tau * iota);
        let (lo, hi) = law.interval(ks);
        if xi >= lo - 1e-12 && xi <= hi + 1e-12 {
            return Ok((vec1(kw), vec1(xi.clamp(lo, hi))));
        }
    }

    // Branch selection: side of the kink in trace coordinates.
    let branch_value = |w: f64, side: f64| -> f64 {
        let s = iota * w;
        let xi = law.derivative(s).unwrap_or_else(|| law.branch_derivative(s, side).0);
        sv(w) + op.tau * iota * xi - b
    };
    let xi_at = |w: f64, side: f64| -> f64 {
        let s = iota * w;
        law.derivative(s).unwrap_or_else(|| law.branch_derivative(s, side).0)
    };

    let mut radius = 1.0 + b.abs();
    let mut bounds: Vec<f64> = Vec::new();
    for _ in 0..80 {
        let plus = branch_value(radius, 1.0);
        let minus = branch_value(-radius, -1.0);
        if plus > 0.0 && minus < 0.0 {
            break;
        }
        radius *= 2.0;
    }
    bounds.push(-radius);
    bounds.extend(kinks_w.iter().copied());
    bounds.push(radius);
    for seg in bounds.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        if !(hi > lo) {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let side = if iota * mid < 0.0 { -1.0 } else { 1.0 };
        let f = |w: f64| branch_value(w, side);
        let (mut a, mut c) = (lo, hi);
        let (fa, fc) = (f(a), f(c));
        if fa == 0.0 {
            return Ok((vec1(a), vec1(xi_at(a, side))));
        }
        if fc == 0.0 {
            return Ok((vec1(c), vec1(xi_at(c, side))));
        }
        if fa.signum() == fc.signum() {
            continue;
        }
        let mut fa = fa;
        for _ in 0..400 {
            let m = 0.5 * (a + c);
            if m <= a || m >= c {
                break;
            }
            let fm = f(m);
            if fm == 0.0 {
                a = m;
                c = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                c = m;
            }
        }
        let root = if f(a).abs() <= f(c).abs() { a } else { c };
        if f(root).abs() <= tol.max(1e-12) || (c - a) <= 4.0 * f64::EPSILON * (1.0 + root.abs()) {
            return Ok((vec1(root), vec1(xi_at(root, side))));
        }
    }
    Err(Error::Oracle(format!(
        "no sign change on any branch for b = {b} (hypotheses violated?)"
    )))
}
