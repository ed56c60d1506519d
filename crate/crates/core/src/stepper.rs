//! The double-step Rothe scheme: one implicit Euler step, then the two-history-point
//! marches, each solved as a multivalued inclusion.

use std::io::Write;

use crate::error::{Error, Result};
use crate::hypotheses::validate_hypotheses;
use crate::inclusion::{solve_inclusion, SolveOptions, StepOperator, Strategy, TraceRecord};
use crate::problems::ProblemInstance;
use crate::spaces::{GalerkinSetting, OperatorA, OperatorB, Superpotential, Vector};
use crate::timegrid::{average_loads, select_initial_data, InitialData, TimeGrid};

/// `(1/τ)(3/2·x_n − 2·x_{n−1} + ½·x_{n−2})`.
pub fn double_step_derivative(x_n: &Vector, x_nm1: &Vector, x_nm2: &Vector, tau: f64) -> Result<Vector> {
    if x_n.len() != x_nm1.len() || x_n.len() != x_nm2.len() {
        return Err(Error::Argument(format!(
            "double step needs equal lengths, got {}, {}, {}",
            x_n.len(),
            x_nm1.len(),
            x_nm2.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("tau must be positive, got {tau}")));
    }
    // differenced form is exact on constants
    Ok(((x_n - x_nm1) * 1.5 - (x_nm1 - x_nm2) * 0.5) / tau)
}

/// `τf¹ + M w⁰ − τB u⁰`.
pub fn assemble_first_rhs(setting: &GalerkinSetting, b: &OperatorB, data: &InitialData, f1: &Vector, tau: f64) -> Vector {
    let mut rhs = f1 * tau + setting.embed_h(&data.w0_tau);
    rhs.axpy(-tau, &b.apply(&data.u0_tau), 1.0);
    rhs
}

/// `τfⁿ + 2M wⁿ⁻¹ − ½M wⁿ⁻² − τB(4/3 uⁿ⁻¹ − 1/3 uⁿ⁻²)`, reading the history from `u`, `w`.
pub fn assemble_step_rhs(
    setting: &GalerkinSetting,
    b: &OperatorB,
    u: &[Vector],
    w: &[Vector],
    n: usize,
    f_n: &Vector,
    tau: f64,
) -> Result<Vector> {
    if n < 2 {
        return Err(Error::Argument(format!("double step needs n >= 2, got {n}")));
    }
    if u.len() < n || w.len() < n {
        return Err(Error::Argument(format!("history up to step {} is missing", n - 1)));
    }
    let mut rhs = f_n * tau + setting.embed_h(&(&w[n - 1] * 2.0 - &w[n - 2] * 0.5));
    let u_mix = &u[n - 1] * (4.0 / 3.0) - &u[n - 2] * (1.0 / 3.0);
    rhs.axpy(-tau, &b.apply(&u_mix), 1.0);
    Ok(rhs)
}

/// Step size below which `T₀` and `T` are coercive with the declared constants.
///
/// With `ε = α/(2(½+d))` and `c̄` the smallest constant in `‖ιv‖²_U ≤ ε‖v‖²_V + c̄|v|²_H`,
/// the `|v|²` coefficient of `⟨T₀v, v⟩` is `1 − τβ − τ(½+d)c̄`. Infinite when it never vanishes.
pub fn tau_threshold(setting: &GalerkinSetting, a: &OperatorA, j: &Superpotential) -> Result<f64> {
    let c = a.constants();
    let d = j.growth_d();
    let trace_term = if j.is_zero() {
        0.0
    } else {
        let eps = c.coercive_alpha / (2.0 * (0.5 + d));
        (0.5 + d) * setting.trace_interpolation_constant(eps)?
    };
    let denom = c.coercive_beta + trace_term;
    Ok(if denom > 0.0 { 1.0 / denom } else { f64::INFINITY })
}

#[derive(Debug, Clone)]
pub struct SchemeOptions {
    pub solver: SolveOptions,
    /// Radius `C` of the initial velocity ball `‖w⁰‖ ≤ C/√τ`.
    pub initial_cap: f64,
    /// Samples for the hypothesis check; 0 skips it.
    pub hypothesis_samples: usize,
    pub seed: u64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            solver: SolveOptions::default(),
            initial_cap: 1e6,
            hypothesis_samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RotheTrajectory {
    pub grid: TimeGrid,
    /// `u⁰..u^N`.
    pub u: Vec<Vector>,
    /// `w⁰..w^N`.
    pub w: Vec<Vector>,
    /// `ξ¹..ξ^N`.
    pub xi: Vec<Vector>,
    /// `f¹..f^N`.
    pub loads: Vec<Vector>,
    /// Certified inclusion residual of steps `1..N`.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Steps where Newton fell back to Picard.
    pub fallback_steps: Vec<usize>,
    pub traces: Vec<Vec<TraceRecord>>,
    pub initial: InitialData,
    pub tau0: f64,
}

pub fn run_scheme(problem: &ProblemInstance, grid: &TimeGrid, opts: &SchemeOptions) -> Result<RotheTrajectory> {
    opts.solver.validate()?;
    let ProblemInstance {
        setting, a, b, j, load, ..
    } = problem;
    if opts.hypothesis_samples > 0 {
        let report = validate_hypotheses(setting, a, b, j, opts.hypothesis_samples, opts.seed)?;
        if !report.passed() {
            let names: Vec<String> = report
                .failures()
                .map(|c| format!("{} (margin {:.3e})", c.name, c.worst_margin))
                .collect();
            return Err(Error::Precondition(format!("hypotheses fail: {}", names.join(", "))));
        }
    }
    let tau = grid.tau();
    let tau0 = tau_threshold(setting, a, j)?;
    if tau >= tau0 {
        return Err(Error::Precondition(format!(
            "tau = {tau} is not below the coercivity threshold tau0 = {tau0}; the step problems are only known to be solvable for small tau"
        )));
    }
    if opts.solver.strategy == Strategy::ScalarOracle && (setting.dim_v() != 1 || setting.dim_u() != 1) {
        return Err(Error::Argument("scalar-oracle strategy needs a scalar problem".into()));
    }

    let initial = select_initial_data(setting, &problem.u0, &problem.w0, grid, opts.initial_cap)?;
    let loads = average_loads(load, grid);
    let steps = grid.steps();
    let mut u = Vec::with_capacity(steps + 1);
    let mut w = Vec::with_capacity(steps + 1);
    let mut xi = Vec::with_capacity(steps);
    let mut residuals = Vec::with_capacity(steps);
    let mut iterations = Vec::with_capacity(steps);
    let mut fallback_steps = Vec::new();
    let mut traces = Vec::with_capacity(steps);
    u.push(initial.u0_tau.clone());
    w.push(initial.w0_tau.clone());

    let first = StepOperator::first_step(setting, a, b, j, tau);
    let double = StepOperator::double_step(setting, a, b, j, tau);
    for n in 1..=steps {
        let (op, rhs) = if n == 1 {
            (&first, assemble_first_rhs(setting, b, &initial, &loads[0], tau))
        } else {
            (&double, assemble_step_rhs(setting, b, &u, &w, n, &loads[n - 1], tau)?)
        };
        let out = solve_inclusion(op, &rhs, &w[n - 1], &opts.solver).map_err(|e| match e {
            Error::NonConvergence { best, .. } => Error::NonConvergence { step: Some(n), best },
            other => other,
        })?;
        let u_n = if n == 1 {
            &u[0] + &out.w * tau
        } else {
            (&out.w * tau + &u[n - 1] * 2.0 - &u[n - 2] * 0.5) * (2.0 / 3.0)
        };
        if out.fallback_used {
            fallback_steps.push(n);
        }
        u.push(u_n);
        w.push(out.w);
        xi.push(out.xi);
        residuals.push(out.residual);
        iterations.push(out.iterations);
        traces.push(out.trace);
    }
    Ok(RotheTrajectory {
        grid: *grid,
        u,
        w,
        xi,
        loads,
        residuals,
        iterations,
        fallback_steps,
        traces,
        initial,
        tau0,
    })
}

fn rel_defect(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

impl RotheTrajectory {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn tau(&self) -> f64 {
        self.grid.tau()
    }

    pub fn dim(&self) -> usize {
        self.u[0].len()
    }

    /// Largest violation of `u¹ = τw¹ + u⁰` and of `wⁿ = D_τ uⁿ` for `n ≥ 2`.
    pub fn consistency_defect(&self) -> f64 {
        let tau = self.tau();
        let mut worst = (&self.u[1] - &self.u[0] - &self.w[1] * tau).amax();
        for n in 2..=self.steps() {
            let d = double_step_derivative(&self.u[n], &self.u[n - 1], &self.u[n - 2], tau).expect("equal lengths");
            worst = worst.max((d - &self.w[n]).amax() * tau);
        }
        worst
    }

    /// Relative violation of `½u⁰ − 3/2u¹ − ½uⁿ⁻¹ + 3/2uⁿ = τΣ_{k=2}^n w^k`.
    pub fn telescoping_defect(&self) -> f64 {
        let tau = self.tau();
        let mut sum = Vector::zeros(self.dim());
        let mut worst = 0.0_f64;
        for n in 2..=self.steps() {
            sum += &self.w[n] * tau;
            let lhs = &self.u[0] * 0.5 - &self.u[1] * 1.5 - &self.u[n - 1] * 0.5 + &self.u[n] * 1.5;
            worst = worst.max(rel_defect(&lhs, &sum));
        }
        worst
    }

    /// `uⁿ` from the closed geometric-series formula with `S_k = (2/3)τΣ_{j=2}^k w^j`.
    pub fn geometric_series_u(&self, n: usize) -> Vector {
        assert!(n >= 2 && n <= self.steps());
        let tau = self.tau();
        let mut s = Vector::zeros(self.dim());
        let mut out = Vector::zeros(self.dim());
        for k in 2..=n {
            s += &self.w[k] * (2.0 / 3.0 * tau);
            out += &s * (1.0f64 / 3.0).powi((n - k) as i32);
        }
        let q = (1.0f64 / 3.0).powi(n as i32 - 1);
        out + &self.u[1] * (0.5 * (3.0 - q)) - &self.u[0] * (0.5 * (1.0 - q))
    }

    pub fn geometric_series_defect(&self) -> f64 {
        (2..=self.steps())
            .map(|n| rel_defect(&self.geometric_series_u(n), &self.u[n]))
            .fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Columns `t_n, u_i…, w_i…, xi_k…, residual`; the `n = 0` row leaves ξ and residual empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let dim = self.dim();
        let dim_u = self.xi.first().map_or(0, |x| x.len());
        let mut header = vec!["t_n".to_string()];
        header.extend((0..dim).map(|i| format!("u_{i}")));
        header.extend((0..dim).map(|i| format!("w_{i}")));
        header.extend((0..dim_u).map(|k| format!("xi_{k}")));
        header.push("residual".into());
        wtr.write_record(&header).map_err(csv_err)?;
        for n in 0..=self.steps() {
            let mut row = vec![fmt_num(self.grid.node(n))];
            row.extend(self.u[n].iter().map(|&x| fmt_num(x)));
            row.extend(self.w[n].iter().map(|&x| fmt_num(x)));
            if n == 0 {
                row.extend(std::iter::repeat_n(String::new(), dim_u + 1));
            } else {
                row.extend(self.xi[n - 1].iter().map(|&x| fmt_num(x)));
                row.push(fmt_num(self.residuals[n - 1]));
            }
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Columns `step, iteration, epsilon, residual`.
    pub fn write_solver_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["step", "iteration", "epsilon", "residual"]).map_err(csv_err)?;
        for (n, trace) in self.traces.iter().enumerate() {
            for rec in trace {
                wtr.write_record([
                    (n + 1).to_string(),
                    rec.iteration.to_string(),
                    fmt_num(rec.epsilon),
                    fmt_num(rec.residual),
                ])
                .map_err(csv_err)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Full double precision: 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{build_rod_problem, rod_body_force, scalar_linear_problem, two_dof_system, RodParams};
    use crate::spaces::Matrix;
    use crate::timegrid::{LoadFn, LoadSpec};

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn double_step_examples() {
        let c = v(3.7);
        assert_eq!(double_step_derivative(&c, &c, &c, 0.2).unwrap()[0], 0.0);
        let d = double_step_derivative(&v(1.0), &v(0.25), &v(0.0), 0.5).unwrap();
        assert_eq!(d[0], 2.0);
        let tau = 0.1;
        let d = double_step_derivative(&v(2.0 * tau), &v(tau), &v(0.0), tau).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert!(double_step_derivative(&v(1.0), &Vector::zeros(2), &v(0.0), 0.1).is_err());
    }

    #[test]
    fn first_rhs_examples() {
        let s = GalerkinSetting::scalar();
        let data = |u0: f64, w0: f64| InitialData {
            u0_tau: v(u0),
            w0_tau: v(w0),
            u0_target: v(u0),
            w0_target: v(w0),
            scale_cap: 1.0,
            rescaled: false,
        };
        let r = assemble_first_rhs(&s, &OperatorB::zero(1), &data(0.0, 0.0), &v(3.0), 0.2);
        assert!((r[0] - 0.6).abs() < 1e-15);
        let r = assemble_first_rhs(&s, &OperatorB::zero(1), &data(0.0, 2.0), &v(1.0), 0.1);
        assert!((r[0] - 2.1).abs() < 1e-15);
        let b = OperatorB::new(Matrix::identity(1, 1)).unwrap();
        let r = assemble_first_rhs(&s, &b, &data(1.0, 0.0), &v(0.0), 0.5);
        assert_eq!(r[0], -0.5);
    }

    #[test]
    fn step_rhs_examples() {
        let s = GalerkinSetting::scalar();
        let zero = vec![v(0.0), v(0.0)];
        let r = assemble_step_rhs(&s, &OperatorB::zero(1), &zero, &zero, 2, &v(4.0), 0.25).unwrap();
        assert_eq!(r[0], 1.0);
        let ones = vec![v(1.0), v(1.0)];
        let r = assemble_step_rhs(&s, &OperatorB::zero(1), &zero, &ones, 2, &v(2.0), 0.1).unwrap();
        assert!((r[0] - (0.2 + 1.5)).abs() < 1e-15);
        let b = OperatorB::new(Matrix::identity(1, 1)).unwrap();
        let r = assemble_step_rhs(&s, &b, &ones, &zero, 2, &v(0.0), 0.3).unwrap();
        assert!((r[0] + 0.3).abs() < 1e-15);
        assert!(assemble_step_rhs(&s, &b, &ones, &zero, 1, &v(0.0), 0.3).is_err());
    }

    #[test]
    fn zero_problem_stays_zero() {
        let p = scalar_linear_problem(1.0, LoadSpec::with_default_order(LoadFn::Zero { dim: 1 }), 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let traj = run_scheme(&p, &grid, &SchemeOptions::default()).unwrap();
        assert!(traj.u.iter().chain(&traj.w).all(|x| x[0] == 0.0));
    }

    #[test]
    fn scalar_first_step_closed_form() {
        let alpha = 2.0;
        let load = LoadSpec::with_default_order(LoadFn::Polynomial {
            coefficients: vec![vec![1.0, 3.0]],
        });
        let p = scalar_linear_problem(alpha, load, 0.5, -0.7).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let traj = run_scheme(&p, &grid, &SchemeOptions::default()).unwrap();
        let tau = 0.1;
        let f1 = 1.0 + 3.0 * tau / 2.0;
        let w1 = (tau * f1 - 0.7) / (1.0 + tau * alpha);
        assert!((traj.w[1][0] - w1).abs() < 1e-12);

        // the double steps are the linear recurrence (3/2 + τα)wⁿ = τfⁿ + 2wⁿ⁻¹ − ½wⁿ⁻²
        let mut w = vec![-0.7, w1];
        for n in 2..=10 {
            let t = n as f64 * tau;
            let fn_ = 1.0 + 3.0 * t;
            w.push((tau * fn_ + 2.0 * w[n - 1] - 0.5 * w[n - 2]) / (1.5 + tau * alpha));
        }
        for n in 0..=10 {
            assert!((traj.w[n][0] - w[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn structural_identities_hold_on_rod() {
        let rod = build_rod_problem(&RodParams::default()).unwrap();
        let load = rod_body_force(&rod, &[1.0, -2.0, 0.5], 4).unwrap();
        let rod = rod.with_load(load).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let traj = run_scheme(&rod, &grid, &SchemeOptions::default()).unwrap();
        assert!(traj.max_residual() <= 1e-8);
        assert!(traj.consistency_defect() <= 1e-10);
        assert!(traj.telescoping_defect() <= 1e-9);
        assert!(traj.geometric_series_defect() <= 1e-8);
        for (n, xi) in traj.xi.iter().enumerate() {
            let s = rod.setting.apply_trace(&traj.w[n + 1]);
            assert!(rod.j.contains(&s, xi));
        }
    }

    #[test]
    fn superposition_of_linear_scheme() {
        let base = two_dof_system(true).unwrap();
        let base = crate::problems::ProblemInstance {
            j: Superpotential::zero(1),
            ..base
        };
        let load = |s: f64| {
            LoadSpec::with_default_order(LoadFn::Polynomial {
                coefficients: vec![vec![s, 0.5 * s], vec![-s, 0.0, 2.0 * s]],
            })
        };
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let one = run_scheme(&base.clone().with_load(load(1.0)).unwrap(), &grid, &SchemeOptions::default()).unwrap();
        let two = run_scheme(&base.with_load(load(2.0)).unwrap(), &grid, &SchemeOptions::default()).unwrap();
        for n in 0..=16 {
            assert!((&two.u[n] - &one.u[n] * 2.0).amax() <= 1e-10 * (1.0 + one.u[n].amax()));
            assert!((&two.w[n] - &one.w[n] * 2.0).amax() <= 1e-10 * (1.0 + one.w[n].amax()));
        }
    }

    #[test]
    fn tau_threshold_is_enforced() {
        let setting = GalerkinSetting::scalar();
        let a = OperatorA::linear(
            Matrix::identity(1, 1),
            crate::spaces::AConstants {
                growth_a: 0.0,
                growth_b: 1.0,
                coercive_alpha: 1.0,
                coercive_beta: 4.0,
            },
        )
        .unwrap();
        let j = Superpotential::zero(1);
        assert_eq!(tau_threshold(&setting, &a, &j).unwrap(), 0.25);
        let p = ProblemInstance::new(
            setting,
            a,
            OperatorB::zero(1),
            j,
            LoadSpec::with_default_order(LoadFn::Zero { dim: 1 }),
            v(0.0),
            v(0.0),
            "beta",
        )
        .unwrap();
        let err = run_scheme(&p, &TimeGrid::new(1.0, 2).unwrap(), &SchemeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
        assert!(run_scheme(&p, &TimeGrid::new(1.0, 8).unwrap(), &SchemeOptions::default()).is_ok());
    }

    #[test]
    fn non_convergence_reports_step() {
        let rod = build_rod_problem(&RodParams::default()).unwrap();
        let load = rod_body_force(&rod, &[3.0], 4).unwrap();
        let rod = rod.with_load(load).unwrap();
        let opts = SchemeOptions {
            solver: SolveOptions {
                tol_residual: 1e-300,
                ..SolveOptions::default()
            },
            ..SchemeOptions::default()
        };
        match run_scheme(&rod, &TimeGrid::new(1.0, 4).unwrap(), &opts) {
            Err(Error::NonConvergence { step, .. }) => assert_eq!(step, Some(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_layout() {
        let p = scalar_linear_problem(1.0, LoadSpec::with_default_order(LoadFn::Zero { dim: 1 }), 1.0, 0.0).unwrap();
        let traj = run_scheme(&p, &TimeGrid::new(1.0, 4).unwrap(), &SchemeOptions::default()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t_n,u_0,w_0,xi_0,residual");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "0.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0,,");
    }
}

#[cfg(test)]
mod proptests {
    use proptest::prelude::*;

    use super::*;
    use crate::problems::ProblemInstance;
    use crate::spaces::{Matrix, OperatorA, OperatorB, ScalarLaw, Superpotential};
    use crate::timegrid::{LoadFn, LoadSpec};

    fn friction_scalar(alpha: f64, mu_s: f64, mu_k: f64, w0: f64, load: f64) -> ProblemInstance {
        let setting = GalerkinSetting::scalar();
        let a = OperatorA::linear_auto(&setting, Matrix::from_element(1, 1, alpha)).unwrap();
        let j = Superpotential::new(vec![ScalarLaw::friction(mu_s, mu_k, 1.0).unwrap()], mu_s).unwrap();
        ProblemInstance::new(
            setting,
            a,
            OperatorB::new(Matrix::from_element(1, 1, 0.5)).unwrap(),
            j,
            LoadSpec::with_default_order(LoadFn::Polynomial {
                coefficients: vec![vec![load, -load]],
            }),
            Vector::zeros(1),
            Vector::from_element(1, w0),
            "friction-scalar",
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scheme_relations_hold(
            alpha in 0.5..3.0f64,
            mu_k in 0.1..0.8f64,
            extra in 0.0..0.5f64,
            w0 in -1.0..1.0f64,
            load in -3.0..3.0f64,
            steps in 4usize..24,
        ) {
            let p = friction_scalar(alpha, mu_k + extra, mu_k, w0, load);
            let traj = run_scheme(&p, &TimeGrid::new(1.0, steps).unwrap(), &SchemeOptions::default()).unwrap();
            prop_assert!(traj.max_residual() <= 1e-8);
            prop_assert!(traj.consistency_defect() <= 1e-12);
            prop_assert!(traj.telescoping_defect() <= 1e-12);
            prop_assert!(traj.geometric_series_defect() <= 1e-10);
            for n in 1..=steps {
                let s = p.setting.apply_trace(&traj.w[n]);
                prop_assert!(p.j.contains(&s, &traj.xi[n - 1]));
            }
        }
    }
}
