//! Problem builders: small ODE systems, a viscoelastic rod with a nonmonotone
//! friction law at its free end, and manufactured solutions.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{GalerkinSetting, Matrix, OperatorA, OperatorB, ScalarLaw, Superpotential, Vector};
use crate::timegrid::{LoadFn, LoadSpec};

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub setting: GalerkinSetting,
    pub a: OperatorA,
    pub b: OperatorB,
    pub j: Superpotential,
    pub load: LoadSpec,
    pub u0: Vector,
    pub w0: Vector,
    pub label: String,
}

impl ProblemInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        setting: GalerkinSetting,
        a: OperatorA,
        b: OperatorB,
        j: Superpotential,
        load: LoadSpec,
        u0: Vector,
        w0: Vector,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = setting.dim_v();
        let shapes = [
            ("A", a.dim()),
            ("B", b.matrix().nrows()),
            ("load", load.dim()),
            ("u0", u0.len()),
            ("w0", w0.len()),
        ];
        for (name, dim) in shapes {
            if dim != n {
                return Err(Error::Setup(format!("{name} has dimension {dim}, expected dim V = {n}")));
            }
        }
        if j.dim() != setting.dim_u() {
            return Err(Error::Setup(format!(
                "j has dimension {}, expected dim U = {}",
                j.dim(),
                setting.dim_u()
            )));
        }
        Ok(Self {
            setting,
            a,
            b,
            j,
            load,
            u0,
            w0,
            label: label.into(),
        })
    }

    pub fn with_load(mut self, load: LoadSpec) -> Result<Self> {
        if load.dim() != self.setting.dim_v() {
            return Err(Error::Setup(format!(
                "load has dimension {}, expected {}",
                load.dim(),
                self.setting.dim_v()
            )));
        }
        self.load = load;
        Ok(self)
    }

    pub fn with_initial(mut self, u0: Vector, w0: Vector) -> Result<Self> {
        let n = self.setting.dim_v();
        if u0.len() != n || w0.len() != n {
            return Err(Error::Setup(format!("initial data must have length {n}")));
        }
        self.u0 = u0;
        self.w0 = w0;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.setting.dim_v()
    }
}

/// `j(s) = μ_k|s| + (μ_s − μ_k)(1 − e^{−λ|s|})/λ`, with `∂j(0) = [−μ_s, μ_s]`.
pub fn friction_potential(mu_static: f64, mu_kinetic: f64, slope: f64) -> Result<Superpotential> {
    let law = ScalarLaw::friction(mu_static, mu_kinetic, slope)?;
    Superpotential::new(vec![law], mu_static)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodParams {
    pub elements: usize,
    pub viscosity: f64,
    pub elasticity: f64,
    pub mu_static: f64,
    pub mu_kinetic: f64,
    pub slope: f64,
}

impl Default for RodParams {
    fn default() -> Self {
        Self {
            elements: 8,
            viscosity: 1.0,
            elasticity: 1.0,
            mu_static: 0.6,
            mu_kinetic: 0.3,
            slope: 2.0,
        }
    }
}

/// P1 mass and stiffness matrices on `[0, 1]` with the left node removed.
pub fn rod_matrices(elements: usize) -> Result<(Matrix, Matrix)> {
    if elements < 2 {
        return Err(Error::Argument(format!("rod needs at least 2 elements, got {elements}")));
    }
    let n = elements;
    let h = 1.0 / n as f64;
    let local_m = [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let local_k = [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    let mut mass = Matrix::zeros(n, n);
    let mut stiff = Matrix::zeros(n, n);
    for e in 0..n {
        // global nodes e and e+1; node 0 is clamped, node k ↦ dof k−1
        let dofs = [e.checked_sub(1), Some(e)];
        for (a, da) in dofs.iter().enumerate() {
            for (b, db) in dofs.iter().enumerate() {
                if let (Some(i), Some(j)) = (da, db) {
                    mass[(*i, *j)] += local_m[a][b];
                    stiff[(*i, *j)] += local_k[a][b];
                }
            }
        }
    }
    Ok((mass, stiff))
}

/// Viscoelastic rod, clamped at 0, friction contact at 1. Zero load and initial data.
pub fn build_rod_problem(params: &RodParams) -> Result<ProblemInstance> {
    let RodParams {
        elements,
        viscosity,
        elasticity,
        mu_static,
        mu_kinetic,
        slope,
    } = *params;
    if !(viscosity > 0.0) {
        return Err(Error::Argument(format!("viscosity must be positive, got {viscosity}")));
    }
    if !(elasticity >= 0.0) {
        return Err(Error::Argument(format!("elasticity must be nonnegative, got {elasticity}")));
    }
    let (mass, stiff) = rod_matrices(elements)?;
    let mut trace = Matrix::zeros(1, elements);
    trace[(0, elements - 1)] = 1.0;
    let setting = GalerkinSetting::new(&stiff + &mass, mass, trace, Matrix::identity(1, 1))?;
    let a = OperatorA::linear_auto(&setting, &stiff * viscosity)?;
    let b = if elasticity == 0.0 {
        OperatorB::zero(elements)
    } else {
        OperatorB::new(&stiff * elasticity)?
    };
    let j = friction_potential(mu_static, mu_kinetic, slope)?;
    ProblemInstance::new(
        setting,
        a,
        b,
        j,
        LoadSpec::with_default_order(LoadFn::Zero { dim: elements }),
        Vector::zeros(elements),
        Vector::zeros(elements),
        format!("rod-{elements}"),
    )
}

/// Uniform body force `p(t)` on the rod, `f_i(t) = p(t)∫φ_i`, with `p` given by ascending coefficients.
pub fn rod_body_force(problem: &ProblemInstance, profile: &[f64], quadrature_order: usize) -> Result<LoadSpec> {
    let n = problem.dim();
    let h = 1.0 / n as f64;
    let coefficients = (0..n)
        .map(|i| if i + 1 == n { 0.5 * h } else { h })
        .map(|d| profile.iter().map(|&c| c * d).collect())
        .collect();
    LoadSpec::new(LoadFn::Polynomial { coefficients }, quadrature_order)
}

/// `V = H = R`, `A = α`, `B = 0`, `j ≡ 0`.
pub fn scalar_linear_problem(alpha: f64, load: LoadSpec, u0: f64, w0: f64) -> Result<ProblemInstance> {
    let setting = GalerkinSetting::scalar();
    let a = OperatorA::linear_auto(&setting, Matrix::from_element(1, 1, alpha))?;
    ProblemInstance::new(
        setting,
        a,
        OperatorB::zero(1),
        Superpotential::zero(1),
        load,
        Vector::from_element(1, u0),
        Vector::from_element(1, w0),
        "scalar-linear",
    )
}

/// Prescribed exact displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExactSolution {
    Constant { value: Vec<f64> },
    /// `u(t) = c0 + c1·t + c2·t²`.
    Quadratic { c0: Vec<f64>, c1: Vec<f64>, c2: Vec<f64> },
    /// `u(t) = sin(ω t)·φ`.
    SinMode { mode: Vec<f64>, frequency: f64 },
}

impl ExactSolution {
    pub fn dim(&self) -> usize {
        match self {
            ExactSolution::Constant { value } => value.len(),
            ExactSolution::Quadratic { c0, .. } => c0.len(),
            ExactSolution::SinMode { mode, .. } => mode.len(),
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        let consistent = match self {
            ExactSolution::Quadratic { c1, c2, .. } => c1.len() == n && c2.len() == n,
            _ => true,
        };
        if !consistent || n == 0 {
            return Err(Error::Construction("exact solution coefficients have inconsistent lengths".into()));
        }
        Ok(())
    }

    pub fn u(&self, t: f64) -> Vector {
        match self {
            ExactSolution::Constant { value } => Vector::from_column_slice(value),
            ExactSolution::Quadratic { c0, c1, c2 } => {
                Vector::from_iterator(c0.len(), (0..c0.len()).map(|i| c0[i] + c1[i] * t + c2[i] * t * t))
            }
            ExactSolution::SinMode { mode, frequency } => Vector::from_column_slice(mode) * (frequency * t).sin(),
        }
    }

    pub fn w(&self, t: f64) -> Vector {
        match self {
            ExactSolution::Constant { value } => Vector::zeros(value.len()),
            ExactSolution::Quadratic { c1, c2, .. } => {
                Vector::from_iterator(c1.len(), (0..c1.len()).map(|i| c1[i] + 2.0 * c2[i] * t))
            }
            ExactSolution::SinMode { mode, frequency } => {
                Vector::from_column_slice(mode) * (frequency * (frequency * t).cos())
            }
        }
    }

    pub fn w_dot(&self, t: f64) -> Vector {
        match self {
            ExactSolution::Constant { value } => Vector::zeros(value.len()),
            ExactSolution::Quadratic { c2, .. } => Vector::from_iterator(c2.len(), c2.iter().map(|c| 2.0 * c)),
            ExactSolution::SinMode { mode, frequency } => {
                Vector::from_column_slice(mode) * (-frequency * frequency * (frequency * t).sin())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManufacturedCase {
    pub exact: ExactSolution,
    setting: GalerkinSetting,
    j: Superpotential,
}

impl ManufacturedCase {
    pub fn u_exact(&self, t: f64) -> Vector {
        self.exact.u(t)
    }

    pub fn w_exact(&self, t: f64) -> Vector {
        self.exact.w(t)
    }

    pub fn exact_xi(&self, t: f64) -> Vector {
        let s = self.setting.apply_trace(&self.exact.w(t));
        self.j.gradient(&s).unwrap_or_else(|| Vector::zeros(s.len()))
    }

    /// Largest relative deviation between `w_exact` and a central difference of `u_exact`
    /// at `samples` random times in `[0, horizon]`.
    pub fn derivative_check(&self, horizon: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0_f64;
        for _ in 0..samples {
            let t = rng.random_range(0.0..horizon);
            let h = 1e-5 * (1.0 + t.abs());
            let fd = (self.exact.u(t + h) - self.exact.u(t - h)) / (2.0 * h);
            let w = self.exact.w(t);
            worst = worst.max((fd - &w).amax() / (1.0 + w.amax()));
        }
        worst
    }
}

/// Replaces the load by the residual of the exact solution and the initial data by
/// its values at 0. `horizon` bounds the times sampled for the smoothness check.
pub fn manufactured_problem(
    base: &ProblemInstance,
    exact: ExactSolution,
    horizon: f64,
) -> Result<(ProblemInstance, ManufacturedCase)> {
    exact.check()?;
    let n = base.dim();
    if exact.dim() != n {
        return Err(Error::Construction(format!(
            "exact solution has dimension {}, expected {n}",
            exact.dim()
        )));
    }
    if !base.j.is_zero() {
        let samples = 2000;
        let trace_at = |k: usize| {
            let t = horizon * k as f64 / samples as f64;
            (t, base.setting.apply_trace(&exact.w(t)))
        };
        let (mut t_prev, mut s_prev) = trace_at(0);
        for k in 1..=samples {
            let (t, s) = trace_at(k);
            for (i, law) in base.j.laws().iter().enumerate() {
                let (lo, hi) = (s_prev[i].min(s[i]), s_prev[i].max(s[i]));
                if let Some(kink) = law.kinks().iter().find(|&&c| lo <= c && c <= hi) {
                    let at = if s_prev[i] == *kink { t_prev } else { t };
                    return Err(Error::Construction(format!(
                        "ιw_exact(t) reaches the kink {kink} of j near t = {at}"
                    )));
                }
            }
            (t_prev, s_prev) = (t, s);
        }
    }

    let setting = base.setting.clone();
    let a = base.a.clone();
    let b = base.b.clone();
    let j = base.j.clone();
    let sol = exact.clone();
    let residual = move |t: f64| -> Vector {
        let w = sol.w(t);
        let mut f = setting.embed_h(&sol.w_dot(t)) + a.apply(&w) + b.apply(&sol.u(t));
        if !j.is_zero() {
            let s = setting.apply_trace(&w);
            if let Some(g) = j.gradient(&s) {
                f += setting.trace_adjoint(&g);
            }
        }
        f
    };
    let load = LoadSpec::new(LoadFn::custom(n, residual), base.load.quadrature_order())?;
    let instance = base
        .clone()
        .with_load(load)?
        .with_initial(exact.u(0.0), exact.w(0.0))?;
    let instance = ProblemInstance {
        label: format!("{}-manufactured", base.label),
        ..instance
    };
    let case = ManufacturedCase {
        exact,
        setting: base.setting.clone(),
        j: base.j.clone(),
    };
    Ok((instance, case))
}

/// Two-dof system with SPD `A`, `B` and a quadratic trace potential.
pub fn two_dof_system(with_b: bool) -> Result<ProblemInstance> {
    let setting = GalerkinSetting::new(
        Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]),
        Matrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.75]),
        Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
        Matrix::identity(1, 1),
    )?;
    let a = OperatorA::linear_auto(&setting, Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]))?;
    let b = if with_b {
        OperatorB::new(Matrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.8]))?
    } else {
        OperatorB::zero(2)
    };
    let j = Superpotential::new(vec![ScalarLaw::Quadratic { stiffness: 0.5 }], 0.5)?;
    ProblemInstance::new(
        setting,
        a,
        b,
        j,
        LoadSpec::with_default_order(LoadFn::Zero { dim: 2 }),
        Vector::zeros(2),
        Vector::zeros(2),
        "two-dof",
    )
}
