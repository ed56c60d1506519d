//! Finite-dimensional Galerkin realization of the evolution triple `V ⊂ H ⊂ V*`
//! together with the operators `A`, `B`, the trace `ι` and the superpotential `j`.
//!
//! Every space shares one coordinate basis. The duality pairing `⟨l, v⟩` is the
//! plain dot product, so `i*i` is the H-Gram matrix and `ι*` is the transposed
//! trace matrix. Dual norms go through a Cholesky factor of the relevant Gram
//! matrix that is computed once at construction.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Absolute tolerance of subdifferential membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone)]
pub struct GalerkinSetting {
    gram_v: Matrix,
    gram_h: Matrix,
    gram_u: Matrix,
    trace: Matrix,
    chol_v: Cholesky<f64, Dyn>,
    chol_u: Cholesky<f64, Dyn>,
}

impl fmt::Debug for GalerkinSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GalerkinSetting")
            .field("dim_v", &self.dim_v())
            .field("dim_u", &self.dim_u())
            .finish_non_exhaustive()
    }
}

fn check_spd(m: &Matrix, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Setup(format!("{name} is not square")));
    }
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::Setup(format!("{name} is not symmetric")));
    }
    let min = linalg::sym_eigenvalues(m).first().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::Setup(format!(
            "{name} is not positive definite (smallest eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

impl GalerkinSetting {
    pub fn new(gram_v: Matrix, gram_h: Matrix, trace: Matrix, gram_u: Matrix) -> Result<Self> {
        check_spd(&gram_v, "gram_v")?;
        check_spd(&gram_h, "gram_h")?;
        check_spd(&gram_u, "gram_u")?;
        if gram_h.nrows() != gram_v.nrows() {
            return Err(Error::Setup(format!(
                "gram_h is {}x{} but gram_v is {}x{}",
                gram_h.nrows(),
                gram_h.ncols(),
                gram_v.nrows(),
                gram_v.ncols()
            )));
        }
        if trace.nrows() != gram_u.nrows() || trace.ncols() != gram_v.nrows() {
            return Err(Error::Setup(format!(
                "trace must be {}x{}, got {}x{}",
                gram_u.nrows(),
                gram_v.nrows(),
                trace.nrows(),
                trace.ncols()
            )));
        }
        let chol_v = linalg::factor_spd(&gram_v, "gram_v")?;
        let chol_u = linalg::factor_spd(&gram_u, "gram_u")?;
        Ok(Self {
            gram_v,
            gram_h,
            gram_u,
            trace,
            chol_v,
            chol_u,
        })
    }

    /// All Gram matrices equal to the identity.
    pub fn euclidean(trace: Matrix) -> Result<Self> {
        let (m, n) = trace.shape();
        Self::new(
            Matrix::identity(n, n),
            Matrix::identity(n, n),
            trace,
            Matrix::identity(m, m),
        )
    }

    /// `V = H = U = R` with unit Grams and `ι = 1`.
    pub fn scalar() -> Self {
        Self::euclidean(Matrix::from_element(1, 1, 1.0)).expect("unit scalar setting")
    }

    pub fn dim_v(&self) -> usize {
        self.gram_v.nrows()
    }

    pub fn dim_u(&self) -> usize {
        self.gram_u.nrows()
    }

    pub fn gram_v(&self) -> &Matrix {
        &self.gram_v
    }

    pub fn gram_h(&self) -> &Matrix {
        &self.gram_h
    }

    pub fn gram_u(&self) -> &Matrix {
        &self.gram_u
    }

    pub fn trace(&self) -> &Matrix {
        &self.trace
    }

    pub fn pairing(&self, l: &Vector, v: &Vector) -> f64 {
        l.dot(v)
    }

    pub fn norm_v(&self, v: &Vector) -> f64 {
        quad(&self.gram_v, v).max(0.0).sqrt()
    }

    pub fn norm_h(&self, v: &Vector) -> f64 {
        quad(&self.gram_h, v).max(0.0).sqrt()
    }

    pub fn inner_h(&self, a: &Vector, b: &Vector) -> f64 {
        a.dot(&(&self.gram_h * b))
    }

    pub fn norm_u(&self, u: &Vector) -> f64 {
        quad(&self.gram_u, u).max(0.0).sqrt()
    }

    /// `‖l‖_{V*} = sqrt(lᵀ G_V⁻¹ l)`.
    pub fn dual_norm(&self, l: &Vector) -> f64 {
        debug_assert_eq!(l.len(), self.dim_v());
        l.dot(&self.chol_v.solve(l)).max(0.0).sqrt()
    }

    /// `‖ξ‖_{U*} = sqrt(ξᵀ G_U⁻¹ ξ)`.
    pub fn dual_norm_u(&self, xi: &Vector) -> f64 {
        debug_assert_eq!(xi.len(), self.dim_u());
        xi.dot(&self.chol_u.solve(xi)).max(0.0).sqrt()
    }

    /// `i*i v`: the element of `V*` representing `v ∈ H`.
    pub fn embed_h(&self, v: &Vector) -> Vector {
        &self.gram_h * v
    }

    /// `‖i*i v‖_{V*}`, the V* norm of an H element.
    pub fn embedded_dual_norm(&self, v: &Vector) -> f64 {
        self.dual_norm(&self.embed_h(v))
    }

    /// `G_V⁻¹ l`, the Riesz representative of a functional.
    pub fn riesz(&self, l: &Vector) -> Vector {
        self.chol_v.solve(l)
    }

    pub fn apply_trace(&self, v: &Vector) -> Vector {
        &self.trace * v
    }

    pub fn trace_adjoint(&self, xi: &Vector) -> Vector {
        self.trace.transpose() * xi
    }

    /// Smallest `c` with `‖ιv‖²_U ≤ ε‖v‖² + c|v|²` for all `v`.
    pub fn trace_interpolation_constant(&self, eps: f64) -> Result<f64> {
        let tt = self.trace.transpose() * &self.gram_u * &self.trace;
        let pencil = tt - &self.gram_v * eps;
        let ev = linalg::generalized_eigenvalues(&pencil, &self.gram_h)?;
        Ok(ev.last().copied().unwrap_or(0.0).max(0.0))
    }
}

fn quad(m: &Matrix, v: &Vector) -> f64 {
    v.dot(&(m * v))
}

/// Inner product used by the identity sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    Gram(Matrix),
}

impl Metric {
    pub fn inner(&self, a: &Vector, b: &Vector) -> f64 {
        match self {
            Metric::Euclidean => a.dot(b),
            Metric::Gram(g) => a.dot(&(g * b)),
        }
    }

    pub fn norm_sq(&self, a: &Vector) -> f64 {
        self.inner(a, a)
    }
}

/// Map `V → V*` used for the viscosity operator.
pub trait VectorField: Send + Sync {
    fn apply(&self, v: &Vector) -> Vector;

    /// Derivative matrix at `v`, if available in closed form.
    fn jacobian(&self, _v: &Vector) -> Option<Matrix> {
        None
    }
}

#[derive(Debug, Clone)]
struct LinearField(Matrix);

impl VectorField for LinearField {
    fn apply(&self, v: &Vector) -> Vector {
        &self.0 * v
    }

    fn jacobian(&self, _v: &Vector) -> Option<Matrix> {
        Some(self.0.clone())
    }
}

/// `v ↦ Mv + c ⊙ v³/(1 + v²)`: monotone, linearly bounded diagonal perturbation.
#[derive(Debug, Clone)]
struct SaturatedCubicField {
    matrix: Matrix,
    coeffs: Vector,
}

impl VectorField for SaturatedCubicField {
    fn apply(&self, v: &Vector) -> Vector {
        let mut out = &self.matrix * v;
        for (k, (&c, &x)) in self.coeffs.iter().zip(v.iter()).enumerate() {
            out[k] += c * x.powi(3) / (1.0 + x * x);
        }
        out
    }

    fn jacobian(&self, v: &Vector) -> Option<Matrix> {
        let mut jac = self.matrix.clone();
        for (k, (&c, &x)) in self.coeffs.iter().zip(v.iter()).enumerate() {
            let x2 = x * x;
            jac[(k, k)] += c * (3.0 * x2 + x2 * x2) / (1.0 + x2).powi(2);
        }
        Some(jac)
    }
}

struct ClosureField<F>(F);

impl<F> VectorField for ClosureField<F>
where
    F: Fn(&Vector) -> Vector + Send + Sync,
{
    fn apply(&self, v: &Vector) -> Vector {
        (self.0)(v)
    }
}

/// Declared constants of the growth and coercivity hypotheses on `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AConstants {
    pub growth_a: f64,
    pub growth_b: f64,
    pub coercive_alpha: f64,
    pub coercive_beta: f64,
}

/// Viscosity operator `A: V → V*`.
///
/// Pseudomonotonicity is declared by the caller, never checked.
#[derive(Clone)]
pub struct OperatorA {
    field: Arc<dyn VectorField>,
    constants: AConstants,
    linear: Option<Matrix>,
    dim: usize,
}

impl fmt::Debug for OperatorA {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorA")
            .field("dim", &self.dim)
            .field("linear", &self.linear.is_some())
            .field("constants", &self.constants)
            .finish()
    }
}

impl OperatorA {
    pub fn linear(matrix: Matrix, constants: AConstants) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Setup("operator A matrix is not square".into()));
        }
        check_constants(&constants)?;
        let dim = matrix.nrows();
        Ok(Self {
            field: Arc::new(LinearField(matrix.clone())),
            constants,
            linear: Some(matrix),
            dim,
        })
    }

    /// Linear `A` with constants derived from the pencils of the setting.
    pub fn linear_auto(setting: &GalerkinSetting, matrix: Matrix) -> Result<Self> {
        let constants = linear_constants(setting, &matrix)?;
        Self::linear(matrix, constants)
    }

    /// `A(v) = Mv + c ⊙ v³/(1+v²)` with nonnegative `c`.
    pub fn saturated_cubic(setting: &GalerkinSetting, matrix: Matrix, coeffs: Vector) -> Result<Self> {
        if coeffs.len() != matrix.nrows() {
            return Err(Error::Setup("cubic coefficient length does not match A".into()));
        }
        if coeffs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Setup("cubic coefficients must be finite and nonnegative".into()));
        }
        let mut constants = linear_constants(setting, &matrix)?;
        let min_gram = linalg::sym_eigenvalues(setting.gram_v())[0];
        constants.growth_b += coeffs.amax() / min_gram * (1.0 + 1e-9);
        check_constants(&constants)?;
        let dim = matrix.nrows();
        Ok(Self {
            field: Arc::new(SaturatedCubicField { matrix, coeffs }),
            constants,
            linear: None,
            dim,
        })
    }

    /// Black-box `A`; Newton falls back to finite-difference Jacobians.
    pub fn from_fn<F>(dim: usize, f: F, constants: AConstants) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        check_constants(&constants)?;
        Ok(Self {
            field: Arc::new(ClosureField(f)),
            constants,
            linear: None,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        self.field.apply(v)
    }

    pub fn jacobian(&self, v: &Vector) -> Option<Matrix> {
        self.field.jacobian(v)
    }

    /// Closed-form Jacobian, or central differences with step `1e-6·(1+‖v‖₂)`.
    pub fn jacobian_or_fd(&self, v: &Vector) -> Matrix {
        if let Some(j) = self.jacobian(v) {
            return j;
        }
        let h = 1e-6 * (1.0 + v.norm());
        let n = v.len();
        let mut jac = Matrix::zeros(n, n);
        for k in 0..n {
            let mut plus = v.clone();
            let mut minus = v.clone();
            plus[k] += h;
            minus[k] -= h;
            let col = (self.apply(&plus) - self.apply(&minus)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        jac
    }

    pub fn constants(&self) -> &AConstants {
        &self.constants
    }

    pub fn linear_matrix(&self) -> Option<&Matrix> {
        self.linear.as_ref()
    }
}

fn check_constants(c: &AConstants) -> Result<()> {
    let ok = c.growth_a >= 0.0 && c.growth_b > 0.0 && c.coercive_alpha > 0.0 && c.coercive_beta >= 0.0;
    if !ok || ![c.growth_a, c.growth_b, c.coercive_alpha, c.coercive_beta].iter().all(|x| x.is_finite()) {
        return Err(Error::Setup(format!(
            "operator A constants out of range: need a ≥ 0, b > 0, α > 0, β ≥ 0, got {c:?}"
        )));
    }
    Ok(())
}

fn linear_constants(setting: &GalerkinSetting, m: &Matrix) -> Result<AConstants> {
    let n = setting.dim_v();
    if m.shape() != (n, n) {
        return Err(Error::Setup(format!("operator A must be {n}x{n}, got {:?}", m.shape())));
    }
    let g = setting.gram_v();
    let ginv_m = Cholesky::new(g.clone())
        .ok_or_else(|| Error::Setup("gram_v: Cholesky factorization failed".into()))?
        .solve(m);
    let growth = m.transpose() * ginv_m;
    let growth_b = linalg::generalized_eigenvalues(&growth, g)?
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0)
        .sqrt()
        * (1.0 + 1e-9);
    let sym = linalg::symmetrize(m);
    let lam_min = linalg::generalized_eigenvalues(&sym, g)?[0];
    let (alpha, beta) = if lam_min > 0.0 {
        (lam_min * (1.0 - 1e-9), 0.0)
    } else {
        let shift = linalg::generalized_eigenvalues(&(g - &sym), setting.gram_h())?
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(0.0);
        (1.0, shift * (1.0 + 1e-9) + 1e-12)
    };
    Ok(AConstants {
        growth_a: 0.0,
        growth_b: growth_b.max(f64::MIN_POSITIVE),
        coercive_alpha: alpha,
        coercive_beta: beta,
    })
}

/// Elasticity operator `B`: linear, symmetric, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorB {
    matrix: Matrix,
}

impl OperatorB {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Setup("operator B is not square".into()));
        }
        if !linalg::is_symmetric(&matrix, 1e-12) {
            return Err(Error::Setup("operator B is not symmetric".into()));
        }
        let min = linalg::sym_eigenvalues(&matrix).first().copied().unwrap_or(0.0);
        if min < -1e-12 * (1.0 + matrix.amax()) {
            return Err(Error::Setup(format!(
                "operator B is not positive semidefinite (smallest eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            matrix: Matrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.matrix * v
    }
}

/// Scalar building block of a separable superpotential `j(u) = Σ_k φ_k(u_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ScalarLaw {
    Zero,
    /// `φ(s) = k s²/2`.
    Quadratic { stiffness: f64 },
    /// Nonmonotone slip-weakening friction with `φ'(s) = sign(s)(μ_k + (μ_s − μ_k)e^{−λ|s|})`.
    Friction {
        mu_static: f64,
        mu_kinetic: f64,
        slope: f64,
    },
}

impl ScalarLaw {
    pub fn friction(mu_static: f64, mu_kinetic: f64, slope: f64) -> Result<Self> {
        let finite = mu_static.is_finite() && mu_kinetic.is_finite() && slope.is_finite();
        if !finite || !(mu_kinetic > 0.0) || mu_static < mu_kinetic {
            return Err(Error::Argument(format!(
                "friction needs mu_static ≥ mu_kinetic > 0, got mu_static={mu_static}, mu_kinetic={mu_kinetic}"
            )));
        }
        if slope < 0.0 {
            return Err(Error::Argument(format!("friction slope must be ≥ 0, got {slope}")));
        }
        Ok(ScalarLaw::Friction {
            mu_static,
            mu_kinetic,
            slope,
        })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ScalarLaw::Zero => Ok(()),
            ScalarLaw::Quadratic { stiffness } if stiffness.is_finite() => Ok(()),
            ScalarLaw::Quadratic { stiffness } => {
                Err(Error::Setup(format!("quadratic stiffness must be finite, got {stiffness}")))
            }
            ScalarLaw::Friction {
                mu_static,
                mu_kinetic,
                slope,
            } => Self::friction(mu_static, mu_kinetic, slope).map(|_| ()),
        }
    }

    /// Slip-rate dependent friction magnitude `g(r)` and its derivative.
    fn friction_magnitude(mu_s: f64, mu_k: f64, slope: f64, r: f64) -> (f64, f64) {
        let decay = (-slope * r).exp();
        (mu_k + (mu_s - mu_k) * decay, -slope * (mu_s - mu_k) * decay)
    }

    pub fn value(&self, s: f64) -> f64 {
        match *self {
            ScalarLaw::Zero => 0.0,
            ScalarLaw::Quadratic { stiffness } => 0.5 * stiffness * s * s,
            ScalarLaw::Friction {
                mu_static,
                mu_kinetic,
                slope,
            } => {
                let r = s.abs();
                if slope == 0.0 {
                    mu_static * r
                } else {
                    mu_kinetic * r + (mu_static - mu_kinetic) * (-(-slope * r).exp_m1()) / slope
                }
            }
        }
    }

    /// Points where the law is not differentiable.
    pub fn kinks(&self) -> &'static [f64] {
        match self {
            ScalarLaw::Friction { .. } => &[0.0],
            _ => &[],
        }
    }

    /// Classical derivative, `None` at a kink.
    pub fn derivative(&self, s: f64) -> Option<f64> {
        match *self {
            ScalarLaw::Zero => Some(0.0),
            ScalarLaw::Quadratic { stiffness } => Some(stiffness * s),
            ScalarLaw::Friction {
                mu_static,
                mu_kinetic,
                slope,
            } => {
                if s == 0.0 {
                    None
                } else {
                    let (g, _) = Self::friction_magnitude(mu_static, mu_kinetic, slope, s.abs());
                    Some(s.signum() * g)
                }
            }
        }
    }

    /// Derivative of the smooth branch on the side of a kink (`side = ±1`), with its slope.
    pub fn branch_derivative(&self, s: f64, side: f64) -> (f64, f64) {
        match *self {
            ScalarLaw::Zero => (0.0, 0.0),
            ScalarLaw::Quadratic { stiffness } => (stiffness * s, stiffness),
            ScalarLaw::Friction {
                mu_static,
                mu_kinetic,
                slope,
            } => {
                let (g, dg) = Self::friction_magnitude(mu_static, mu_kinetic, slope, s.abs());
                (side * g, dg)
            }
        }
    }

    /// Clarke subdifferential as an interval.
    pub fn interval(&self, s: f64) -> (f64, f64) {
        match (self, self.derivative(s)) {
            (_, Some(d)) => (d, d),
            (ScalarLaw::Friction { mu_static, .. }, None) => (-mu_static, *mu_static),
            _ => unreachable!("only friction has kinks"),
        }
    }

    /// Interval of the closed graph of `∂φ` within `tol` of `s`.
    pub fn interval_near(&self, s: f64, tol: f64) -> (f64, f64) {
        match self {
            ScalarLaw::Friction { mu_static, .. } if s.abs() <= tol => (-mu_static, *mu_static),
            _ => self.interval(s),
        }
    }

    /// Ramp-smoothed selection of `∂φ` with width `eps`.
    pub fn smooth_derivative(&self, s: f64, eps: f64) -> f64 {
        match *self {
            ScalarLaw::Friction {
                mu_static,
                mu_kinetic,
                slope,
            } => {
                let (g, _) = Self::friction_magnitude(mu_static, mu_kinetic, slope, s.abs());
                g * (s / eps).clamp(-1.0, 1.0)
            }
            _ => self.derivative(s).unwrap_or(0.0),
        }
    }

    pub fn smooth_second_derivative(&self, s: f64, eps: f64) -> f64 {
        match *self {
            ScalarLaw::Zero => 0.0,
            ScalarLaw::Quadratic { stiffness } => stiffness,
            ScalarLaw::Friction {
                mu_static,
                mu_kinetic,
                slope,
            } => {
                let r = s.abs();
                let (g, dg) = Self::friction_magnitude(mu_static, mu_kinetic, slope, r);
                if r < eps {
                    (dg * r + g) / eps
                } else {
                    dg
                }
            }
        }
    }

    /// Constant `c` with `|ξ| ≤ c(1 + |s|)` for every `ξ ∈ ∂φ(s)`.
    pub fn growth_bound(&self) -> f64 {
        match *self {
            ScalarLaw::Zero => 0.0,
            ScalarLaw::Quadratic { stiffness } => stiffness.abs(),
            ScalarLaw::Friction { mu_static, .. } => mu_static,
        }
    }
}

/// Descriptor of a closed convex subset of `U*`.
#[derive(Debug, Clone, PartialEq)]
pub enum SubdiffSet {
    Box { lower: Vector, upper: Vector },
    /// Convex hull of finitely many points.
    Hull { vertices: Vec<Vector> },
}

impl SubdiffSet {
    pub fn singleton(xi: Vector) -> Self {
        SubdiffSet::Box {
            lower: xi.clone(),
            upper: xi,
        }
    }

    pub fn contains(&self, xi: &Vector, tol: f64) -> bool {
        match self {
            SubdiffSet::Box { lower, upper } => xi
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(&x, (&lo, &hi))| x >= lo - tol && x <= hi + tol),
            SubdiffSet::Hull { .. } => self.distance(xi) <= tol,
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, xi: &Vector) -> Vector {
        match self {
            SubdiffSet::Box { lower, upper } => Vector::from_iterator(
                xi.len(),
                xi.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(&x, (&lo, &hi))| x.clamp(lo, hi)),
            ),
            SubdiffSet::Hull { vertices } => project_onto_hull(vertices, xi),
        }
    }

    /// Euclidean distance to the set.
    pub fn distance(&self, xi: &Vector) -> f64 {
        (self.project(xi) - xi).norm()
    }

    /// Vertices of the set; boxes are enumerated up to `limit` corners.
    pub fn extreme_points(&self, limit: usize) -> Vec<Vector> {
        match self {
            SubdiffSet::Hull { vertices } => vertices.clone(),
            SubdiffSet::Box { lower, upper } => {
                let free: Vec<usize> = (0..lower.len()).filter(|&k| upper[k] > lower[k]).collect();
                let count = if free.len() >= usize::BITS as usize - 1 {
                    limit
                } else {
                    (1usize << free.len()).min(limit)
                };
                (0..count)
                    .map(|mask| {
                        let mut v = lower.clone();
                        for (bit, &k) in free.iter().enumerate() {
                            if bit < usize::BITS as usize && mask >> bit & 1 == 1 {
                                v[k] = upper[k];
                            }
                        }
                        v
                    })
                    .collect()
            }
        }
    }
}

/// Projected gradient on the simplex of convex weights.
fn project_onto_hull(vertices: &[Vector], x: &Vector) -> Vector {
    let m = vertices.len();
    if m == 0 {
        return x.clone();
    }
    let dim = x.len();
    let vmat = Matrix::from_columns(vertices);
    let gram = vmat.transpose() * &vmat;
    let lipschitz = gram.diagonal().sum().max(f64::MIN_POSITIVE);
    let rhs = vmat.transpose() * x;
    let mut weights = Vector::from_element(m, 1.0 / m as f64);
    for _ in 0..5000 {
        let grad = &gram * &weights - &rhs;
        let next = simplex_projection(&(&weights - grad / lipschitz));
        let moved = (&next - &weights).amax();
        weights = next;
        if moved < 1e-15 {
            break;
        }
    }
    let out = &vmat * weights;
    debug_assert_eq!(out.len(), dim);
    out
}

fn simplex_projection(y: &Vector) -> Vector {
    let mut sorted: Vec<f64> = y.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    y.map(|v| (v - theta).max(0.0))
}

/// Separable locally Lipschitz superpotential `j: U → R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Superpotential {
    laws: Vec<ScalarLaw>,
    growth_d: f64,
}

impl Superpotential {
    pub fn new(laws: Vec<ScalarLaw>, growth_d: f64) -> Result<Self> {
        for law in &laws {
            law.validate()?;
        }
        if !(growth_d > 0.0) || !growth_d.is_finite() {
            return Err(Error::Setup(format!("growth constant d must be positive, got {growth_d}")));
        }
        Ok(Self { laws, growth_d })
    }

    /// Growth constant derived from the component bounds and the U-Gram matrix.
    pub fn with_derived_growth(setting: &GalerkinSetting, laws: Vec<ScalarLaw>) -> Result<Self> {
        if laws.len() != setting.dim_u() {
            return Err(Error::Setup(format!(
                "superpotential has {} components but dim U is {}",
                laws.len(),
                setting.dim_u()
            )));
        }
        let c_max = laws.iter().map(ScalarLaw::growth_bound).fold(0.0, f64::max);
        let lam_min = linalg::sym_eigenvalues(setting.gram_u())[0];
        let m = laws.len() as f64;
        let d = c_max / lam_min.sqrt() * m.sqrt().max(1.0 / lam_min.sqrt()) * (1.0 + 1e-9);
        Self::new(laws, if d > 0.0 { d } else { 1.0 })
    }

    /// `j ≡ 0` on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        Self {
            laws: vec![ScalarLaw::Zero; dim],
            growth_d: 1.0,
        }
    }

    pub fn laws(&self) -> &[ScalarLaw] {
        &self.laws
    }

    pub fn dim(&self) -> usize {
        self.laws.len()
    }

    pub fn growth_d(&self) -> f64 {
        self.growth_d
    }

    pub fn is_zero(&self) -> bool {
        self.laws.iter().all(|l| matches!(l, ScalarLaw::Zero))
    }

    pub fn value(&self, u: &Vector) -> f64 {
        self.laws.iter().zip(u.iter()).map(|(l, &s)| l.value(s)).sum()
    }

    pub fn subdiff(&self, u: &Vector) -> SubdiffSet {
        self.box_from(u, |l, s| l.interval(s))
    }

    /// Subdifferential values over the closed graph within `tol` of `u`.
    pub fn subdiff_near(&self, u: &Vector, tol: f64) -> SubdiffSet {
        self.box_from(u, |l, s| l.interval_near(s, tol))
    }

    fn box_from(&self, u: &Vector, f: impl Fn(&ScalarLaw, f64) -> (f64, f64)) -> SubdiffSet {
        let (lo, hi): (Vec<f64>, Vec<f64>) = self.laws.iter().zip(u.iter()).map(|(l, &s)| f(l, s)).unzip();
        SubdiffSet::Box {
            lower: Vector::from_vec(lo),
            upper: Vector::from_vec(hi),
        }
    }

    /// Membership `ξ ∈ ∂j(u)` at the default tolerance.
    pub fn contains(&self, u: &Vector, xi: &Vector) -> bool {
        self.subdiff_near(u, MEMBERSHIP_TOL).contains(xi, MEMBERSHIP_TOL)
    }

    pub fn gradient(&self, u: &Vector) -> Option<Vector> {
        let parts: Option<Vec<f64>> = self.laws.iter().zip(u.iter()).map(|(l, &s)| l.derivative(s)).collect();
        parts.map(Vector::from_vec)
    }

    pub fn smooth_grad(&self, u: &Vector, eps: f64) -> Vector {
        Vector::from_iterator(
            u.len(),
            self.laws.iter().zip(u.iter()).map(|(l, &s)| l.smooth_derivative(s, eps)),
        )
    }

    pub fn smooth_hessian_diag(&self, u: &Vector, eps: f64) -> Vector {
        Vector::from_iterator(
            u.len(),
            self.laws.iter().zip(u.iter()).map(|(l, &s)| l.smooth_second_derivative(s, eps)),
        )
    }

    /// Distance from `u` to the nearest kink over all components.
    pub fn kink_distance(&self, u: &Vector) -> f64 {
        self.laws
            .iter()
            .zip(u.iter())
            .flat_map(|(l, &s)| l.kinks().iter().map(move |&k| (s - k).abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_smooth_at(&self, u: &Vector, margin: f64) -> bool {
        self.kink_distance(u) > margin
    }
}
