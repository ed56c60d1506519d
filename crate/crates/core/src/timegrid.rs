//! Uniform time grid, averaged discrete loads and initial-data selection.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};
use crate::spaces::{GalerkinSetting, Vector};

pub const DEFAULT_QUADRATURE_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    tau: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::Argument(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self {
            horizon,
            steps,
            tau: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `t_n = n τ`; the last node is pinned to the horizon.
    pub fn node(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.tau
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|n| self.node(n))
    }

    /// Index `n` with `t ∈ I_n = ((n−1)τ, nτ]`; `t = 0` maps to 1.
    pub fn interval_of(&self, t: f64) -> usize {
        let n = (t / self.tau).ceil() as usize;
        n.clamp(1, self.steps)
    }
}

/// Time-dependent load `f: [0,T] → V*`.
#[derive(Clone)]
pub enum LoadFn {
    Zero { dim: usize },
    /// Per-coordinate polynomial coefficients in ascending powers of `t`.
    Polynomial { coefficients: Vec<Vec<f64>> },
    /// Piecewise-linear interpolation of tabulated values, constant beyond the ends.
    Table { times: Vec<f64>, values: Vec<Vector> },
    Custom {
        dim: usize,
        f: Arc<dyn Fn(f64) -> Vector + Send + Sync>,
    },
}

impl fmt::Debug for LoadFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadFn::Zero { dim } => write!(f, "Zero({dim})"),
            LoadFn::Polynomial { coefficients } => f.debug_tuple("Polynomial").field(coefficients).finish(),
            LoadFn::Table { times, .. } => write!(f, "Table({} rows)", times.len()),
            LoadFn::Custom { dim, .. } => write!(f, "Custom({dim})"),
        }
    }
}

impl LoadFn {
    pub fn table(times: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Argument("load table needs matching non-empty times and values".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("load table times must be strictly increasing".into()));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Argument("load table rows have different lengths".into()));
        }
        Ok(LoadFn::Table { times, values })
    }

    pub fn custom<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> Vector + Send + Sync + 'static,
    {
        LoadFn::Custom { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        match self {
            LoadFn::Zero { dim } | LoadFn::Custom { dim, .. } => *dim,
            LoadFn::Polynomial { coefficients } => coefficients.len(),
            LoadFn::Table { values, .. } => values[0].len(),
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            LoadFn::Zero { dim } => Vector::zeros(*dim),
            LoadFn::Polynomial { coefficients } => Vector::from_iterator(
                coefficients.len(),
                coefficients
                    .iter()
                    .map(|c| c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)),
            ),
            LoadFn::Table { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= times[last] {
                    return values[last].clone();
                }
                let k = times.partition_point(|&s| s <= t) - 1;
                let theta = (t - times[k]) / (times[k + 1] - times[k]);
                &values[k] * (1.0 - theta) + &values[k + 1] * theta
            }
            LoadFn::Custom { f, .. } => f(t),
        }
    }
}

/// Load together with the composite Gauss–Legendre rule used to average it.
#[derive(Debug, Clone)]
pub struct LoadSpec {
    pub f: LoadFn,
    quadrature: Vec<(f64, f64)>,
    order: usize,
}

impl LoadSpec {
    pub fn new(f: LoadFn, quadrature_order: usize) -> Result<Self> {
        let degree = NonZeroUsize::new(quadrature_order)
            .ok_or_else(|| Error::Argument("quadrature order must be positive".into()))?;
        let rule = GaussLegendre::new(degree);
        let quadrature = rule.nodes().copied().zip(rule.weights().copied()).collect();
        Ok(Self {
            f,
            quadrature,
            order: quadrature_order,
        })
    }

    pub fn with_default_order(f: LoadFn) -> Self {
        Self::new(f, DEFAULT_QUADRATURE_ORDER).expect("positive default order")
    }

    pub fn quadrature_order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    /// Gauss–Legendre approximation of `∫_a^b g(t) dt`.
    pub fn integrate_scalar(&self, a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.quadrature.iter().map(|&(x, w)| w * g(mid + half * x)).sum::<f64>() * half
    }

    /// Gauss–Legendre approximation of `∫_a^b f(t) dt`.
    pub fn integrate(&self, a: f64, b: f64) -> Vector {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = Vector::zeros(self.dim());
        for &(x, w) in &self.quadrature {
            acc.axpy(w * half, &self.f.eval(mid + half * x), 1.0);
        }
        acc
    }

    /// `‖f‖²_{L²(0,T;V*)}` by the composite rule on the grid cells.
    pub fn l2_dual_norm_sq(&self, setting: &GalerkinSetting, grid: &TimeGrid) -> f64 {
        (1..=grid.steps())
            .map(|n| {
                self.integrate_scalar(grid.node(n - 1), grid.node(n), |t| {
                    setting.dual_norm(&self.f.eval(t)).powi(2)
                })
            })
            .sum()
    }
}

/// Averaged load `f_τ^n`: the cell mean for `n = 1` and the double-step
/// difference of the load antiderivative for `n ≥ 2`.
pub fn average_load(spec: &LoadSpec, grid: &TimeGrid, n: usize) -> Result<Vector> {
    if n < 1 || n > grid.steps() {
        return Err(Error::Argument(format!(
            "load index {n} outside 1..={}",
            grid.steps()
        )));
    }
    let tau = grid.tau();
    let current = spec.integrate(grid.node(n - 1), grid.node(n));
    if n == 1 {
        return Ok(current / tau);
    }
    let previous = spec.integrate(grid.node(n - 2), grid.node(n - 1));
    Ok(current * (1.5 / tau) - previous * (0.5 / tau))
}

/// All averaged loads `f_τ^1..f_τ^N`.
pub fn average_loads(spec: &LoadSpec, grid: &TimeGrid) -> Vec<Vector> {
    let tau = grid.tau();
    let cells: Vec<Vector> = (1..=grid.steps())
        .map(|n| spec.integrate(grid.node(n - 1), grid.node(n)))
        .collect();
    cells
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            if k == 0 {
                cell / tau
            } else {
                cell * (1.5 / tau) - &cells[k - 1] * (0.5 / tau)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u0_tau: Vector,
    pub w0_tau: Vector,
    pub u0_target: Vector,
    pub w0_target: Vector,
    pub scale_cap: f64,
    /// True when the velocity had to be rescaled onto the ball of radius `C/√τ`.
    pub rescaled: bool,
}

/// Discrete initial data: `u_τ⁰ = u₀`, and `w_τ⁰ = w₀` radially rescaled onto
/// the V-ball of radius `C/√τ` when it lies outside.
pub fn select_initial_data(
    setting: &GalerkinSetting,
    u0: &Vector,
    w0: &Vector,
    grid: &TimeGrid,
    cap: f64,
) -> Result<InitialData> {
    if !(cap > 0.0) {
        return Err(Error::Argument(format!("initial velocity cap must be positive, got {cap}")));
    }
    let radius = cap / grid.tau().sqrt();
    let norm = setting.norm_v(w0);
    let (w0_tau, rescaled) = if norm <= radius {
        (w0.clone(), false)
    } else {
        (w0 * (radius / norm), true)
    };
    Ok(InitialData {
        u0_tau: u0.clone(),
        w0_tau,
        u0_target: u0.clone(),
        w0_target: w0.clone(),
        scale_cap: cap,
        rescaled,
    })
}
