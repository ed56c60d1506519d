//! Piecewise-constant and piecewise-linear time functions built from a trajectory,
//! with closed-form norms.

use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{GalerkinSetting, Vector};
use crate::stepper::{csv_err, fmt_num, RotheTrajectory};
use crate::timegrid::LoadSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    UBar,
    WBar,
    XiBar,
    FBar,
    ULin,
    WLin,
}

impl Which {
    pub const ALL: [Which; 6] = [Which::UBar, Which::WBar, Which::XiBar, Which::FBar, Which::ULin, Which::WLin];

    pub fn name(self) -> &'static str {
        match self {
            Which::UBar => "u_bar",
            Which::WBar => "w_bar",
            Which::XiBar => "xi_bar",
            Which::FBar => "f_bar",
            Which::ULin => "u_lin",
            Which::WLin => "w_lin",
        }
    }

    fn piecewise_constant(self) -> bool {
        matches!(self, Which::UBar | Which::WBar | Which::XiBar | Which::FBar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L2V,
    L2Vstar,
    L2H,
    LinfH,
    LinfV,
    /// `L²(0,T;U*)`, only for `ξ̄`.
    L2Ustar,
}

#[derive(Debug, Clone, Copy)]
enum Metric {
    V,
    H,
    /// V* norm of an H element, `‖G_H v‖_{V*}`.
    HinVstar,
    /// V* norm of a functional.
    Vstar,
    Ustar,
}

impl Metric {
    fn norm_sq(self, s: &GalerkinSetting, x: &Vector) -> f64 {
        let n = match self {
            Metric::V => s.norm_v(x),
            Metric::H => s.norm_h(x),
            Metric::HinVstar => s.embedded_dual_norm(x),
            Metric::Vstar => s.dual_norm(x),
            Metric::Ustar => s.dual_norm_u(x),
        };
        n * n
    }
}

/// `∫₀^τ ‖a + (b − a)s/τ‖² ds = τ/6 (‖a‖² + ‖b‖² + ‖a + b‖²)`.
fn linear_segment_sq(s: &GalerkinSetting, m: Metric, a: &Vector, b: &Vector, tau: f64) -> f64 {
    tau / 6.0 * (m.norm_sq(s, a) + m.norm_sq(s, b) + m.norm_sq(s, &(a + b)))
}

#[derive(Debug, Clone, Copy)]
pub struct RotheInterpolants<'a> {
    pub traj: &'a RotheTrajectory,
    pub setting: &'a GalerkinSetting,
}

impl<'a> RotheInterpolants<'a> {
    pub fn new(traj: &'a RotheTrajectory, setting: &'a GalerkinSetting) -> Self {
        Self { traj, setting }
    }

    fn tau(&self) -> f64 {
        self.traj.tau()
    }

    fn node(&self, n: usize) -> f64 {
        self.traj.grid.node(n)
    }

    /// `u⁰ + τΣ_{k≤n} w^k`, the value of `u_lin` at `t_n`.
    fn u_lin_node(&self, n: usize) -> Vector {
        let mut acc = self.traj.u[0].clone();
        for k in 1..=n {
            acc.axpy(self.tau(), &self.traj.w[k], 1.0);
        }
        acc
    }

    /// `w_lin` on `I_n` at the left end (limit from the right) and at the right end.
    fn w_lin_ends(&self, n: usize) -> (Vector, Vector) {
        let w = &self.traj.w;
        let right = &w[n] * 1.5 - &w[n - 1] * 0.5;
        let slope = if n == 1 {
            &w[1] - &w[0]
        } else {
            &w[n] * 1.5 - &w[n - 1] * 2.0 + &w[n - 2] * 0.5
        };
        (&right - &slope, right)
    }

    fn u_lin_ends(&self, n: usize) -> (Vector, Vector) {
        let left = self.u_lin_node(n - 1);
        let right = &left + &self.traj.w[n] * self.tau();
        (left, right)
    }

    /// Limits of `w_lin` at `t_n` from the left and from the right, `1 ≤ n < N`.
    pub fn w_lin_limits(&self, n: usize) -> Result<(Vector, Vector)> {
        if n == 0 || n >= self.traj.steps() {
            return Err(Error::Argument(format!("node {n} is not interior")));
        }
        Ok((self.w_lin_ends(n).1, self.w_lin_ends(n + 1).0))
    }

    pub fn eval(&self, which: Which, t: f64) -> Result<Vector> {
        let horizon = self.traj.grid.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-14)) {
            return Err(Error::Argument(format!("t = {t} lies outside [0, {horizon}]")));
        }
        let n = self.traj.grid.interval_of(t);
        let theta = (t - self.node(n)) / self.tau();
        Ok(match which {
            Which::UBar => self.traj.u[n].clone(),
            Which::WBar => self.traj.w[n].clone(),
            Which::XiBar => self.traj.xi[n - 1].clone(),
            Which::FBar => self.traj.loads[n - 1].clone(),
            Which::ULin => {
                let (left, _) = self.u_lin_ends(n);
                left + &self.traj.w[n] * (t - self.node(n - 1))
            }
            Which::WLin => {
                let (left, right) = self.w_lin_ends(n);
                &right + (&right - left) * theta
            }
        })
    }

    fn metric(which: Which, kind: NormKind) -> Result<Metric> {
        let metric = match (which, kind) {
            (Which::XiBar, NormKind::L2Ustar) => Some(Metric::Ustar),
            (Which::XiBar, _) | (_, NormKind::L2Ustar) => None,
            (Which::FBar, NormKind::L2Vstar) => Some(Metric::Vstar),
            (Which::FBar, _) => None,
            (_, NormKind::L2V | NormKind::LinfV) => Some(Metric::V),
            (_, NormKind::L2H | NormKind::LinfH) => Some(Metric::H),
            (_, NormKind::L2Vstar) => Some(Metric::HinVstar),
        };
        metric.ok_or_else(|| Error::Argument(format!("norm {kind:?} does not apply to {}", which.name())))
    }

    fn piece(&self, which: Which, n: usize) -> (Vector, Vector) {
        match which {
            Which::UBar => (self.traj.u[n].clone(), self.traj.u[n].clone()),
            Which::WBar => (self.traj.w[n].clone(), self.traj.w[n].clone()),
            Which::XiBar => (self.traj.xi[n - 1].clone(), self.traj.xi[n - 1].clone()),
            Which::FBar => (self.traj.loads[n - 1].clone(), self.traj.loads[n - 1].clone()),
            Which::ULin => self.u_lin_ends(n),
            Which::WLin => self.w_lin_ends(n),
        }
    }

    pub fn norm(&self, which: Which, kind: NormKind) -> Result<f64> {
        let metric = Self::metric(which, kind)?;
        let s = self.setting;
        let tau = self.tau();
        let steps = self.traj.steps();
        let sup = matches!(kind, NormKind::LinfH | NormKind::LinfV);
        let mut acc = 0.0_f64;
        for n in 1..=steps {
            let (a, b) = self.piece(which, n);
            if sup {
                acc = acc.max(metric.norm_sq(s, &a)).max(metric.norm_sq(s, &b));
            } else if which.piecewise_constant() {
                acc += tau * metric.norm_sq(s, &a);
            } else {
                acc += linear_segment_sq(s, metric, &a, &b, tau);
            }
        }
        Ok(acc.sqrt())
    }

    /// `T·τ·Σ_{n=1}^N ‖(wⁿ − wⁿ⁻¹)/τ‖²_{V*}`, an upper bound of `‖w̄‖²_{BV²(0,T;V*)}`.
    pub fn bv2_upper_bound(&self) -> f64 {
        let tau = self.tau();
        let w = &self.traj.w;
        let sum: f64 = (1..=self.traj.steps())
            .map(|n| Metric::HinVstar.norm_sq(self.setting, &((&w[n] - &w[n - 1]) / tau)))
            .sum();
        self.traj.grid.horizon() * tau * sum
    }

    /// Exact `‖w̄‖²_{BV²(0,T;V*)}` with `w̄(0) = w⁰`: the best sum of squared increments
    /// over disjoint index intervals, by dynamic programming in `O(N²)`.
    pub fn bv2_exact(&self) -> f64 {
        bv2_seminorm(&self.traj.w, |x| Metric::HinVstar.norm_sq(self.setting, x))
    }

    /// `(‖w_lin − w̄‖_{L²(0,T;V*)}, ‖u_lin − ū‖_{L²(0,T;V)})`.
    pub fn interpolant_gaps(&self) -> (f64, f64) {
        let tau = self.tau();
        let mut gw = 0.0;
        let mut gu = 0.0;
        for n in 1..=self.traj.steps() {
            let (a, b) = self.w_lin_ends(n);
            let wn = &self.traj.w[n];
            gw += linear_segment_sq(self.setting, Metric::HinVstar, &(a - wn), &(b - wn), tau);
            let (a, b) = self.u_lin_ends(n);
            let un = &self.traj.u[n];
            gu += linear_segment_sq(self.setting, Metric::V, &(a - un), &(b - un), tau);
        }
        (gw.sqrt(), gu.sqrt())
    }

    /// `‖f̄ − f‖_{L²(0,T;V*)}` with an 8-point Gauss rule per interval.
    pub fn load_error(&self, load: &LoadSpec) -> f64 {
        let rule = GaussLegendre::new(NonZeroUsize::new(8).expect("nonzero"));
        let mut acc = 0.0_f64;
        for n in 1..=self.traj.steps() {
            let (a, b) = (self.node(n - 1), self.node(n));
            let fbar = &self.traj.loads[n - 1];
            acc += rule.integrate(a, b, |t| {
                let d = self.setting.dual_norm(&(load.f.eval(t) - fbar));
                d * d
            });
        }
        acc.sqrt()
    }

    /// Columns `t` then the components of each requested function, at `samples + 1`
    /// equispaced times.
    pub fn write_samples<W: Write>(&self, out: W, which: &[Which], samples: usize) -> Result<()> {
        if samples == 0 {
            return Err(Error::Argument("need at least one sample interval".into()));
        }
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for &f in which {
            let dim = self.eval(f, 0.0)?.len();
            header.extend((0..dim).map(|i| format!("{}_{i}", f.name())));
        }
        wtr.write_record(&header).map_err(csv_err)?;
        let horizon = self.traj.grid.horizon();
        for k in 0..=samples {
            let t = if k == samples { horizon } else { horizon * k as f64 / samples as f64 };
            let mut row = vec![fmt_num(t)];
            for &f in which {
                row.extend(self.eval(f, t)?.iter().map(|&x| fmt_num(x)));
            }
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `sup Σ‖x(bᵢ) − x(aᵢ)‖²` over `a₁ < b₁ ≤ a₂ < b₂ ≤ …` for a step function taking the
/// values `xs` in order.
pub fn bv2_seminorm(xs: &[Vector], norm_sq: impl Fn(&Vector) -> f64) -> f64 {
    let n = xs.len();
    // best[j]: optimum over partitions whose last interval ends at or before index j
    let mut best = vec![0.0_f64; n];
    for j in 1..n {
        let mut b = best[j - 1];
        for i in 0..j {
            b = b.max(best[i] + norm_sq(&(&xs[j] - &xs[i])));
        }
        best[j] = b;
    }
    best.last().copied().unwrap_or(0.0)
}
