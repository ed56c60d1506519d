//! Sampled checks of the structural hypotheses on `A`, `B`, `j` and the setting.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::spaces::{GalerkinSetting, OperatorA, OperatorB, Superpotential, Vector};

/// A check passes when its worst margin is at least this value.
pub const MARGIN_FLOOR: f64 = -1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub worst_margin: f64,
    pub samples: usize,
    /// Sample attaining the worst margin.
    pub witness: Option<Vec<f64>>,
}

impl HypothesisCheck {
    pub fn passed(&self) -> bool {
        self.worst_margin >= MARGIN_FLOOR
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    /// Declared, never sampled.
    pub declared: Vec<String>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(HypothesisCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    witness: Option<Vec<f64>>,
    samples: usize,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: f64::INFINITY,
            witness: None,
            samples: 0,
        }
    }

    fn record(&mut self, margin: f64, sample: &Vector) {
        self.samples += 1;
        if margin < self.worst || margin.is_nan() {
            self.worst = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
            self.witness = Some(sample.iter().copied().collect());
        }
    }

    fn finish(self) -> HypothesisCheck {
        HypothesisCheck {
            name: self.name.to_string(),
            worst_margin: self.worst,
            samples: self.samples,
            witness: self.witness,
        }
    }
}

fn sample_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    let radius = 10f64.powf(rng.random_range(-1.0..1.0));
    Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)) * radius
}

/// Samples the growth and coercivity inequalities on `A`, symmetry and positivity of `B`,
/// growth, smoothing consistency and smooth-point differentiability of `j`.
pub fn validate_hypotheses(
    setting: &GalerkinSetting,
    a: &OperatorA,
    b: &OperatorB,
    j: &Superpotential,
    samples: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if samples == 0 {
        return Err(Error::Argument("validate_hypotheses needs at least one sample".into()));
    }
    let n = setting.dim_v();
    if a.dim() != n || b.matrix().nrows() != n {
        return Err(Error::Setup(format!(
            "operator dimensions do not match dim V = {n} (A: {}, B: {})",
            a.dim(),
            b.matrix().nrows()
        )));
    }
    if j.dim() != setting.dim_u() {
        return Err(Error::Setup(format!(
            "superpotential dimension {} does not match dim U = {}",
            j.dim(),
            setting.dim_u()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    for (name, gram) in [
        ("gram_v positive definite", setting.gram_v()),
        ("gram_h positive definite", setting.gram_h()),
        ("gram_u positive definite", setting.gram_u()),
    ] {
        let min = linalg::sym_eigenvalues(gram)[0];
        checks.push(HypothesisCheck {
            name: name.into(),
            worst_margin: if min > 0.0 { 0.0 } else { min.min(-1.0) },
            samples: 1,
            witness: None,
        });
    }

    let c = *a.constants();
    let mut growth = Tracker::new("A growth");
    let mut coercive = Tracker::new("A coercivity");
    let mut b_sym = Tracker::new("B symmetric");
    let mut b_pos = Tracker::new("B positive");
    let mut pairing = Tracker::new("H pairing positive");
    for _ in 0..samples {
        let v = sample_vector(&mut rng, n);
        let w = sample_vector(&mut rng, n);
        let av = a.apply(&v);
        let nv = setting.norm_v(&v);
        let hv = setting.norm_h(&v);
        growth.record(c.growth_a + c.growth_b * nv - setting.dual_norm(&av), &v);
        coercive.record(
            setting.pairing(&av, &v) - (c.coercive_alpha * nv * nv - c.coercive_beta * hv * hv),
            &v,
        );
        let bv = b.apply(&v);
        let bw = b.apply(&w);
        let scale = 1e-12 * (1.0 + b.matrix().amax()) * v.norm() * w.norm();
        b_sym.record(scale - (bv.dot(&w) - bw.dot(&v)).abs(), &v);
        b_pos.record(bv.dot(&v), &v);
        pairing.record(setting.inner_h(&v, &v), &v);
    }
    checks.extend([growth, coercive, b_sym, b_pos, pairing].map(Tracker::finish));

    checks.extend(check_superpotential(setting, j, samples, &mut rng));

    Ok(HypothesisReport {
        checks,
        declared: vec![
            "A pseudomonotone".into(),
            "trace compact with intermediate space (finite dimension)".into(),
        ],
    })
}

fn check_superpotential(
    setting: &GalerkinSetting,
    j: &Superpotential,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<HypothesisCheck> {
    let m = setting.dim_u();
    let d = j.growth_d();
    let mut growth = Tracker::new("j growth");
    let mut smoothing = Tracker::new("j smoothing consistency");
    let mut derivative = Tracker::new("j derivative at smooth points");

    let mut points: Vec<Vector> = vec![Vector::zeros(m)];
    points.extend((0..samples).map(|_| sample_vector(rng, m)));

    for u in &points {
        let nu = setting.norm_u(u);
        for xi in j.subdiff(u).extreme_points(4096) {
            growth.record(d * (1.0 + nu) - setting.dual_norm_u(&xi), u);
        }

        let set = j.subdiff(u);
        let mut previous = f64::INFINITY;
        let mut monotone = true;
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let dist = set.distance(&j.smooth_grad(u, 10f64.powi(-k)));
            monotone &= dist <= previous + 1e-14;
            previous = dist;
            last = dist;
        }
        // Ramp smoothing is exact once ε drops below the distance to the nearest kink.
        if j.kink_distance(u) > 1e-9 || j.kink_distance(u) == 0.0 {
            let margin = if monotone { 1e-10 - last } else { -1.0 };
            smoothing.record(margin, u);
        }

        if j.is_smooth_at(u, 1e-3) {
            if let Some(grad) = j.gradient(u) {
                for k in 0..m {
                    let h = 1e-6 * (1.0 + u[k].abs());
                    let mut plus = u.clone();
                    let mut minus = u.clone();
                    plus[k] += h;
                    minus[k] -= h;
                    let fd = (j.value(&plus) - j.value(&minus)) / (2.0 * h);
                    let tol = 1e-6 * (1.0 + grad[k].abs());
                    derivative.record(tol - (fd - grad[k]).abs(), u);
                }
            }
        }
    }
    [growth, smoothing, derivative].map(Tracker::finish).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{AConstants, Matrix, ScalarLaw};

    #[test]
    fn identity_gram_operator_is_coercive() {
        let setting = GalerkinSetting::new(
            Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            Matrix::identity(2, 2),
            Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
            Matrix::identity(1, 1),
        )
        .unwrap();
        let a = OperatorA::linear(
            setting.gram_v().clone(),
            AConstants {
                growth_a: 0.0,
                growth_b: 1.0 + 1e-12,
                coercive_alpha: 1.0,
                coercive_beta: 0.0,
            },
        )
        .unwrap();
        let report = validate_hypotheses(
            &setting,
            &a,
            &OperatorB::zero(2),
            &Superpotential::zero(1),
            200,
            1,
        )
        .unwrap();
        let coercive = report.check("A coercivity").unwrap();
        assert!(coercive.worst_margin >= -1e-12, "{coercive:?}");
        assert!(report.check("B symmetric").unwrap().passed());
        assert!(report.check("B positive").unwrap().passed());
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    }

    #[test]
    fn absolute_value_growth_passes() {
        let setting = GalerkinSetting::scalar();
        let a = OperatorA::linear_auto(&setting, Matrix::identity(1, 1)).unwrap();
        let j = Superpotential::new(vec![ScalarLaw::friction(1.0, 1.0, 0.0).unwrap()], 1.0).unwrap();
        let report = validate_hypotheses(&setting, &a, &OperatorB::zero(1), &j, 100, 2).unwrap();
        let growth = report.check("j growth").unwrap();
        assert!(growth.passed());
        // at u = 0 the extreme subgradients ±1 meet the bound 1·(1 + 0) exactly
        assert!(growth.worst_margin.abs() < 1e-12);
        assert!(report.passed());
    }

    #[test]
    fn growth_violation_reports_witness() {
        let setting = GalerkinSetting::scalar();
        let a = OperatorA::linear(
            Matrix::from_element(1, 1, 3.0),
            AConstants {
                growth_a: 0.0,
                growth_b: 1.0,
                coercive_alpha: 1.0,
                coercive_beta: 0.0,
            },
        )
        .unwrap();
        let report =
            validate_hypotheses(&setting, &a, &OperatorB::zero(1), &Superpotential::zero(1), 50, 3).unwrap();
        assert!(!report.passed());
        let failed = report.check("A growth").unwrap();
        assert!(!failed.passed());
        assert!(failed.witness.is_some());

        let j = Superpotential::new(vec![ScalarLaw::friction(5.0, 1.0, 1.0).unwrap()], 1.0).unwrap();
        let a = OperatorA::linear_auto(&setting, Matrix::identity(1, 1)).unwrap();
        let report = validate_hypotheses(&setting, &a, &OperatorB::zero(1), &j, 50, 3).unwrap();
        assert!(!report.check("j growth").unwrap().passed());
    }

    #[test]
    fn zero_samples_rejected() {
        let setting = GalerkinSetting::scalar();
        let a = OperatorA::linear_auto(&setting, Matrix::identity(1, 1)).unwrap();
        assert!(validate_hypotheses(&setting, &a, &OperatorB::zero(1), &Superpotential::zero(1), 0, 0).is_err());
    }
}
