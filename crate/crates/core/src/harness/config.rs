//! JSON study configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::inclusion::SolveOptions;
use crate::problems::{build_rod_problem, manufactured_problem, rod_body_force, ExactSolution, ManufacturedCase, ProblemInstance, RodParams};
use crate::spaces::{GalerkinSetting, Matrix, OperatorA, OperatorB, ScalarLaw, Superpotential, Vector};
use crate::stepper::SchemeOptions;
use crate::timegrid::{LoadFn, LoadSpec, DEFAULT_QUADRATURE_ORDER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub gram_v: Vec<Vec<f64>>,
    pub gram_h: Vec<Vec<f64>>,
    pub trace: Vec<Vec<f64>>,
    pub gram_u: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    /// Coefficients of the saturated cubic perturbation `c ⊙ v³/(1+v²)` added to `A`.
    #[serde(default)]
    pub a_cubic: Option<Vec<f64>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    pub laws: Vec<ScalarLaw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Rod(RodParams),
    System(SystemConfig),
    Manufactured {
        base: Box<ProblemConfig>,
        exact: ExactSolution,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadConfig {
    Zero,
    /// Per-coordinate ascending coefficients.
    Polynomial { coefficients: Vec<Vec<f64>> },
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
    /// Uniform density `p(t)` on the rod, ascending coefficients.
    BodyForce { profile: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub u0: Vec<f64>,
    pub w0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub load: Option<LoadConfig>,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub ladder: Vec<usize>,
    /// Steps of the fine reference run for problems without an exact solution.
    #[serde(default)]
    pub reference_steps: Option<usize>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default = "default_cap")]
    pub initial_cap: f64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub emit_plots: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_cap() -> f64 {
    1e6
}

fn default_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn matrix(rows: &[Vec<f64>], path: &str) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(path, "expected a non-empty rectangular matrix"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Problem built from a config, with the exact solution when one is prescribed.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub instance: ProblemInstance,
    pub manufactured: Option<ManufacturedCase>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err("", e.to_string()))?;
        if let Some(problem) = value.get("problem") {
            check_problem(problem, "problem")?;
        }
        let cfg: StudyConfig = parse_at(value, "")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(&path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(config_err("horizon", "must be positive and finite"));
        }
        if self.ladder.is_empty() {
            return Err(config_err("ladder", "needs at least one level"));
        }
        if self.ladder.iter().any(|&n| n < 2) {
            return Err(config_err("ladder", "every level needs at least 2 steps"));
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("ladder", "levels must be strictly increasing"));
        }
        if let Some(r) = self.reference_steps {
            let top = *self.ladder.last().unwrap();
            if r < 8 * top {
                return Err(config_err("reference_steps", format!("must be at least 8 × {top}")));
            }
            if let Some(n) = self.ladder.iter().find(|&&n| !r.is_multiple_of(n)) {
                return Err(config_err("reference_steps", format!("must be divisible by ladder level {n}")));
            }
        }
        if !(self.initial_cap > 0.0) {
            return Err(config_err("initial_cap", "must be positive"));
        }
        if self.quadrature_order == 0 {
            return Err(config_err("quadrature_order", "must be positive"));
        }
        self.solver.validate().map_err(|e| config_err("solver", e.to_string()))
    }

    pub fn is_manufactured(&self) -> bool {
        matches!(self.problem, ProblemConfig::Manufactured { .. })
    }

    pub fn scheme_options(&self) -> SchemeOptions {
        SchemeOptions {
            solver: self.solver.clone(),
            initial_cap: self.initial_cap,
            seed: self.seed,
            ..SchemeOptions::default()
        }
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        let (instance, manufactured) = match &self.problem {
            ProblemConfig::Manufactured { base, exact } => {
                let base = build_base(base, "problem.base")?;
                let base = self.with_quadrature(base)?;
                let (inst, case) = manufactured_problem(&base, exact.clone(), self.horizon)
                    .map_err(|e| Error::Reference(format!("manufactured case: {e}")))?;
                if self.load.is_some() {
                    return Err(config_err("load", "a manufactured problem derives its own load"));
                }
                if self.initial.is_some() {
                    return Err(config_err("initial", "a manufactured problem derives its own initial data"));
                }
                (inst, Some(case))
            }
            other => {
                let mut inst = self.with_quadrature(build_base(other, "problem")?)?;
                if let Some(load) = &self.load {
                    inst = inst
                        .clone()
                        .with_load(self.build_load(load, &inst)?)
                        .map_err(|e| config_err("load", e.to_string()))?;
                }
                if let Some(init) = &self.initial {
                    inst = inst
                        .with_initial(Vector::from_column_slice(&init.u0), Vector::from_column_slice(&init.w0))
                        .map_err(|e| config_err("initial", e.to_string()))?;
                }
                (inst, None)
            }
        };
        Ok(BuiltProblem { instance, manufactured })
    }

    fn with_quadrature(&self, inst: ProblemInstance) -> Result<ProblemInstance> {
        let load = LoadSpec::new(inst.load.f.clone(), self.quadrature_order)
            .map_err(|e| config_err("quadrature_order", e.to_string()))?;
        inst.with_load(load)
    }

    fn build_load(&self, load: &LoadConfig, inst: &ProblemInstance) -> Result<LoadSpec> {
        let n = inst.dim();
        let f = match load {
            LoadConfig::Zero => LoadFn::Zero { dim: n },
            LoadConfig::Polynomial { coefficients } => {
                if coefficients.len() != n {
                    return Err(config_err("load.coefficients", format!("expected {n} coordinate rows")));
                }
                LoadFn::Polynomial {
                    coefficients: coefficients.clone(),
                }
            }
            LoadConfig::Table { times, values } => {
                if values.iter().any(|v| v.len() != n) {
                    return Err(config_err("load.values", format!("rows must have length {n}")));
                }
                let values = values.iter().map(|v| Vector::from_column_slice(v)).collect();
                LoadFn::table(times.clone(), values).map_err(|e| config_err("load", e.to_string()))?
            }
            LoadConfig::BodyForce { profile } => {
                if !matches!(self.problem, ProblemConfig::Rod(_)) {
                    return Err(config_err("load.kind", "body_force needs a rod problem"));
                }
                return rod_body_force(inst, profile, self.quadrature_order)
                    .map_err(|e| config_err("load.profile", e.to_string()));
            }
        };
        LoadSpec::new(f, self.quadrature_order).map_err(|e| config_err("load", e.to_string()))
    }
}

fn join(prefix: &str, path: &str) -> String {
    match (prefix.is_empty(), path.is_empty() || path == ".") {
        (true, _) => path.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix}.{path}"),
    }
}

fn parse_at<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = join(prefix, &e.path().to_string());
        config_err(&path, e.into_inner().to_string())
    })
}

/// Checks a problem block variant by variant. Tagged enums buffer their content,
/// which hides the inner path from the typed parse.
fn check_problem(value: &Value, path: &str) -> Result<()> {
    let Some(obj) = value.as_object() else {
        return Err(config_err(path, "expected an object"));
    };
    let kind_path = join(path, "kind");
    let kind = obj
        .get("kind")
        .ok_or_else(|| config_err(&kind_path, "missing problem kind"))?
        .as_str()
        .ok_or_else(|| config_err(&kind_path, "expected a string"))?;
    let mut body = obj.clone();
    body.remove("kind");
    match kind {
        "rod" => parse_at::<RodParams>(Value::Object(body), path).map(|_| ()),
        "system" => parse_at::<SystemConfig>(Value::Object(body), path).map(|_| ()),
        "manufactured" => {
            for key in body.keys() {
                if key != "base" && key != "exact" {
                    return Err(config_err(&join(path, key), "unknown field"));
                }
            }
            let base = body.get("base").ok_or_else(|| config_err(&join(path, "base"), "missing"))?;
            check_problem(base, &join(path, "base"))?;
            let exact = body.get("exact").ok_or_else(|| config_err(&join(path, "exact"), "missing"))?;
            parse_at::<ExactSolution>(exact.clone(), &join(path, "exact")).map(|_| ())
        }
        other => Err(config_err(
            &kind_path,
            format!("unknown problem kind `{other}`, expected rod, system or manufactured"),
        )),
    }
}

fn build_base(problem: &ProblemConfig, path: &str) -> Result<ProblemInstance> {
    match problem {
        ProblemConfig::Rod(params) => build_rod_problem(params).map_err(|e| config_err(path, e.to_string())),
        ProblemConfig::System(sys) => build_system(sys, path),
        ProblemConfig::Manufactured { .. } => Err(config_err(path, "manufactured problems cannot be nested")),
    }
}

fn build_system(sys: &SystemConfig, path: &str) -> Result<ProblemInstance> {
    let sub = |field: &str| format!("{path}.{field}");
    let setting = GalerkinSetting::new(
        matrix(&sys.gram_v, &sub("gram_v"))?,
        matrix(&sys.gram_h, &sub("gram_h"))?,
        matrix(&sys.trace, &sub("trace"))?,
        matrix(&sys.gram_u, &sub("gram_u"))?,
    )
    .map_err(|e| config_err(path, e.to_string()))?;
    let n = setting.dim_v();
    let a_matrix = matrix(&sys.a, &sub("a"))?;
    let a = match &sys.a_cubic {
        None => OperatorA::linear_auto(&setting, a_matrix),
        Some(c) => OperatorA::saturated_cubic(&setting, a_matrix, Vector::from_column_slice(c)),
    }
    .map_err(|e| config_err(&sub("a"), e.to_string()))?;
    let b = match &sys.b {
        None => OperatorB::zero(n),
        Some(rows) => OperatorB::new(matrix(rows, &sub("b"))?).map_err(|e| config_err(&sub("b"), e.to_string()))?,
    };
    let j = Superpotential::with_derived_growth(&setting, sys.laws.clone())
        .map_err(|e| config_err(&sub("laws"), e.to_string()))?;
    ProblemInstance::new(
        setting,
        a,
        b,
        j,
        LoadSpec::with_default_order(LoadFn::Zero { dim: n }),
        Vector::zeros(n),
        Vector::zeros(n),
        "system",
    )
    .map_err(|e| config_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROD: &str = r#"{
        "problem": {"kind": "rod", "elements": 4, "viscosity": 1.0, "elasticity": 1.0,
                    "mu_static": 0.6, "mu_kinetic": 0.3, "slope": 2.0},
        "load": {"kind": "body_force", "profile": [1.0, 0.5]},
        "ladder": [4, 8],
        "reference_steps": 64
    }"#;

    #[test]
    fn parses_rod_config() {
        let cfg = StudyConfig::from_json(ROD).unwrap();
        assert_eq!(cfg.horizon, 1.0);
        assert_eq!(cfg.solver, SolveOptions::default());
        let built = cfg.build().unwrap();
        assert_eq!(built.instance.dim(), 4);
        assert!(built.manufactured.is_none());
    }

    #[test]
    fn reports_failing_path() {
        let bad = ROD.replace("\"viscosity\": 1.0", "\"viscosity\": \"x\"");
        match StudyConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "problem.viscosity"),
            other => panic!("{other:?}"),
        }
        let bad = ROD.replace("[4, 8]", "[8, 4]");
        match StudyConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "ladder"),
            other => panic!("{other:?}"),
        }
        let bad = ROD.replace("\"reference_steps\": 64", "\"reference_steps\": 60");
        assert!(matches!(StudyConfig::from_json(&bad), Err(Error::Config { .. })));
        let bad = ROD.replace("\"ladder\"", "\"ladders\"");
        assert!(matches!(StudyConfig::from_json(&bad), Err(Error::Config { .. })));
    }

    #[test]
    fn parses_manufactured_system() {
        let text = r#"{
            "problem": {"kind": "manufactured",
                "base": {"kind": "system", "gram_v": [[2.0]], "gram_h": [[1.0]], "trace": [[1.0]], "gram_u": [[1.0]],
                         "a": [[1.0]], "b": [[1.0]], "laws": [{"law": "quadratic", "stiffness": 0.5}]},
                "exact": {"kind": "sin_mode", "mode": [1.0], "frequency": 1.0}},
            "ladder": [4, 8, 16],
            "solver": {"tol_residual": 1e-10}
        }"#;
        let cfg = StudyConfig::from_json(text).unwrap();
        assert_eq!(cfg.solver.tol_residual, 1e-10);
        let built = cfg.build().unwrap();
        assert!(built.manufactured.is_some());
        assert_eq!(built.instance.w0[0], 1.0);
    }
}
