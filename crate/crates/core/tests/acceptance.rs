//! One PASS/FAIL line per acceptance criterion. Exits nonzero when any line fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rothe_core::diagnostics::{apriori_suite, identity_sweeps};
use rothe_core::harness::{cmd_run, cmd_study, run_study, StudyConfig};
use rothe_core::inclusion::{scalar_oracle_solve, solve_inclusion, SolveOptions, StepOperator};
use rothe_core::interpolants::{RotheInterpolants, Which};
use rothe_core::problems::{
    build_rod_problem, manufactured_problem, rod_body_force, two_dof_system, ExactSolution, ProblemInstance, RodParams,
};
use rothe_core::spaces::{GalerkinSetting, Matrix, OperatorA, OperatorB, ScalarLaw, Superpotential, Vector};
use rothe_core::stepper::{double_step_derivative, run_scheme, RotheTrajectory, SchemeOptions};
use rothe_core::timegrid::{average_load, LoadFn, LoadSpec, TimeGrid};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn sci(xs: &[f64]) -> String {
    let cells: Vec<String> = xs.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", cells.join(", "))
}

fn rod_problem() -> ProblemInstance {
    let p = build_rod_problem(&RodParams::default()).unwrap();
    let load = rod_body_force(&p, &[0.0, 3.0, -1.0], 4).unwrap();
    p.with_load(load).unwrap()
}

fn run(problem: &ProblemInstance, steps: usize) -> RotheTrajectory {
    run_scheme(problem, &TimeGrid::new(1.0, steps).unwrap(), &SchemeOptions::default()).unwrap()
}

fn sin_mode_problem() -> (ProblemInstance, rothe_core::problems::ManufacturedCase) {
    let base = two_dof_system(true).unwrap();
    let exact = ExactSolution::SinMode {
        mode: vec![1.0, 0.5],
        frequency: 2.0,
    };
    manufactured_problem(&base, exact, 1.0).unwrap()
}

fn c1_identity_sweeps() -> Outcome {
    let start = Instant::now();
    let reports = identity_sweeps(2024, 1000);
    let elapsed = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_deviation).fold(f64::NEG_INFINITY, f64::max);
    let ok = reports.iter().all(|r| r.passed() && r.instances == 1000 && r.tolerance <= 1e-12) && elapsed < 1.0;
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    outcome(ok, format!("suites {names:?}, worst deviation {worst:.2e}, {elapsed:.3} s"))
}

fn c2_double_step_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=6);
        let c: Vec<Vector> = (0..3)
            .map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let tau = rng.random_range(0.01..0.5);
        let t = rng.random_range(0.0..1.0);
        let x = |s: f64| &c[0] + &c[1] * s + &c[2] * (s * s);
        let dx = &c[1] + &c[2] * (2.0 * t);
        let d = double_step_derivative(&x(t), &x(t - tau), &x(t - 2.0 * tau), tau).unwrap();
        worst = worst.max((d - dx).amax());
    }
    outcome(worst <= 1e-13, format!("max abs deviation {worst:.2e} over 1000 quadratics"))
}

fn c3_affine_load_averaging() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut first = 0.0_f64;
    let mut later = 0.0_f64;
    for _ in 0..50 {
        let dim = rng.random_range(1..=4);
        let coefficients: Vec<Vec<f64>> = (0..dim)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let spec = LoadSpec::with_default_order(LoadFn::Polynomial { coefficients });
        let grid = TimeGrid::new(rng.random_range(0.5..3.0), rng.random_range(2..40)).unwrap();
        for n in 1..=grid.steps() {
            let avg = average_load(&spec, &grid, n).unwrap();
            let exact = spec.f.eval(grid.node(n));
            let dev = (avg - &exact).amax() / exact.amax().max(1.0);
            if n == 1 {
                first = first.max(dev);
            } else {
                later = later.max(dev);
            }
        }
    }
    outcome(
        first.max(later) <= 1e-12,
        format!("max relative deviation n = 1: {first:.2e}, n >= 2: {later:.2e}"),
    )
}

fn c4_oracle_equivalence() -> Outcome {
    let setting = GalerkinSetting::scalar();
    let a = OperatorA::linear_auto(&setting, Matrix::identity(1, 1)).unwrap();
    let b = OperatorB::zero(1);
    let j = Superpotential::new(vec![ScalarLaw::friction(1.0, 1.0, 0.0).unwrap()], 1.0).unwrap();
    let op = StepOperator::first_step(&setting, &a, &b, &j, 0.1);
    let opts = SolveOptions::default();
    let v = |x: f64| Vector::from_element(1, x);
    let worst = (0..100)
        .map(|k| -2.0 + 4.0 * k as f64 / 99.0)
        .map(|rhs| {
            let (w, _) = scalar_oracle_solve(&op, &v(rhs)).unwrap();
            let out = solve_inclusion(&op, &v(rhs), &v(0.0), &opts).unwrap();
            (w[0] - out.w[0]).abs()
        })
        .fold(0.0, f64::max);
    let point = solve_inclusion(&op, &v(1.0), &v(0.0), &opts).unwrap().w[0];
    let closed = (point - 9.0 / 11.0).abs();
    outcome(
        worst <= 1e-8 && closed <= 1e-10,
        format!("sweep deviation {worst:.2e}, |w - 9/11| = {closed:.2e}"),
    )
}

fn c5_quadratic_exactness() -> Outcome {
    let exact = ExactSolution::Quadratic {
        c0: vec![0.2, -0.1],
        c1: vec![0.5, 0.3],
        c2: vec![-0.4, 0.25],
    };
    let mut details = Vec::new();
    let mut overall = 0.0_f64;
    for with_b in [false, true] {
        let base = two_dof_system(with_b).unwrap();
        let (p, case) = manufactured_problem(&base, exact.clone(), 1.0).unwrap();
        let mut worst = 0.0_f64;
        for steps in [8, 16, 32] {
            let traj = run(&p, steps);
            for n in 0..=steps {
                let t = traj.grid.node(n);
                worst = worst
                    .max((&traj.w[n] - case.w_exact(t)).amax())
                    .max((&traj.u[n] - case.u_exact(t)).amax());
            }
        }
        overall = overall.max(worst);
        details.push(format!("B {}: {worst:.3e}", if with_b { "!= 0" } else { "= 0" }));
    }
    outcome(
        overall <= 1e-9,
        format!("max nodal error over N = 8, 16, 32 ({})", details.join(", ")),
    )
}

fn c6_empirical_order() -> Outcome {
    let (p, case) = sin_mode_problem();
    let start = Instant::now();
    let (report, _) = run_study(&p, Some(&case), 1.0, &[16, 32, 64, 128], 0, &SchemeOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let errors = report.errors(0);
    let orders: Vec<f64> = report.eoc.iter().map(|e| e[0].order().unwrap_or(f64::NAN)).collect();
    let ok = orders.iter().all(|p| (1.7..=2.3).contains(p))
        && errors.windows(2).all(|w| w[1] < w[0])
        && elapsed < 10.0;
    outcome(ok, format!("EOC {orders:.3?}, errors {}, {elapsed:.2} s", sci(&errors)))
}

fn c7_apriori_uniformity() -> Outcome {
    let p = rod_problem();
    let names = ["a1", "a2", "a3", "a4", "a5", "a6", "a7"];
    let reports: Vec<_> = [8, 16, 32, 64]
        .iter()
        .map(|&n| apriori_suite(&run(&p, n), &p).unwrap())
        .collect();
    let mut worst_ratio = 0.0_f64;
    let mut worst_name = "";
    for name in names {
        let base = reports[0].get(name).unwrap();
        for r in &reports[1..] {
            let ratio = r.get(name).unwrap() / base;
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst_name = name;
            }
        }
    }
    outcome(
        worst_ratio <= 2.0,
        format!("largest ratio to N = 8 value {worst_ratio:.3} ({worst_name})"),
    )
}

/// Composite midpoint rule with about `points` cells over `[0, T]`, split evenly per step
/// so that no cell straddles a node.
fn midpoint_gaps(traj: &RotheTrajectory, setting: &GalerkinSetting, points: usize) -> (f64, f64) {
    let interp = RotheInterpolants::new(traj, setting);
    let per_step = points.div_ceil(traj.steps());
    let h = traj.tau() / per_step as f64;
    let (mut gw, mut gu) = (0.0, 0.0);
    for n in 1..=traj.steps() {
        for k in 0..per_step {
            let t = traj.grid.node(n - 1) + (k as f64 + 0.5) * h;
            let dw = interp.eval(Which::WLin, t).unwrap() - interp.eval(Which::WBar, t).unwrap();
            let du = interp.eval(Which::ULin, t).unwrap() - interp.eval(Which::UBar, t).unwrap();
            gw += h * setting.embedded_dual_norm(&dw).powi(2);
            gu += h * setting.norm_v(&du).powi(2);
        }
    }
    (gw.sqrt(), gu.sqrt())
}

fn c8_gaps() -> Outcome {
    let rod = rod_problem();
    let (sin, _) = sin_mode_problem();
    let mut worst_ratio = f64::INFINITY;
    let mut worst_oracle = 0.0_f64;
    for (p, ladder) in [(&rod, [8, 16, 32, 64]), (&sin, [16, 32, 64, 128])] {
        let gaps: Vec<(f64, f64)> = ladder
            .iter()
            .map(|&n| {
                let traj = run(p, n);
                let gaps = RotheInterpolants::new(&traj, &p.setting).interpolant_gaps();
                let oracle = midpoint_gaps(&traj, &p.setting, 10_000);
                worst_oracle = worst_oracle.max((gaps.0 - oracle.0).abs()).max((gaps.1 - oracle.1).abs());
                gaps
            })
            .collect();
        for w in gaps.windows(2) {
            worst_ratio = worst_ratio.min(w[0].0 / w[1].0).min(w[0].1 / w[1].1);
        }
    }
    outcome(
        worst_ratio >= 1.8 && worst_oracle <= 1e-6,
        format!("smallest halving ratio {worst_ratio:.3}, oracle deviation {worst_oracle:.2e}"),
    )
}

fn c9_first_increment() -> Outcome {
    let p = rod_problem();
    let incs: Vec<f64> = [8, 16, 32, 64, 128]
        .iter()
        .map(|&n| {
            let t = run(&p, n);
            p.setting.norm_h(&(&t.w[1] - &t.w[0]))
        })
        .collect();
    outcome(incs.windows(2).all(|w| w[1] < w[0]), format!("|w1 - w0|_H = {}", sci(&incs)))
}

fn c10_interpolant_structure() -> Outcome {
    let rod = rod_problem();
    let (sin, _) = sin_mode_problem();
    let mut worst = 0.0_f64;
    let mut runs = 0;
    for (p, ladder) in [(&rod, &[8, 16, 32, 64, 128][..]), (&sin, &[16, 32, 64, 128][..])] {
        for &n in ladder {
            let traj = run(p, n);
            let interp = RotheInterpolants::new(&traj, &p.setting);
            let start = (&traj.w[1] + &traj.w[0]) * 0.5;
            let node = &traj.w[1] * 1.5 - &traj.w[0] * 0.5;
            let (left, right) = interp.w_lin_limits(1).unwrap();
            worst = worst
                .max((interp.eval(Which::WLin, 0.0).unwrap() - start).amax())
                .max((left - &node).amax())
                .max((right - &node).amax());
            runs += 1;
        }
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e} over {runs} runs"))
}

const ROD_STUDY: &str = r#"{
    "problem": {"kind": "rod", "elements": 8, "viscosity": 1.0, "elasticity": 1.0,
                "mu_static": 0.6, "mu_kinetic": 0.3, "slope": 2.0},
    "load": {"kind": "body_force", "profile": [0.0, 3.0, -1.0]},
    "ladder": [8, 16, 32],
    "reference_steps": 256,
    "seed": 11
}"#;

fn c11_determinism() -> Outcome {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut study = Vec::new();
    let mut traj = Vec::new();
    for d in &dirs {
        let mut cfg = StudyConfig::from_json(ROD_STUDY).unwrap();
        cfg.output_dir = d.path().to_path_buf();
        cmd_study(&cfg).unwrap();
        cmd_run(&cfg).unwrap();
        study.push(std::fs::read(d.path().join("study.csv")).unwrap());
        traj.push(std::fs::read(d.path().join("trajectory.csv")).unwrap());
    }
    let ok = study[0] == study[1] && traj[0] == traj[1] && !study[0].is_empty();
    outcome(
        ok,
        format!("study.csv {} bytes, trajectory.csv {} bytes", study[0].len(), traj[0].len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("identity sweeps", c1_identity_sweeps),
        ("double-step exactness", c2_double_step_exactness),
        ("affine load averaging", c3_affine_load_averaging),
        ("scalar oracle equivalence", c4_oracle_equivalence),
        ("quadratic manufactured exactness", c5_quadratic_exactness),
        ("empirical order", c6_empirical_order),
        ("a-priori uniformity", c7_apriori_uniformity),
        ("interpolant gaps", c8_gaps),
        ("first-increment decay", c9_first_increment),
        ("interpolant structure", c10_interpolant_structure),
        ("determinism", c11_determinism),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failures += 1;
        }
        println!("{status} criterion {:>2} {name}: {}", k + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
