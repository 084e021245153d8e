//! Fast invariant checks run by `hrm-lab selftest`. Each check builds its own
//! small problem and compares against an independent route.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::{fit_erm, BaselineConfig};
use crate::cluster::{e_step, fit_mc_on, ClusterCenter, McConfig};
use crate::data::{rng_from_seed, Dataset, Rng64};
use crate::envs::Environment;
use crate::gates::{
    expected_l0, gate_mask, variance_penalty, GateVector, LinearModel, MpObjective,
};
use crate::hrm::partition_agreement;
use crate::linalg::ordinary_least_squares;
use crate::metrics::compute_metrics;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: [(&str, Check); 8] = [
    ("gate_bounds_and_expected_l0", gate_bounds),
    ("mp_gradient_vs_finite_differences", mp_gradient),
    ("em_objective_monotone", em_monotone),
    ("e_step_rows_normalized", e_step_rows),
    ("penalty_zero_on_duplicated_envs", duplicated_envs),
    ("erm_vs_normal_equations", erm_normal_equations),
    ("metrics_vs_direct_summation", metrics_oracle),
    ("planted_mixture_recovery", planted_recovery),
];

pub fn run_selftest() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| match check() {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        })
        .collect()
}

fn normal(rng: &mut Rng64) -> f64 {
    StandardNormal.sample(rng)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Φ by composite Simpson integration of the density from -10.
fn simpson_cdf(z: f64) -> f64 {
    let (a, n) = (-10.0, 4000);
    let h = (z - a) / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(a) + f(z);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn gate_bounds() -> Result<String, String> {
    let mut rng = rng_from_seed(11);
    let gate = GateVector {
        mu: DVector::from_fn(8, |_, _| rng.random_range(-1.5..2.5)),
        sigma_gate: 0.5,
    };
    for _ in 0..200 {
        let eps = DVector::from_fn(8, |_, _| 2.0 * normal(&mut rng));
        let m = gate_mask(&gate, &eps);
        ensure(m.iter().all(|v| (0.0..=1.0).contains(v)), || {
            format!("mask left [0, 1]: {m}")
        })?;
    }
    let got = expected_l0(&gate).map_err(|e| e.to_string())?;
    let want: f64 = gate.mu.iter().map(|m| simpson_cdf(m / 0.5)).sum();
    ensure((got - want).abs() < 1e-9, || {
        format!("expected_l0 {got} vs quadrature {want}")
    })?;
    Ok(format!("expected_l0 = {got:.12}"))
}

fn random_envs(rng: &mut Rng64, k: usize, n: usize, d: usize) -> Vec<Environment> {
    (0..k)
        .map(|e| {
            let x = DMatrix::from_fn(n, d, |_, _| normal(rng) * (1.0 + e as f64 * 0.3));
            let y = DVector::from_fn(n, |i, _| x.row(i).sum() * 0.5 + normal(rng) + e as f64);
            Environment::unweighted(x, y).expect("valid environment")
        })
        .collect()
}

fn mp_gradient() -> Result<String, String> {
    let mut rng = rng_from_seed(12);
    let d = 4;
    let envs = random_envs(&mut rng, 3, 60, d);
    let obj = MpObjective::new(&envs, 3.0, 0.1, 0.5).map_err(|e| e.to_string())?;
    let gate = GateVector {
        mu: DVector::from_vec(vec![0.2, 0.4, 0.6, 0.8]),
        sigma_gate: 0.5,
    };
    let model = LinearModel {
        theta: DVector::from_fn(d, |_, _| normal(&mut rng)),
        intercept: 0.3,
    };
    let (_, g) = obj.deterministic(&gate, &model);
    let f = |gate: &GateVector, model: &LinearModel| obj.deterministic(gate, model).0;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / fd.abs().max(1.0));
    };
    for j in 0..d {
        let mut p = model.clone();
        let mut m = model.clone();
        p.theta[j] += h;
        m.theta[j] -= h;
        check(g.theta[j], f(&gate, &p), f(&gate, &m));
        let mut gp = gate.clone();
        let mut gm = gate.clone();
        gp.mu[j] += h;
        gm.mu[j] -= h;
        check(g.mu[j], f(&gp, &model), f(&gm, &model));
    }
    let mut p = model.clone();
    let mut m = model.clone();
    p.intercept += h;
    m.intercept -= h;
    check(g.intercept, f(&gate, &p), f(&gate, &m));
    ensure(worst <= 1e-4, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("max relative error {worst:.3e}"))
}

/// Two regressions on ψ ∈ ℝ² that differ in slope and intercept.
fn planted(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let psi = DMatrix::from_fn(n, 2, |_, _| normal(&mut rng));
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let y = DVector::from_fn(n, |i, _| {
        let (t, b) = if labels[i] == 0 {
            (3.0, 2.0)
        } else {
            (-3.0, -2.0)
        };
        t * psi[(i, 0)] + 0.5 * psi[(i, 1)] + b + 0.1 * normal(&mut rng)
    });
    (psi, y, labels)
}

fn em_monotone() -> Result<String, String> {
    let (psi, y, _) = planted(400, 13);
    let fit = fit_mc_on(
        &psi,
        &y,
        &McConfig {
            seed: 3,
            ..McConfig::default()
        },
        None,
    )
    .map_err(|e| e.to_string())?;
    for w in fit.trace.windows(2) {
        ensure(w[1] <= w[0] + 1e-9, || {
            format!("objective rose from {} to {}", w[0], w[1])
        })?;
    }
    Ok(format!("{} iterations", fit.trace.len() - 1))
}

fn e_step_rows() -> Result<String, String> {
    let mut rng = rng_from_seed(14);
    let psi = DMatrix::from_fn(100, 3, |_, _| 5.0 * normal(&mut rng));
    let y = DVector::from_fn(100, |_, _| 50.0 * normal(&mut rng));
    let centers: Vec<ClusterCenter> = (0..3)
        .map(|_| ClusterCenter {
            model: LinearModel {
                theta: DVector::from_fn(3, |_, _| normal(&mut rng)),
                intercept: normal(&mut rng),
            },
            sigma_y: 0.05,
        })
        .collect();
    let q = DVector::from_vec(vec![0.5, 0.3, 0.2]);
    let w = e_step(&psi, &y, &centers, &q).map_err(|e| e.to_string())?;
    let worst = w
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(
        worst <= 1e-9 && w.iter().all(|v| v.is_finite() && *v >= 0.0),
        || format!("worst row-sum error {worst:.3e}"),
    )?;
    Ok(format!("worst row-sum error {worst:.3e}"))
}

fn duplicated_envs() -> Result<String, String> {
    let mut rng = rng_from_seed(15);
    let env = random_envs(&mut rng, 1, 50, 4).remove(0);
    let gate = GateVector {
        mu: DVector::from_vec(vec![0.3, 0.9, 1.4, -0.2]),
        sigma_gate: 0.5,
    };
    let model = LinearModel {
        theta: DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]),
        intercept: 0.7,
    };
    let pen = variance_penalty(&[env.clone(), env.clone(), env], &gate, &model)
        .map_err(|e| e.to_string())?;
    ensure(pen.abs() <= 1e-12, || format!("penalty {pen:.3e}"))?;
    Ok(format!("penalty {pen:.3e}"))
}

fn erm_normal_equations() -> Result<String, String> {
    let mut rng = rng_from_seed(16);
    let x = DMatrix::from_fn(300, 3, |_, _| normal(&mut rng));
    let y = DVector::from_fn(300, |i, _| {
        x[(i, 0)] - 2.0 * x[(i, 1)] + 0.5 * x[(i, 2)] + 1.0 + 0.3 * normal(&mut rng)
    });
    let (theta, b) = ordinary_least_squares(&x, &y).map_err(|e| e.to_string())?;
    let ds = Dataset::new(x, y).map_err(|e| e.to_string())?;
    let fit = fit_erm(&ds, &BaselineConfig::default()).map_err(|e| e.to_string())?;
    let err = (&fit.model.theta - &theta)
        .amax()
        .max((fit.model.intercept - b).abs());
    ensure(err <= 1e-3, || format!("coefficient error {err:.3e}"))?;
    Ok(format!("coefficient error {err:.3e}"))
}

fn metrics_oracle() -> Result<String, String> {
    let mut rng = rng_from_seed(17);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..20);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let r = compute_metrics(&losses).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        let mut max = losses[0];
        for l in &losses {
            sum += l;
            if *l > max {
                max = *l;
            }
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for l in &losses {
            ss += (l - mean) * (l - mean);
        }
        let std = (ss / (n as f64 - 1.0)).sqrt();
        worst = worst
            .max((r.mean_error - mean).abs())
            .max((r.std_error - std).abs())
            .max((r.max_error - max).abs());
    }
    ensure(worst <= 1e-12, || format!("worst deviation {worst:.3e}"))?;
    Ok(format!("worst deviation {worst:.3e}"))
}

fn planted_recovery() -> Result<String, String> {
    let (psi, y, truth) = planted(1000, 18);
    let fit = fit_mc_on(
        &psi,
        &y,
        &McConfig {
            seed: 5,
            ..McConfig::default()
        },
        None,
    )
    .map_err(|e| e.to_string())?;
    let acc = partition_agreement(&fit.partition.hard_labels, &truth).map_err(|e| e.to_string())?;
    ensure(acc >= 0.95, || format!("agreement {acc:.4}"))?;
    Ok(format!("agreement {acc:.4}"))
}
