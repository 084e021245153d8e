//! Reference methods: pooled ERM, IRM with known environments, and a
//! Wasserstein-robust DRO in its Lagrangian (per-sample adversary) form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::envs::Environment;
use crate::error::{HrmError, Result};
use crate::gates::LinearModel;
use crate::optim::{clip_norm, Optimizer, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Erm,
    Irm,
    Dro,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Erm => "erm",
            BaselineMethod::Irm => "irm",
            BaselineMethod::Dro => "dro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub grad_clip: f64,
    pub irm_lambda: f64,
    /// Epochs with penalty weight 1 before switching to `irm_lambda`.
    pub irm_anneal_epochs: usize,
    /// IRM's quartic penalty gets its own step rule.
    pub irm_optimizer: Optimizer,
    pub irm_learning_rate: f64,
    /// Transport-cost multiplier γ of the adversary.
    pub dro_gamma: f64,
    pub dro_inner_steps: usize,
    pub dro_inner_lr: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            method: BaselineMethod::Erm,
            learning_rate: 0.05,
            epochs: 3000,
            optimizer: Optimizer::Gd,
            grad_clip: 0.0,
            irm_lambda: 100.0,
            irm_anneal_epochs: 500,
            irm_optimizer: Optimizer::adam(),
            irm_learning_rate: 0.01,
            dro_gamma: 10.0,
            dro_inner_steps: 15,
            dro_inner_lr: 0.05,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(HrmError::config("learning_rate must be > 0"));
        }
        if !(self.irm_learning_rate > 0.0) {
            return Err(HrmError::config("irm_learning_rate must be > 0"));
        }
        self.irm_optimizer.validate()?;
        if !(self.irm_lambda >= 0.0) {
            return Err(HrmError::config("irm_lambda must be >= 0"));
        }
        if !(self.dro_gamma > 0.0) {
            return Err(HrmError::config("dro_gamma must be > 0"));
        }
        if !(self.dro_inner_lr > 0.0) {
            return Err(HrmError::config("dro_inner_lr must be > 0"));
        }
        if self.dro_inner_lr * self.dro_gamma >= 1.0 {
            return Err(HrmError::config(
                "dro_inner_lr * dro_gamma must be < 1 for a stable inner ascent",
            ));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(HrmError::config("grad_clip must be >= 0"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub model: LinearModel,
    /// Training objective per epoch (robust loss for DRO, divided by
    /// `max(λ, 1)` for IRM).
    pub trace: Vec<f64>,
}

/// Second moments of a design with unit weights.
struct Moments {
    sxx: DMatrix<f64>,
    sx: DVector<f64>,
    sxy: DVector<f64>,
    sy: f64,
    syy: f64,
}

impl Moments {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = x.nrows() as f64;
        Moments {
            sxx: x.transpose() * x / n,
            sx: x.row_sum().transpose() / n,
            sxy: x.transpose() * y / n,
            sy: y.sum() / n,
            syy: y.norm_squared() / n,
        }
    }

    /// `E[(θᵀx + b - y)²]`.
    fn mse(&self, theta: &DVector<f64>, b: f64) -> f64 {
        let sth = &self.sxx * theta;
        (theta.dot(&sth) + 2.0 * b * theta.dot(&self.sx) + b * b
            - 2.0 * theta.dot(&self.sxy)
            - 2.0 * b * self.sy
            + self.syy)
            .max(0.0)
    }

    fn mse_grad(&self, theta: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
        let g = (&self.sxx * theta + &self.sx * b - &self.sxy) * 2.0;
        let gb = 2.0 * (theta.dot(&self.sx) + b - self.sy);
        (g, gb)
    }
}

fn flat(theta: &DVector<f64>, b: f64) -> DVector<f64> {
    let d = theta.len();
    let mut v = DVector::zeros(d + 1);
    v.rows_mut(0, d).copy_from(theta);
    v[d] = b;
    v
}

fn apply(model: &mut LinearModel, step: &DVector<f64>) {
    let d = model.theta.len();
    model.theta -= step.rows(0, d);
    model.intercept -= step[d];
}

fn check_finite(value: f64, model: &LinearModel, epoch: usize) -> Result<()> {
    if !value.is_finite() || !model.is_finite() {
        return Err(HrmError::Training {
            epoch,
            reason: format!("objective became non-finite ({value})"),
        });
    }
    Ok(())
}

/// Dispatches on `cfg.method`. IRM splits `data` along its ground-truth labels.
pub fn fit_baseline(data: &Dataset, cfg: &BaselineConfig) -> Result<BaselineFit> {
    match cfg.method {
        BaselineMethod::Erm => fit_erm(data, cfg),
        BaselineMethod::Dro => fit_dro(data, cfg),
        BaselineMethod::Irm => fit_irm(&crate::envs::envs_from_labels(data)?, cfg),
    }
}

/// Pooled squared-error minimization by full-batch gradient descent.
pub fn fit_erm(data: &Dataset, cfg: &BaselineConfig) -> Result<BaselineFit> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(HrmError::data("erm: empty dataset"));
    }
    let mom = Moments::new(&data.x, &data.y);
    let mut model = LinearModel::zeros(data.d());
    let mut stepper = Stepper::new(cfg.optimizer, data.d() + 1);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let value = mom.mse(&model.theta, model.intercept);
        check_finite(value, &model, epoch)?;
        trace.push(value);
        let (g, gb) = mom.mse_grad(&model.theta, model.intercept);
        let step = stepper.step(&clip_norm(flat(&g, gb), cfg.grad_clip), cfg.learning_rate);
        apply(&mut model, &step);
    }
    check_finite(mom.mse(&model.theta, model.intercept), &model, cfg.epochs)?;
    Ok(BaselineFit { model, trace })
}

/// `∂/∂w E[(w·Φ - y)²]` at `w = 1` for `Φ = θᵀx + b`.
pub fn irm_dummy_gradient(env: &Environment, model: &LinearModel) -> f64 {
    let w = env.normalized_weights();
    let phi = model.predict(&env.x);
    phi.iter()
        .zip(env.y.iter())
        .zip(w.iter())
        .map(|((p, y), wi)| wi * 2.0 * (p - y) * p)
        .sum()
}

/// `Σ_e [L^e + λ (∂_w L^e(w·Φ)|_{w=1})²]`.
pub fn irm_objective(envs: &[Environment], model: &LinearModel, lambda: f64) -> f64 {
    envs.iter()
        .map(|e| {
            let d = irm_dummy_gradient(e, model);
            let w = e.normalized_weights();
            let r = model.predict(&e.x) - &e.y;
            r.component_mul(&r).dot(&w) + lambda * d * d
        })
        .sum()
}

/// IRMv1 on a linear representation with the scalar dummy classifier.
pub fn fit_irm(envs: &[Environment], cfg: &BaselineConfig) -> Result<BaselineFit> {
    cfg.validate()?;
    if envs.len() < 2 {
        return Err(HrmError::config(format!(
            "irm needs at least 2 labeled environments, got {}",
            envs.len()
        )));
    }
    let d = envs[0].d();
    // weighted moments per environment
    let moments: Vec<Moments> = envs
        .iter()
        .map(|e| {
            let w = e.normalized_weights();
            let n = e.n() as f64;
            let sw = w.map(|v| (v * n).sqrt());
            let mut xw = e.x.clone();
            for (i, s) in sw.iter().enumerate() {
                xw.row_mut(i).scale_mut(*s);
            }
            let yw = e.y.component_mul(&sw);
            let mut m = Moments::new(&xw, &yw);
            m.sx = e.x.transpose() * &w;
            m.sy = e.y.dot(&w);
            m
        })
        .collect();
    let mut model = LinearModel::zeros(d);
    let mut stepper = Stepper::new(cfg.irm_optimizer, d + 1);
    let mut trace = Vec::with_capacity(cfg.epochs);
    // weight 1 during the warm-up; the whole loss is divided by a weight above 1
    let eval = |model: &LinearModel, lambda: f64| -> (f64, DVector<f64>, f64) {
        let scale = 1.0 / lambda.max(1.0);
        let (th, b) = (&model.theta, model.intercept);
        let mut value = 0.0;
        let mut g = DVector::zeros(d);
        let mut gb = 0.0;
        for m in &moments {
            let sth = &m.sxx * th;
            let e_phi2 = th.dot(&sth) + 2.0 * b * th.dot(&m.sx) + b * b;
            let e_yphi = th.dot(&m.sxy) + b * m.sy;
            let dummy = 2.0 * (e_phi2 - e_yphi);
            value += m.mse(th, b) + lambda * dummy * dummy;
            let (rg, rgb) = m.mse_grad(th, b);
            let dg = (&sth * 4.0 + &m.sx * (4.0 * b) - &m.sxy * 2.0) * (2.0 * lambda * dummy);
            let dgb = (4.0 * th.dot(&m.sx) + 4.0 * b - 2.0 * m.sy) * (2.0 * lambda * dummy);
            g += rg + dg;
            gb += rgb + dgb;
        }
        (value * scale, g * scale, gb * scale)
    };
    let weight = |epoch: usize| {
        if epoch < cfg.irm_anneal_epochs {
            cfg.irm_lambda.min(1.0)
        } else {
            cfg.irm_lambda
        }
    };
    for epoch in 0..cfg.epochs {
        let (value, g, gb) = eval(&model, weight(epoch));
        check_finite(value, &model, epoch)?;
        trace.push(value);
        let step = stepper.step(
            &clip_norm(flat(&g, gb), cfg.grad_clip),
            cfg.irm_learning_rate,
        );
        apply(&mut model, &step);
    }
    check_finite(eval(&model, cfg.irm_lambda).0, &model, cfg.epochs)?;
    Ok(BaselineFit { model, trace })
}

/// Approximately maximizes `(θᵀ(x+δ) + b - y)² - γ‖δ‖²` over `δ` by
/// `steps` gradient-ascent steps from `δ = 0`.
pub fn dro_inner_max(
    model: &LinearModel,
    x: &[f64],
    y: f64,
    gamma: f64,
    steps: usize,
    lr: f64,
) -> DVector<f64> {
    let d = x.len();
    let xv = DVector::from_column_slice(x);
    let mut delta = DVector::zeros(d);
    for _ in 0..steps {
        let r = model.theta.dot(&(&xv + &delta)) + model.intercept - y;
        let g = &model.theta * (2.0 * r) - &delta * (2.0 * gamma);
        delta.axpy(lr, &g, 1.0);
    }
    delta
}

/// Outer descent on the per-sample robust surrogate, inner ascent for the
/// adversarial shift of every row.
///
/// Ascent from `δ = 0` keeps every iterate parallel to `θ`, so row `i` is
/// tracked as `δ_i = c_i θ`; this reproduces [`dro_inner_max`] exactly.
pub fn fit_dro(data: &Dataset, cfg: &BaselineConfig) -> Result<BaselineFit> {
    cfg.validate()?;
    let (n, d) = (data.n(), data.d());
    if n == 0 {
        return Err(HrmError::data("dro: empty dataset"));
    }
    let nf = n as f64;
    let mut model = LinearModel::zeros(d);
    let mut stepper = Stepper::new(cfg.optimizer, d + 1);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut c = DVector::zeros(n);
    for epoch in 0..cfg.epochs {
        let base = model.predict(&data.x) - &data.y;
        let tt = model.theta.norm_squared();
        c.fill(0.0);
        for _ in 0..cfg.dro_inner_steps {
            for (ci, bi) in c.iter_mut().zip(base.iter()) {
                let r = bi + *ci * tt;
                *ci += cfg.dro_inner_lr * (2.0 * r - 2.0 * cfg.dro_gamma * *ci);
            }
        }
        let r = &base + &c * tt;
        let value = (r.norm_squared() - cfg.dro_gamma * tt * c.norm_squared()) / nf;
        check_finite(value, &model, epoch)?;
        trace.push(value);
        // Danskin: gradient at the (approximate) maximizer, Σ 2 r_i (x_i + c_i θ)
        let g = (data.x.tr_mul(&r) + &model.theta * r.dot(&c)) * (2.0 / nf);
        let gb = 2.0 * r.sum() / nf;
        let step = stepper.step(&clip_norm(flat(&g, gb), cfg.grad_clip), cfg.learning_rate);
        apply(&mut model, &step);
    }
    if !model.is_finite() {
        return Err(HrmError::Training {
            epoch: cfg.epochs,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok(BaselineFit { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_data() -> Dataset {
        let x = DMatrix::from_column_slice(5, 1, &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let y = x.column(0) * 3.0;
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn erm_recovers_line() {
        let fit = fit_erm(&line_data(), &BaselineConfig::default()).unwrap();
        assert_relative_eq!(fit.model.theta[0], 3.0, epsilon = 1e-6);
        assert_relative_eq!(fit.model.intercept, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn irm_needs_two_envs() {
        let env = Environment::from_dataset(&line_data()).unwrap();
        assert!(fit_irm(&[env], &BaselineConfig::default()).is_err());
    }

    #[test]
    fn irm_on_identical_envs_is_erm() {
        let env = Environment::from_dataset(&line_data()).unwrap();
        let irm = fit_irm(&[env.clone(), env], &BaselineConfig::default()).unwrap();
        assert_relative_eq!(irm.model.theta[0], 3.0, epsilon = 1e-3);
    }

    #[test]
    fn dro_rejects_nonpositive_gamma() {
        let cfg = BaselineConfig {
            dro_gamma: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            fit_dro(&line_data(), &cfg),
            Err(HrmError::Config(_))
        ));
    }

    #[test]
    fn large_gamma_is_erm() {
        let x = DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let y = DVector::from_fn(30, |i, _| {
            x[(i, 0)] - 0.5 * x[(i, 1)] + 0.1 * ((i % 3) as f64 - 1.0)
        });
        let ds = Dataset::new(x, y).unwrap();
        let erm = fit_erm(&ds, &BaselineConfig::default()).unwrap();
        let cfg = BaselineConfig {
            dro_gamma: 1e6,
            dro_inner_lr: 1e-7,
            ..Default::default()
        };
        let dro = fit_dro(&ds, &cfg).unwrap();
        assert!((erm.model.theta - dro.model.theta).amax() < 1e-2);
    }

    #[test]
    fn inner_max_matches_closed_form() {
        let model = LinearModel {
            theta: DVector::from_column_slice(&[1.0]),
            intercept: 0.0,
        };
        let (gamma, x, y) = (4.0, 0.5, 0.0);
        let delta = dro_inner_max(&model, &[x], y, gamma, 200, 0.05);
        // δ* = r θ / (γ - ‖θ‖²)
        assert_relative_eq!(delta[0], 0.5 / 3.0, epsilon = 1e-9);
    }
}
