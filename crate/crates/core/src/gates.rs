//! Invariant prediction: a linear model behind clipped-Gaussian feature
//! gates, trained on the environment-averaged squared error plus an
//! expected-L0 sparsity term and a penalty on the cross-environment variance
//! of the parameter gradients.
//!
//! For a linear model with squared loss every quantity in the objective is a
//! function of per-environment weighted moments `(E[xxᵀ], E[x], E[xy], E[y], E[y²])`,
//! so training precomputes those once and never touches the rows again.
//! [`env_risk`] and [`variance_penalty`] evaluate the same quantities directly
//! from the rows and serve as the reference path in tests.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::data::{rng_from_seed, Rng64};
use crate::envs::Environment;
use crate::error::{HrmError, Result};
use crate::optim::{clip_norm, Optimizer, Stepper};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Gate locations `μ` with a shared noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVector {
    pub mu: DVector<f64>,
    pub sigma_gate: f64,
}

impl GateVector {
    /// Every gate half open (`μ = 0.5`).
    pub fn half_open(d: usize, sigma_gate: f64) -> Self {
        GateVector {
            mu: DVector::from_element(d, 0.5),
            sigma_gate,
        }
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

/// `clip(μ + ε, 0, 1)` elementwise.
pub fn gate_mask(gate: &GateVector, noise: &DVector<f64>) -> DVector<f64> {
    gate.mu.zip_map(noise, |m, e| (m + e).clamp(0.0, 1.0))
}

/// The noiseless gate `clip(μ, 0, 1)` used for evaluation and the convert step.
pub fn hard_mask(gate: &GateVector) -> DVector<f64> {
    gate.mu.map(|m| m.clamp(0.0, 1.0))
}

/// Expected number of open gates, `Σ Φ(μ_i/σ)`.
pub fn expected_l0(gate: &GateVector) -> Result<f64> {
    if !(gate.sigma_gate > 0.0) {
        return Err(HrmError::config(format!(
            "sigma_gate must be positive, got {}",
            gate.sigma_gate
        )));
    }
    Ok(gate
        .mu
        .iter()
        .map(|m| std_normal_cdf(m / gate.sigma_gate))
        .sum())
}

fn expected_l0_grad(mu: &DVector<f64>, sigma: f64) -> DVector<f64> {
    mu.map(|m| std_normal_pdf(m / sigma) / sigma)
}

fn clip_indicator(pre: &DVector<f64>) -> DVector<f64> {
    pre.map(|v| if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: DVector<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        LinearModel {
            theta: DVector::zeros(d),
            intercept: 0.0,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.theta).add_scalar(self.intercept)
    }

    /// The equivalent unmasked model for inputs `mask ⊙ x`.
    pub fn masked(&self, mask: &DVector<f64>) -> LinearModel {
        LinearModel {
            theta: self.theta.component_mul(mask),
            intercept: self.intercept,
        }
    }

    pub fn mse(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        (self.predict(x) - y).norm_squared() / y.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.theta.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpConfig {
    /// Weight of the gradient-variance penalty.
    pub lambda: f64,
    /// Weight of the expected-L0 term.
    pub alpha: f64,
    pub sigma_gate: f64,
    pub learning_rate: f64,
    /// Step size at epoch t is `learning_rate / (1 + lr_decay·t)`.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Gate-noise draws averaged per step.
    pub mc_samples: usize,
    pub optimizer: Optimizer,
    /// Evaluate the training penalty on the sampled gates instead of `clip(μ)`.
    pub stochastic_penalty: bool,
    /// Rescale the joint gradient to at most this norm; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for MpConfig {
    fn default() -> Self {
        MpConfig {
            lambda: 10.0,
            alpha: 0.01,
            sigma_gate: 0.5,
            learning_rate: 0.05,
            lr_decay: 0.0,
            epochs: 3000,
            mc_samples: 1,
            optimizer: Optimizer::Gd,
            stochastic_penalty: false,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.alpha >= 0.0) {
            return Err(HrmError::config("lambda and alpha must be >= 0"));
        }
        if !(self.sigma_gate > 0.0) {
            return Err(HrmError::config("sigma_gate must be > 0"));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay >= 0.0) {
            return Err(HrmError::config(
                "learning_rate must be > 0 and lr_decay >= 0",
            ));
        }
        if self.mc_samples == 0 {
            return Err(HrmError::config("mc_samples must be >= 1"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(HrmError::config("grad_clip must be >= 0"));
        }
        self.optimizer.validate()
    }
}

/// Weighted moments of one environment (weights normalized to sum to one).
#[derive(Debug, Clone)]
struct EnvMoments {
    sxx: DMatrix<f64>,
    sx: DVector<f64>,
    sxy: DVector<f64>,
    sy: f64,
    syy: f64,
}

impl EnvMoments {
    fn new(env: &Environment) -> Self {
        let w = env.normalized_weights();
        let wx = DMatrix::from_fn(env.n(), env.d(), |i, j| w[i] * env.x[(i, j)]);
        EnvMoments {
            sxx: env.x.tr_mul(&wx),
            sx: wx.row_sum().transpose(),
            sxy: wx.tr_mul(&env.y),
            sy: w.dot(&env.y),
            syy: env.y.iter().zip(w.iter()).map(|(y, w)| w * y * y).sum(),
        }
    }

    /// Mean squared error of the effective coefficients `beta` (already masked),
    /// together with `c = E[(ŷ - y)x]` and `E[ŷ - y]`.
    fn risk(&self, beta: &DVector<f64>, b: f64) -> (f64, DVector<f64>, f64) {
        let sb = &self.sxx * beta;
        let value = beta.dot(&sb) + 2.0 * b * self.sx.dot(beta) + b * b
            - 2.0 * beta.dot(&self.sxy)
            - 2.0 * b * self.sy
            + self.syy;
        let c = sb + &self.sx * b - &self.sxy;
        let mean_resid = self.sx.dot(beta) + b - self.sy;
        (value.max(0.0), c, mean_resid)
    }
}

/// Gradient of the Mp objective with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MpGradient {
    pub theta: DVector<f64>,
    pub intercept: f64,
    pub mu: DVector<f64>,
}

impl MpGradient {
    fn zeros(d: usize) -> Self {
        MpGradient {
            theta: DVector::zeros(d),
            intercept: 0.0,
            mu: DVector::zeros(d),
        }
    }

    fn is_finite(&self) -> bool {
        self.intercept.is_finite()
            && self
                .theta
                .iter()
                .chain(self.mu.iter())
                .all(|v| v.is_finite())
    }

    fn flatten(&self) -> DVector<f64> {
        let d = self.theta.len();
        let mut v = DVector::zeros(2 * d + 1);
        v.rows_mut(0, d).copy_from(&self.theta);
        v[d] = self.intercept;
        v.rows_mut(d + 1, d).copy_from(&self.mu);
        v
    }
}

/// Value/gradient pieces with respect to `(θ, b, mask)`.
struct Partial {
    value: f64,
    theta: DVector<f64>,
    intercept: f64,
    mask: DVector<f64>,
}

/// The full Mp objective over a fixed set of environments.
#[derive(Debug, Clone)]
pub struct MpObjective {
    moments: Vec<EnvMoments>,
    pub lambda: f64,
    pub alpha: f64,
    pub sigma_gate: f64,
    pub stochastic_penalty: bool,
}

impl MpObjective {
    pub fn new(envs: &[Environment], lambda: f64, alpha: f64, sigma_gate: f64) -> Result<Self> {
        if envs.len() < 2 {
            return Err(HrmError::config(format!(
                "need at least 2 environments, got {}",
                envs.len()
            )));
        }
        let d = envs[0].d();
        if envs.iter().any(|e| e.d() != d) {
            return Err(HrmError::data("environments disagree on dimension"));
        }
        Ok(MpObjective {
            moments: envs.iter().map(EnvMoments::new).collect(),
            lambda,
            alpha,
            sigma_gate,
            stochastic_penalty: false,
        })
    }

    pub fn with_stochastic_penalty(mut self, on: bool) -> Self {
        self.stochastic_penalty = on;
        self
    }

    pub fn d(&self) -> usize {
        self.moments[0].sx.len()
    }

    pub fn n_envs(&self) -> usize {
        self.moments.len()
    }

    /// Environment-averaged risk at a fixed mask.
    fn risk_term(&self, model: &LinearModel, mask: &DVector<f64>) -> Partial {
        let k = self.n_envs() as f64;
        let beta = model.theta.component_mul(mask);
        let mut value = 0.0;
        let mut g_beta = DVector::zeros(self.d());
        let mut g_b = 0.0;
        for m in &self.moments {
            let (r, c, mean_resid) = m.risk(&beta, model.intercept);
            value += r / k;
            g_beta.axpy(2.0 / k, &c, 1.0);
            g_b += 2.0 * mean_resid / k;
        }
        Partial {
            value,
            theta: g_beta.component_mul(mask),
            intercept: g_b,
            mask: g_beta.component_mul(&model.theta),
        }
    }

    /// `‖Var_e(∇_θ L^e) ⊙ M‖²` with the unbiased variance across environments.
    fn penalty_term(&self, model: &LinearModel, mask: &DVector<f64>) -> Partial {
        let d = self.d();
        let k = self.n_envs();
        let beta = model.theta.component_mul(mask);
        let cs: Vec<DVector<f64>> = self
            .moments
            .iter()
            .map(|m| m.risk(&beta, model.intercept).1)
            .collect();
        let gs: Vec<DVector<f64>> = cs.iter().map(|c| c.component_mul(mask) * 2.0).collect();
        let mean = gs.iter().fold(DVector::zeros(d), |acc, g| acc + g) / k as f64;
        let denom = (k - 1) as f64;
        let var = gs
            .iter()
            .fold(DVector::zeros(d), |acc, g| acc + (g - &mean).map(|v| v * v))
            / denom;
        let weighted = var.component_mul(mask);
        let value = weighted.norm_squared();

        // dP/dv_j = 2 v_j m_j²;  dP/dg_ej = dP/dv_j · 2(g_ej - ḡ_j)/(K-1)
        let dp_dv = var.zip_map(mask, |v, m| 2.0 * v * m * m);
        let mut g_beta = DVector::zeros(d);
        let mut g_b = 0.0;
        let mut g_mask = var.zip_map(mask, |v, m| 2.0 * v * v * m);
        for ((m, g), c) in self.moments.iter().zip(&gs).zip(&cs) {
            let a = dp_dv.component_mul(&(g - &mean)) * (2.0 / denom);
            // g_e = 2 m ⊙ c_e,  c_e = S_e β + b E[x] - E[xy]
            let u = a.component_mul(mask);
            g_beta.axpy(2.0, &(&m.sxx * &u), 1.0);
            g_b += 2.0 * m.sx.dot(&u);
            g_mask.axpy(2.0, &a.component_mul(c), 1.0);
        }
        g_mask += g_beta.component_mul(&model.theta);
        Partial {
            value,
            theta: g_beta.component_mul(mask),
            intercept: g_b,
            mask: g_mask,
        }
    }

    fn l0_term(&self, gate: &GateVector) -> (f64, DVector<f64>) {
        if self.alpha == 0.0 {
            return (0.0, DVector::zeros(gate.d()));
        }
        let value: f64 = gate
            .mu
            .iter()
            .map(|m| std_normal_cdf(m / self.sigma_gate))
            .sum();
        (
            self.alpha * value,
            expected_l0_grad(&gate.mu, self.sigma_gate) * self.alpha,
        )
    }

    /// Objective and gradient with the noiseless mask `clip(μ)` used in the
    /// risk term as well as in the penalty.
    pub fn deterministic(&self, gate: &GateVector, model: &LinearModel) -> (f64, MpGradient) {
        self.evaluate(gate, model, &[DVector::zeros(gate.d())])
    }

    /// Objective and gradient with the risk term averaged over the given
    /// gate-noise draws (reparameterized). The penalty uses `clip(μ)` unless
    /// `stochastic_penalty` is set, in which case it is averaged over the
    /// same draws.
    pub fn evaluate(
        &self,
        gate: &GateVector,
        model: &LinearModel,
        noises: &[DVector<f64>],
    ) -> (f64, MpGradient) {
        let d = self.d();
        let s = noises.len().max(1) as f64;
        let mut grad = MpGradient::zeros(d);
        let mut value = 0.0;
        for eps in noises {
            let pre = &gate.mu + eps;
            let mask = pre.map(|v| v.clamp(0.0, 1.0));
            let part = self.risk_term(model, &mask);
            value += part.value / s;
            grad.theta.axpy(1.0 / s, &part.theta, 1.0);
            grad.intercept += part.intercept / s;
            grad.mu.axpy(
                1.0 / s,
                &part.mask.component_mul(&clip_indicator(&pre)),
                1.0,
            );
            if self.stochastic_penalty && self.lambda > 0.0 {
                let pen = self.penalty_term(model, &mask);
                let w = self.lambda / s;
                value += w * pen.value;
                grad.theta.axpy(w, &pen.theta, 1.0);
                grad.intercept += w * pen.intercept;
                grad.mu
                    .axpy(w, &pen.mask.component_mul(&clip_indicator(&pre)), 1.0);
            }
        }
        let (l0, l0_grad) = self.l0_term(gate);
        value += l0;
        grad.mu += l0_grad;
        if self.lambda > 0.0 && !self.stochastic_penalty {
            let mask = hard_mask(gate);
            let part = self.penalty_term(model, &mask);
            value += self.lambda * part.value;
            grad.theta.axpy(self.lambda, &part.theta, 1.0);
            grad.intercept += self.lambda * part.intercept;
            grad.mu.axpy(
                self.lambda,
                &part.mask.component_mul(&clip_indicator(&gate.mu)),
                1.0,
            );
        }
        (value, grad)
    }

    /// Penalty value only (deterministic mask).
    pub fn penalty(&self, gate: &GateVector, model: &LinearModel) -> f64 {
        self.penalty_term(model, &hard_mask(gate)).value
    }

    /// Environment-averaged risk only (deterministic mask).
    pub fn risk(&self, gate: &GateVector, model: &LinearModel) -> f64 {
        self.risk_term(model, &hard_mask(gate)).value
    }
}

fn masked_residuals(env: &Environment, model: &LinearModel, mask: &DVector<f64>) -> DVector<f64> {
    model.masked(mask).predict(&env.x) - &env.y
}

/// Monte-Carlo estimate of `E_M[mean (θᵀ(M⊙x) + b - y)²] + α·E‖M‖₀` computed
/// from the rows. With `sigma_gate == 0` the mask is deterministic.
pub fn env_risk(
    env: &Environment,
    gate: &GateVector,
    model: &LinearModel,
    alpha: f64,
    mc_samples: usize,
    rng: &mut Rng64,
) -> Result<f64> {
    if env.n() == 0 || env.total_weight() <= 0.0 {
        return Err(HrmError::data("environment is empty"));
    }
    let w = env.normalized_weights();
    let draws = if gate.sigma_gate > 0.0 {
        mc_samples.max(1)
    } else {
        1
    };
    let noise = Normal::new(0.0, gate.sigma_gate.max(0.0))
        .map_err(|e| HrmError::config(format!("invalid gate noise: {e}")))?;
    let mut total = 0.0;
    for _ in 0..draws {
        let eps = DVector::from_fn(gate.d(), |_, _| noise.sample(rng));
        let r = masked_residuals(env, model, &gate_mask(gate, &eps));
        total += r.iter().zip(w.iter()).map(|(r, w)| w * r * r).sum::<f64>();
    }
    let l0 = if alpha > 0.0 {
        alpha * expected_l0(gate)?
    } else {
        0.0
    };
    Ok(total / draws as f64 + l0)
}

/// Per-environment gradient `∇_θ E[(θᵀ(M⊙x) + b - y)²]` computed from the rows.
pub fn env_gradient(env: &Environment, model: &LinearModel, mask: &DVector<f64>) -> DVector<f64> {
    let w = env.normalized_weights();
    let r = masked_residuals(env, model, mask).component_mul(&w);
    (env.x.tr_mul(&r) * 2.0).component_mul(mask)
}

/// `‖Var_e(g_e) ⊙ M‖²` with the deterministic mask and unbiased variance.
pub fn variance_penalty(
    envs: &[Environment],
    gate: &GateVector,
    model: &LinearModel,
) -> Result<f64> {
    if envs.len() < 2 {
        return Err(HrmError::config(
            "variance penalty needs at least 2 environments",
        ));
    }
    let mask = hard_mask(gate);
    let gs: Vec<DVector<f64>> = envs.iter().map(|e| env_gradient(e, model, &mask)).collect();
    let k = gs.len() as f64;
    let mean = gs.iter().fold(DVector::zeros(mask.len()), |a, g| a + g) / k;
    let var = gs.iter().fold(DVector::zeros(mask.len()), |a, g| {
        a + (g - &mean).map(|v| v * v)
    }) / (k - 1.0);
    Ok(var.component_mul(&mask).norm_squared())
}

/// Result of one Mp fit.
#[derive(Debug, Clone, PartialEq)]
pub struct MpFit {
    pub gate: GateVector,
    pub model: LinearModel,
    /// Training objective per epoch.
    pub trace: Vec<f64>,
}

impl MpFit {
    /// The deployable predictor: `θ ⊙ clip(μ)` with the learned intercept.
    pub fn predictor(&self) -> LinearModel {
        self.model.masked(&hard_mask(&self.gate))
    }
}

/// Full-batch gradient descent on the Mp objective.
pub fn fit_mp(
    envs: &[Environment],
    cfg: &MpConfig,
    warm_start: Option<(&GateVector, &LinearModel)>,
) -> Result<MpFit> {
    cfg.validate()?;
    let objective = MpObjective::new(envs, cfg.lambda, cfg.alpha, cfg.sigma_gate)?
        .with_stochastic_penalty(cfg.stochastic_penalty);
    let d = objective.d();
    let (mut gate, mut model) = match warm_start {
        Some((g, m)) => {
            if g.d() != d || m.theta.len() != d {
                return Err(HrmError::config("warm start dimension does not match data"));
            }
            (g.clone(), m.clone())
        }
        None => (
            GateVector::half_open(d, cfg.sigma_gate),
            LinearModel::zeros(d),
        ),
    };
    if cfg.epochs == 0 {
        return Ok(MpFit {
            gate,
            model,
            trace: Vec::new(),
        });
    }
    gate.sigma_gate = cfg.sigma_gate;
    let mut rng = rng_from_seed(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma_gate).map_err(|e| HrmError::config(e.to_string()))?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut noises = vec![DVector::zeros(d); cfg.mc_samples];
    let mut stepper = Stepper::new(cfg.optimizer, 2 * d + 1);
    for epoch in 0..cfg.epochs {
        for eps in noises.iter_mut() {
            for v in eps.iter_mut() {
                *v = noise.sample(&mut rng);
            }
        }
        let (value, grad) = objective.evaluate(&gate, &model, &noises);
        if !value.is_finite() || !grad.is_finite() {
            return Err(HrmError::Training {
                epoch,
                reason: format!("objective became non-finite ({value})"),
            });
        }
        trace.push(value);
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        let step = stepper.step(&clip_norm(grad.flatten(), cfg.grad_clip), lr);
        model.theta -= step.rows(0, d);
        model.intercept -= step[d];
        gate.mu -= step.rows(d + 1, d);
    }
    if !model.is_finite() || gate.mu.iter().any(|v| !v.is_finite()) {
        return Err(HrmError::Training {
            epoch: cfg.epochs,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok(MpFit { gate, model, trace })
}

/// Flat JSON checkpoint shared by every trained model; gate fields are absent
/// for ungated baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_gate: Option<f64>,
    pub theta: Vec<f64>,
    pub intercept: f64,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl Checkpoint {
    pub fn gated(method: &str, fit: &MpFit, cfg: &MpConfig) -> Result<Self> {
        Ok(Checkpoint {
            method: method.to_string(),
            mu: Some(fit.gate.mu.iter().copied().collect()),
            sigma_gate: Some(fit.gate.sigma_gate),
            theta: fit.model.theta.iter().copied().collect(),
            intercept: fit.model.intercept,
            config: serde_json::to_value(cfg)?,
            seed: cfg.seed,
        })
    }

    pub fn plain(method: &str, model: &LinearModel, config: serde_json::Value, seed: u64) -> Self {
        Checkpoint {
            method: method.to_string(),
            mu: None,
            sigma_gate: None,
            theta: model.theta.iter().copied().collect(),
            intercept: model.intercept,
            config,
            seed,
        }
    }

    /// The effective predictor (gates applied deterministically when present).
    pub fn predictor(&self) -> Result<LinearModel> {
        let model = LinearModel {
            theta: DVector::from_vec(self.theta.clone()),
            intercept: self.intercept,
        };
        match (&self.mu, self.sigma_gate) {
            (Some(mu), Some(sigma_gate)) => {
                if mu.len() != self.theta.len() {
                    return Err(HrmError::data("checkpoint mu and theta lengths differ"));
                }
                let gate = GateVector {
                    mu: DVector::from_vec(mu.clone()),
                    sigma_gate,
                };
                Ok(model.masked(&hard_mask(&gate)))
            }
            (None, None) => Ok(model),
            _ => Err(HrmError::data("checkpoint has partial gate fields")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gate(mu: &[f64], sigma: f64) -> GateVector {
        GateVector {
            mu: DVector::from_column_slice(mu),
            sigma_gate: sigma,
        }
    }

    fn env(rows: &[[f64; 1]], ys: &[f64]) -> Environment {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Environment::unweighted(
            DMatrix::from_row_slice(rows.len(), 1, &flat),
            DVector::from_column_slice(ys),
        )
        .unwrap()
    }

    #[test]
    fn gate_mask_examples() {
        let g = gate(&[0.5, 2.0, -1.0], 0.5);
        let m = gate_mask(&g, &DVector::from_column_slice(&[0.0, -0.3, 0.2]));
        assert_eq!(m.as_slice(), &[0.5, 1.0, 0.0]);
    }

    #[test]
    fn hard_mask_examples() {
        assert_eq!(hard_mask(&gate(&[0.5], 0.5)).as_slice(), &[0.5]);
        assert_eq!(hard_mask(&gate(&[-3.0, 3.0], 0.5)).as_slice(), &[0.0, 1.0]);
        assert_eq!(hard_mask(&gate(&[0.2, 0.9], 0.5)).as_slice(), &[0.2, 0.9]);
    }

    #[test]
    fn expected_l0_examples() {
        assert_relative_eq!(
            expected_l0(&gate(&[0.0], 0.5)).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            expected_l0(&gate(&[0.5, -0.5], 0.5)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            expected_l0(&gate(&[0.0], 0.0)),
            Err(HrmError::Config(_))
        ));
        assert!(expected_l0(&gate(&[0.0], -1.0)).is_err());
    }

    #[test]
    fn env_risk_deterministic_limit() {
        let e = env(&[[1.0]], &[1.0]);
        let model = LinearModel {
            theta: DVector::from_element(1, 1.0),
            intercept: 0.0,
        };
        let mut rng = rng_from_seed(0);
        let r = env_risk(&e, &gate(&[0.5], 1e-12), &model, 0.0, 16, &mut rng).unwrap();
        assert_relative_eq!(r, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn env_risk_open_gates_is_plain_mse() {
        let e = env(&[[1.0], [2.0], [3.0]], &[2.0, 3.0, 7.0]);
        let model = LinearModel {
            theta: DVector::from_element(1, 2.0),
            intercept: 0.5,
        };
        let mut rng = rng_from_seed(1);
        let r = env_risk(&e, &gate(&[50.0], 0.5), &model, 0.0, 8, &mut rng).unwrap();
        assert_relative_eq!(r, model.mse(&e.x, &e.y), epsilon = 1e-12);
    }

    #[test]
    fn env_risk_closed_gates_predicts_intercept() {
        let e = env(&[[1.0], [2.0], [3.0]], &[2.0, 3.0, 7.0]);
        let model = LinearModel {
            theta: DVector::from_element(1, 2.0),
            intercept: 4.0,
        };
        let mut rng = rng_from_seed(1);
        let alpha = 0.1;
        let g = gate(&[-50.0], 0.5);
        let r = env_risk(&e, &g, &model, alpha, 8, &mut rng).unwrap();
        let expected = ((2.0f64 - 4.0).powi(2) + 1.0 + 9.0) / 3.0;
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn variance_penalty_hand_example() {
        let envs = [env(&[[1.0]], &[1.0]), env(&[[1.0]], &[-1.0])];
        let model = LinearModel::zeros(1);
        let p = variance_penalty(&envs, &gate(&[1.0], 0.5), &model).unwrap();
        assert_relative_eq!(p, 64.0, epsilon = 1e-12);
        let obj = MpObjective::new(&envs, 1.0, 0.0, 0.5).unwrap();
        assert_relative_eq!(
            obj.penalty(&gate(&[1.0], 0.5), &model),
            64.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn variance_penalty_zero_cases() {
        let a = env(&[[1.0], [2.0]], &[0.3, 1.0]);
        let model = LinearModel {
            theta: DVector::from_element(1, 0.7),
            intercept: 0.1,
        };
        let same = [a.clone(), a.clone()];
        assert_eq!(
            variance_penalty(&same, &gate(&[0.8], 0.5), &model).unwrap(),
            0.0
        );
        let diff = [a, env(&[[1.0]], &[5.0])];
        assert_eq!(
            variance_penalty(&diff, &gate(&[-1.0], 0.5), &model).unwrap(),
            0.0
        );
        assert!(variance_penalty(&diff[..1], &gate(&[1.0], 0.5), &model).is_err());
    }

    #[test]
    fn warm_start_with_zero_epochs_is_identity() {
        let envs = [
            env(&[[1.0], [2.0]], &[2.0, 4.0]),
            env(&[[1.0], [3.0]], &[2.0, 6.0]),
        ];
        let g = gate(&[0.3], 0.5);
        let m = LinearModel {
            theta: DVector::from_element(1, -1.5),
            intercept: 0.25,
        };
        let cfg = MpConfig {
            epochs: 0,
            ..Default::default()
        };
        let fit = fit_mp(&envs, &cfg, Some((&g, &m))).unwrap();
        assert_eq!(fit.gate, g);
        assert_eq!(fit.model, m);
        assert!(fit.trace.is_empty());
    }

    #[test]
    fn reduces_to_least_squares() {
        let xs: Vec<[f64; 1]> = (0..10).map(|i| [i as f64 / 5.0 - 1.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0]).collect();
        let e = env(&xs, &ys);
        let g = gate(&[10.0], 0.5);
        let cfg = MpConfig {
            lambda: 0.0,
            alpha: 0.0,
            ..Default::default()
        };
        let fit = fit_mp(&[e.clone(), e], &cfg, Some((&g, &LinearModel::zeros(1)))).unwrap();
        assert_relative_eq!(fit.model.theta[0], 2.0, epsilon = 1e-3);
        assert!(fit.trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn needs_two_environments() {
        let e = env(&[[1.0]], &[1.0]);
        assert!(matches!(
            fit_mp(&[e], &MpConfig::default(), None),
            Err(HrmError::Config(_))
        ));
    }

    #[test]
    fn divergence_names_epoch() {
        let xs: Vec<[f64; 1]> = (0..5).map(|i| [10.0 * i as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let e = env(&xs, &ys);
        let cfg = MpConfig {
            learning_rate: 10.0,
            lambda: 0.0,
            grad_clip: 0.0,
            ..Default::default()
        };
        match fit_mp(&[e.clone(), e.clone()], &cfg, None) {
            Err(HrmError::Training { epoch, .. }) => assert!(epoch > 0),
            other => panic!("expected training error, got {other:?}"),
        }
        // clipping bounds every step, so the same run stays finite
        let clipped = MpConfig {
            grad_clip: 1.0,
            epochs: 200,
            ..cfg
        };
        let fit = fit_mp(&[e.clone(), e], &clipped, None).unwrap();
        assert!(fit.trace.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let fit = MpFit {
            gate: gate(&[0.2, 1.4], 0.5),
            model: LinearModel {
                theta: DVector::from_column_slice(&[1.0, -2.0]),
                intercept: 0.5,
            },
            trace: vec![],
        };
        let ck = Checkpoint::gated("HRM", &fit, &MpConfig::default()).unwrap();
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ck);
        let p = back.predictor().unwrap();
        assert_relative_eq!(p.theta[0], 0.2);
        assert_relative_eq!(p.theta[1], -2.0);
    }
}
