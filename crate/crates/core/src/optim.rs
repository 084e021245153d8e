//! First-order update rules shared by every gradient-trained model.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{HrmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(HrmError::config(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0",
                ));
            }
        }
        Ok(())
    }
}

/// Turns raw gradients of a flat parameter vector into steps to subtract.
#[derive(Debug, Clone)]
pub struct Stepper {
    rule: Optimizer,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Stepper {
    pub fn new(rule: Optimizer, n_params: usize) -> Self {
        Stepper {
            rule,
            m: DVector::zeros(n_params),
            v: DVector::zeros(n_params),
            t: 0,
        }
    }

    pub fn step(&mut self, g: &DVector<f64>, lr: f64) -> DVector<f64> {
        match self.rule {
            Optimizer::Gd => g * lr,
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                self.m = &self.m * beta1 + g * (1.0 - beta1);
                self.v = &self.v * beta2 + g.component_mul(g) * (1.0 - beta2);
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                self.m
                    .zip_map(&self.v, |m, v| lr * (m / c1) / ((v / c2).sqrt() + eps))
            }
        }
    }
}

/// Rescales `g` to norm at most `max_norm`; `max_norm == 0` leaves it alone.
pub fn clip_norm(g: DVector<f64>, max_norm: f64) -> DVector<f64> {
    let norm = g.norm();
    if max_norm > 0.0 && norm > max_norm {
        g * (max_norm / norm)
    } else {
        g
    }
}
