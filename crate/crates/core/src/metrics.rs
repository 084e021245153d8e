//! Test-environment error summaries.

use serde::{Deserialize, Serialize};

use crate::error::{HrmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub losses: Vec<f64>,
    pub mean_error: f64,
    /// Unbiased (n - 1) standard deviation across environments.
    pub std_error: f64,
    pub max_error: f64,
}

pub fn compute_metrics(losses: &[f64]) -> Result<MetricsReport> {
    if losses.len() < 2 {
        return Err(HrmError::config(format!(
            "metrics need at least 2 test environments, got {}",
            losses.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(HrmError::data("losses must be finite and nonnegative"));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MetricsReport {
        losses: losses.to_vec(),
        mean_error: mean,
        std_error: var.sqrt(),
        max_error: max,
    })
}

/// Average of the per-run metrics, one field at a time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean_error: f64,
    pub std_error: f64,
    pub max_error: f64,
    pub runs: usize,
}

/// Sums in sorted order so that the result does not depend on run order.
fn order_free_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateMetrics> {
    if reports.is_empty() {
        return Err(HrmError::config("nothing to aggregate"));
    }
    Ok(AggregateMetrics {
        mean_error: order_free_mean(reports.iter().map(|r| r.mean_error)),
        std_error: order_free_mean(reports.iter().map(|r| r.std_error)),
        max_error: order_free_mean(reports.iter().map(|r| r.max_error)),
        runs: reports.len(),
    })
}

/// Per-environment losses averaged over runs; every run must cover the same environments.
pub fn mean_losses(reports: &[MetricsReport]) -> Result<Vec<f64>> {
    let m = reports
        .first()
        .map(|r| r.losses.len())
        .ok_or_else(|| HrmError::config("nothing to aggregate"))?;
    if reports.iter().any(|r| r.losses.len() != m) {
        return Err(HrmError::data(
            "runs disagree on the number of test environments",
        ));
    }
    Ok((0..m)
        .map(|e| order_free_mean(reports.iter().map(|r| r.losses[e])))
        .collect())
}
