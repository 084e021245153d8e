//! Training environments as weighted views of a pooled dataset.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{HrmError, Result};

/// One training environment. Hard environments carry unit weights; soft
/// environments built from a clustering carry the responsibilities of every
/// pooled row.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub weights: DVector<f64>,
}

impl Environment {
    pub fn unweighted(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        Environment::weighted(x, y, DVector::from_element(n, 1.0))
    }

    pub fn weighted(x: DMatrix<f64>, y: DVector<f64>, weights: DVector<f64>) -> Result<Self> {
        if y.len() != x.nrows() || weights.len() != x.nrows() {
            return Err(HrmError::data("environment: row counts disagree"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(HrmError::data("environment: weights must be nonnegative"));
        }
        let env = Environment { x, y, weights };
        if env.total_weight() <= 0.0 {
            return Err(HrmError::data("environment is empty"));
        }
        Ok(env)
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Environment::unweighted(ds.x.clone(), ds.y.clone())
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.sum()
    }

    /// Weights rescaled to sum to one.
    pub fn normalized_weights(&self) -> DVector<f64> {
        &self.weights / self.total_weight()
    }
}

/// Splits a dataset along its ground-truth labels.
pub fn envs_from_labels(ds: &Dataset) -> Result<Vec<Environment>> {
    let k = ds
        .env_count()
        .ok_or_else(|| HrmError::data("dataset has no environment labels"))?;
    (0..k)
        .map(|e| {
            ds.env_subset(e)
                .and_then(|sub| Environment::from_dataset(&sub))
        })
        .collect()
}

/// Splits a dataset along arbitrary hard labels (empty labels are skipped).
pub fn envs_from_hard_labels(ds: &Dataset, labels: &[usize]) -> Result<Vec<Environment>> {
    if labels.len() != ds.n() {
        return Err(HrmError::data("label count does not match rows"));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(k);
    for e in 0..k {
        let rows: Vec<usize> = (0..ds.n()).filter(|&i| labels[i] == e).collect();
        if rows.is_empty() {
            continue;
        }
        let sub = ds.select_rows(&rows);
        out.push(Environment::unweighted(sub.x, sub.y)?);
    }
    Ok(out)
}

/// One soft environment per column of the responsibility matrix `w` (n×K).
/// Columns with (numerically) zero mass are dropped.
pub fn envs_from_soft(ds: &Dataset, w: &DMatrix<f64>) -> Result<Vec<Environment>> {
    if w.nrows() != ds.n() {
        return Err(HrmError::data(
            "responsibility rows do not match dataset rows",
        ));
    }
    let mut out = Vec::with_capacity(w.ncols());
    for j in 0..w.ncols() {
        let col = w.column(j).into_owned();
        if col.sum() <= 1e-12 {
            continue;
        }
        out.push(Environment::weighted(ds.x.clone(), ds.y.clone(), col)?);
    }
    Ok(out)
}
