//! Heterogeneity identification: EM for a mixture of linear regressions of
//! `y` on the variant features `ψ = s ⊙ x`, where `s` is the Ψ selector
//! (`1 - M` in the joint loop).
//!
//! Each cluster centre is a conditional Gaussian `N(f_Θ(ψ), σ_y²)` with a
//! shared fixed `σ_y`; the fitted mixture minimizes
//! `-(1/N) Σ_i log Σ_j q_j h_j(ψ_i, y_i)` and rows are assigned to
//! environments by their posterior responsibilities.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, rng_from_seed, Dataset, Rng64};
use crate::error::{HrmError, Result};
use crate::gates::LinearModel;
use crate::linalg::{ordinary_least_squares, weighted_least_squares};

/// Densities below this are floored before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCenter {
    pub model: LinearModel,
    pub sigma_y: f64,
}

impl ClusterCenter {
    fn log_density(&self, psi: &[f64], y: f64) -> f64 {
        let f: f64 = self.model.intercept
            + psi
                .iter()
                .zip(self.model.theta.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        let z = (y - f) / self.sigma_y;
        -0.5 * z * z - LN_SQRT_2PI - self.sigma_y.ln()
    }
}

/// `N(y; f_Θ(ψ), σ_y²)`.
pub fn center_likelihood(center: &ClusterCenter, psi: &[f64], y: f64) -> f64 {
    center.log_density(psi, y).exp()
}

/// Soft assignment of rows to K environments.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPartition {
    /// n×K responsibilities; every row lies on the simplex.
    pub w: DMatrix<f64>,
    pub q: DVector<f64>,
    pub hard_labels: Vec<usize>,
}

impl EnvironmentPartition {
    pub fn from_responsibilities(w: DMatrix<f64>) -> Self {
        let n = w.nrows().max(1) as f64;
        let q = w.row_sum().transpose() / n;
        let hard_labels = argmax_rows(&w);
        EnvironmentPartition { w, q, hard_labels }
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Draws one hard label per row from its responsibility row.
    pub fn sample_labels(&self, rng: &mut Rng64) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for j in 0..self.k() {
                    acc += self.w[(i, j)];
                    if u < acc {
                        return j;
                    }
                }
                self.k() - 1
            })
            .collect()
    }

    /// CSV rows `row_index,hard_label,w_1..w_K`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = vec!["row_index".to_string(), "hard_label".to_string()];
        header.extend((1..=self.k()).map(|j| format!("w_{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![i.to_string(), self.hard_labels[i].to_string()];
            rec.extend(self.w.row(i).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Argmax per row, lowest index on ties.
pub fn argmax_rows(w: &DMatrix<f64>) -> Vec<usize> {
    (0..w.nrows())
        .map(|i| {
            let row = w.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// k-means++ seeds in the joint `(ψ, y)` space, nearest-seed hard
    /// responsibilities, then one M-step.
    KmeansPlusPlus,
    /// Random hard responsibilities, then one M-step.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub k: usize,
    pub sigma_y: f64,
    /// Re-estimate each centre's `σ_y` in the M-step instead of keeping it fixed.
    pub learn_sigma: bool,
    /// Lower bound on a learned `σ_y`.
    pub sigma_floor: f64,
    pub em_iters: usize,
    pub init: InitStrategy,
    pub seed: u64,
    /// A cluster whose total responsibility drops below `min_responsibility·N`
    /// is re-seeded.
    pub min_responsibility: f64,
    /// Stop once the objective improves by less than this.
    pub tol: f64,
    /// Extra EM runs started from least-squares fits on random row subsets;
    /// the run with the lowest final objective wins.
    pub subset_restarts: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            k: 2,
            sigma_y: 0.5,
            learn_sigma: false,
            sigma_floor: 0.05,
            em_iters: 100,
            init: InitStrategy::KmeansPlusPlus,
            seed: 0,
            min_responsibility: 1e-3,
            tol: 1e-6,
            subset_restarts: 4,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(HrmError::config("cluster count k must be >= 1"));
        }
        if !(self.sigma_y > 0.0) {
            return Err(HrmError::config("sigma_y must be > 0"));
        }
        if self.learn_sigma && !(self.sigma_floor > 0.0) {
            return Err(HrmError::config(
                "sigma_floor must be > 0 when sigma is learned",
            ));
        }
        if !(self.min_responsibility >= 0.0) || !(self.tol >= 0.0) {
            return Err(HrmError::config("min_responsibility and tol must be >= 0"));
        }
        Ok(())
    }
}

fn check_q(q: &DVector<f64>, k: usize) -> Result<()> {
    if q.len() != k || q.iter().any(|v| !(*v >= 0.0)) || (q.sum() - 1.0).abs() > 1e-9 {
        return Err(HrmError::config("mixture weights must lie on the simplex"));
    }
    Ok(())
}

fn row_log_joint(
    psi: &DMatrix<f64>,
    i: usize,
    y: f64,
    centers: &[ClusterCenter],
    q: &DVector<f64>,
    buf: &mut Vec<f64>,
) {
    let row: Vec<f64> = psi.row(i).iter().copied().collect();
    buf.clear();
    for (c, &qj) in centers.iter().zip(q.iter()) {
        buf.push(if qj > 0.0 {
            qj.ln() + c.log_density(&row, y)
        } else {
            f64::NEG_INFINITY
        });
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-(1/N) Σ_i log max(Σ_j q_j h_j(ψ_i, y_i), floor)`.
pub fn clustering_objective(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    centers: &[ClusterCenter],
    q: &DVector<f64>,
) -> Result<f64> {
    check_q(q, centers.len())?;
    let floor = DENSITY_FLOOR.ln();
    let mut buf = Vec::with_capacity(centers.len());
    let mut total = 0.0;
    for i in 0..psi.nrows() {
        row_log_joint(psi, i, y[i], centers, q, &mut buf);
        total += log_sum_exp(&buf).max(floor);
    }
    Ok(-total / psi.nrows() as f64)
}

/// Posterior responsibilities `q_j h_j / Σ_i q_i h_i`. Rows whose every
/// density underflows the floor receive a uniform row.
pub fn e_step(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    centers: &[ClusterCenter],
    q: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_q(q, centers.len())?;
    let k = centers.len();
    let floor = DENSITY_FLOOR.ln();
    let mut w = DMatrix::zeros(psi.nrows(), k);
    let mut buf = Vec::with_capacity(k);
    let mut underflows = 0usize;
    for i in 0..psi.nrows() {
        row_log_joint(psi, i, y[i], centers, q, &mut buf);
        let lse = log_sum_exp(&buf);
        if !(lse >= floor) {
            underflows += 1;
            for j in 0..k {
                w[(i, j)] = 1.0 / k as f64;
            }
            continue;
        }
        for j in 0..k {
            w[(i, j)] = (buf[j] - lse).exp();
        }
    }
    if underflows > 0 {
        warn!("e_step: all densities underflowed for {underflows} rows; assigned uniform responsibilities");
    }
    Ok(w)
}

fn fit_center(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    cfg: &McConfig,
) -> Result<ClusterCenter> {
    let (theta, intercept) = weighted_least_squares(psi, y, w)?;
    let model = LinearModel { theta, intercept };
    let sigma_y = if cfg.learn_sigma {
        let resid = y - model.predict(psi);
        let mass = w.sum();
        let var = resid
            .iter()
            .zip(w.iter())
            .map(|(r, wi)| wi * r * r)
            .sum::<f64>()
            / mass;
        var.sqrt().max(cfg.sigma_floor)
    } else {
        cfg.sigma_y
    };
    Ok(ClusterCenter { model, sigma_y })
}

/// Closed-form M-step: `q_j = mean_i W_ij`, each centre refit by
/// responsibility-weighted least squares. Clusters whose mass falls below
/// `min_responsibility·N` are re-seeded from the worst-fit rows. Returns
/// the new centres, weights and whether a rescue happened.
pub fn m_step(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    cfg: &McConfig,
) -> Result<(Vec<ClusterCenter>, DVector<f64>, bool)> {
    let (n, k) = w.shape();
    if n != psi.nrows() || n != y.len() {
        return Err(HrmError::data("m_step: responsibilities do not match data"));
    }
    let mass = w.row_sum().transpose();
    let min_mass = cfg.min_responsibility * n as f64;
    let mut centers = Vec::with_capacity(k);
    let mut starving = Vec::new();
    for j in 0..k {
        if mass[j] < min_mass.max(f64::MIN_POSITIVE) {
            starving.push(j);
            centers.push(None);
            continue;
        }
        centers.push(Some(fit_center(psi, y, &w.column(j).into_owned(), cfg)?));
    }
    let mut q = mass / n as f64;
    let rescued = !starving.is_empty();
    if rescued {
        let healthy: Vec<ClusterCenter> = centers.iter().flatten().cloned().collect();
        let fallback = if healthy.is_empty() {
            vec![fit_center(psi, y, &DVector::from_element(n, 1.0), cfg)?]
        } else {
            healthy
        };
        // squared residual of each row under its best healthy centre
        let mut misfit: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let row: Vec<f64> = psi.row(i).iter().copied().collect();
                let best = fallback
                    .iter()
                    .map(|c| {
                        let f = c.model.intercept
                            + row
                                .iter()
                                .zip(c.model.theta.iter())
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        (y[i] - f).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min);
                (best, i)
            })
            .collect();
        misfit.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let take = (n / (2 * k)).max(psi.ncols() + 2).min(n);
        for (slot, &j) in starving.iter().enumerate() {
            let mut wj = DVector::zeros(n);
            for &(_, i) in misfit.iter().skip(slot * take).take(take) {
                wj[i] = 1.0;
            }
            if wj.sum() == 0.0 {
                wj.fill(1.0);
            }
            centers[j] = Some(fit_center(psi, y, &wj, cfg)?);
            q[j] = wj.sum() / n as f64;
        }
        let total = q.sum();
        q /= total;
    }
    Ok((centers.into_iter().flatten().collect(), q, rescued))
}

fn kmeans_pp_responsibilities(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    k: usize,
    rng: &mut Rng64,
) -> DMatrix<f64> {
    let n = psi.nrows();
    let point = |i: usize| -> Vec<f64> {
        let mut p: Vec<f64> = psi.row(i).iter().copied().collect();
        p.push(y[i]);
        p
    };
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mut seeds = vec![point(rng.random_range(0..n))];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(&point(i), &seeds[0])).collect();
    while seeds.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let s = point(idx);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(&point(i), &s));
        }
        seeds.push(s);
    }
    let mut w = DMatrix::zeros(n, k);
    for i in 0..n {
        let p = point(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, s) in seeds.iter().enumerate() {
            let d = dist2(&p, s);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        w[(i, best)] = 1.0;
    }
    w
}

fn random_responsibilities(n: usize, k: usize, rng: &mut Rng64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, k);
    for i in 0..n {
        w[(i, rng.random_range(0..k))] = 1.0;
    }
    w
}

/// Outcome of [`fit_mc`].
#[derive(Debug, Clone, PartialEq)]
pub struct McFit {
    pub partition: EnvironmentPartition,
    pub centers: Vec<ClusterCenter>,
    /// Objective after initialization and after every EM iteration.
    pub trace: Vec<f64>,
    pub rescues: usize,
}

/// Applies the Ψ selector column-wise: `ψ = s ⊙ x`.
pub fn select_psi(x: &DMatrix<f64>, selector: &DVector<f64>) -> DMatrix<f64> {
    let mut psi = x.clone();
    for (j, s) in selector.iter().enumerate() {
        psi.column_mut(j).scale_mut(*s);
    }
    psi
}

/// Runs EM on `ψ = psi_selector ⊙ x`.
pub fn fit_mc(data: &Dataset, psi_selector: &DVector<f64>, cfg: &McConfig) -> Result<McFit> {
    if psi_selector.len() != data.d() {
        return Err(HrmError::config(
            "psi_selector length does not match data dimension",
        ));
    }
    if !psi_selector.iter().any(|s| *s > 0.0) {
        return Err(HrmError::config(
            "psi_selector is all zero; fall back to Ψ = X (an all-ones selector)",
        ));
    }
    let psi = select_psi(&data.x, psi_selector);
    fit_mc_on(&psi, &data.y, cfg, None)
}

/// EM on an explicit variant design. `init` overrides the seeding with given
/// centres and weights and disables restarts.
pub fn fit_mc_on(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &McConfig,
    init: Option<(Vec<ClusterCenter>, DVector<f64>)>,
) -> Result<McFit> {
    cfg.validate()?;
    if init.is_some() {
        return em_run(psi, y, cfg, init);
    }
    let mut best = em_run(psi, y, cfg, None)?;
    for r in 0..cfg.subset_restarts {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, r as u64 + 1));
        let start = subset_centers(psi, y, cfg, &mut rng)?;
        let fit = em_run(psi, y, cfg, Some(start))?;
        if fit.trace.last() < best.trace.last() {
            best = fit;
        }
    }
    Ok(best)
}

/// One centre per cluster fitted to `d + 1` distinct random rows, uniform weights.
fn subset_centers(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &McConfig,
    rng: &mut Rng64,
) -> Result<(Vec<ClusterCenter>, DVector<f64>)> {
    let (n, d) = psi.shape();
    let m = (d + 1).min(n);
    let mut centers = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let rows = rand::seq::index::sample(rng, n, m).into_vec();
        let (theta, b) = ordinary_least_squares(
            &psi.select_rows(rows.iter()),
            &DVector::from_iterator(m, rows.iter().map(|&i| y[i])),
        )?;
        centers.push(ClusterCenter {
            model: LinearModel {
                theta,
                intercept: b,
            },
            sigma_y: cfg.sigma_y,
        });
    }
    Ok((centers, DVector::from_element(cfg.k, 1.0 / cfg.k as f64)))
}

fn em_run(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    cfg: &McConfig,
    init: Option<(Vec<ClusterCenter>, DVector<f64>)>,
) -> Result<McFit> {
    let n = psi.nrows();
    if n == 0 || y.len() != n {
        return Err(HrmError::data(
            "clustering needs a non-empty design with matching targets",
        ));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut rescues = 0;
    let (mut centers, mut q) = match init {
        Some((c, q)) => {
            if c.len() != cfg.k {
                return Err(HrmError::config("initial centres do not match k"));
            }
            check_q(&q, cfg.k)?;
            (c, q)
        }
        None => {
            let w0 = match cfg.init {
                InitStrategy::KmeansPlusPlus => kmeans_pp_responsibilities(psi, y, cfg.k, &mut rng),
                InitStrategy::Random => random_responsibilities(n, cfg.k, &mut rng),
            };
            let (c, q, rescued) = m_step(psi, y, &w0, cfg)?;
            rescues += rescued as usize;
            (c, q)
        }
    };
    let mut objective = clustering_objective(psi, y, &centers, &q)?;
    let mut trace = vec![objective];
    let mut w = e_step(psi, y, &centers, &q)?;
    for _ in 0..cfg.em_iters {
        let (mut next_c, mut next_q, rescued) = m_step(psi, y, &w, cfg)?;
        let mut next_obj = clustering_objective(psi, y, &next_c, &next_q)?;
        if rescued {
            // keep the trace monotone: take the rescue only when it does not hurt
            let plain = McConfig {
                min_responsibility: 0.0,
                ..cfg.clone()
            };
            let (pc, pq, _) = m_step(psi, y, &w, &plain)?;
            let plain_obj = clustering_objective(psi, y, &pc, &pq)?;
            if plain_obj < next_obj {
                next_c = pc;
                next_q = pq;
                next_obj = plain_obj;
            } else {
                rescues += 1;
            }
        }
        let improvement = objective - next_obj;
        centers = next_c;
        q = next_q;
        objective = next_obj;
        trace.push(objective);
        w = e_step(psi, y, &centers, &q)?;
        if improvement.abs() < cfg.tol {
            break;
        }
    }
    Ok(McFit {
        partition: EnvironmentPartition::from_responsibilities(w),
        centers,
        trace,
        rescues,
    })
}

/// BIC of fitted mixtures for each candidate K (advisory only; the joint
/// loop always uses the configured K).
pub fn bic_sweep(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    ks: &[usize],
    cfg: &McConfig,
) -> Result<Vec<(usize, f64)>> {
    let n = psi.nrows() as f64;
    ks.iter()
        .map(|&k| {
            let fit = fit_mc_on(psi, y, &McConfig { k, ..cfg.clone() }, None)?;
            let nll = fit.trace.last().copied().unwrap_or(f64::NAN) * n;
            let params = (k * (psi.ncols() + 1) + k - 1) as f64;
            Ok((k, 2.0 * nll + params * n.ln()))
        })
        .collect()
}
