//! Seeded synthetic generators for the two distribution-shift mechanisms
//! (selection bias on a variant block, anti-causal effect from the target),
//! plus the `Dataset` container and its CSV/JSON on-disk layout.
//!
//! Column layout of every generated design matrix is `[Φ*, Ψ*]`: the first
//! `n_phi` columns are the invariant block, the rest are variant. For the
//! selection-bias generator the bias variables `V_b` are the first `n_b`
//! columns of the variant block.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HrmError, Result};

/// Cyclic coefficient pattern used for the invariant block.
const THETA_PHI_PATTERN: [f64; 6] = [0.5, -1.0, 1.0, -0.5, 1.0, -1.0];

/// Rejection sampling gives up after this many candidates per requested sample.
pub const MAX_ATTEMPTS_PER_SAMPLE: usize = 1000;

/// Default number of samples in each test environment.
pub const DEFAULT_TEST_SIZE: usize = 500;

/// Variance of the additive response noise in both generators.
pub const DEFAULT_NOISE_VARIANCE: f64 = 0.3;

/// Test grid of bias strengths for the selection-bias benchmark.
pub const SELECTION_TEST_GRID: [f64; 10] = [-3.0, -2.7, -2.3, -1.9, -1.5, 1.5, 1.9, 2.3, 2.7, 3.0];

pub type Rng64 = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Design matrix, target and optional ground truth used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub env_labels: Option<Vec<usize>>,
    pub invariant_dims: Option<Vec<usize>>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            env_labels: None,
            invariant_dims: None,
            seed: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(HrmError::data("dataset has no rows"));
        }
        if self.y.len() != self.n() {
            return Err(HrmError::data(format!(
                "target length {} does not match {} rows",
                self.y.len(),
                self.n()
            )));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(HrmError::data("dataset contains NaN or infinite entries"));
        }
        if let Some(labels) = &self.env_labels {
            if labels.len() != self.n() {
                return Err(HrmError::data("env_labels length does not match rows"));
            }
        }
        if let Some(dims) = &self.invariant_dims {
            if dims.iter().any(|&j| j >= self.d()) {
                return Err(HrmError::data("invariant_dims index out of range"));
            }
        }
        Ok(())
    }

    /// Number of distinct ground-truth environments, if labels are present.
    pub fn env_count(&self) -> Option<usize> {
        self.env_labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Rows belonging to ground-truth environment `env`.
    pub fn env_subset(&self, env: usize) -> Result<Dataset> {
        let labels = self
            .env_labels
            .as_ref()
            .ok_or_else(|| HrmError::data("dataset has no environment labels"))?;
        let rows: Vec<usize> = (0..self.n()).filter(|&i| labels[i] == env).collect();
        if rows.is_empty() {
            return Err(HrmError::data(format!("environment {env} is empty")));
        }
        Ok(self.select_rows(&rows))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Dataset {
            x,
            y,
            env_labels: self
                .env_labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            invariant_dims: self.invariant_dims.clone(),
            seed: self.seed,
        }
    }

    /// Stacks datasets row-wise. Environment labels survive only if every part has them.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| HrmError::data("cannot concatenate zero datasets"))?;
        let d = first.d();
        if parts.iter().any(|p| p.d() != d) {
            return Err(HrmError::data("datasets disagree on dimension"));
        }
        let n: usize = parts.iter().map(Dataset::n).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut offset = 0;
        for p in parts {
            x.rows_mut(offset, p.n()).copy_from(&p.x);
            y.rows_mut(offset, p.n()).copy_from(&p.y);
            offset += p.n();
        }
        let env_labels = parts
            .iter()
            .map(|p| p.env_labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Ok(Dataset {
            x,
            y,
            env_labels,
            invariant_dims: first.invariant_dims.clone(),
            seed: first.seed,
        })
    }

    /// Writes `x_0..x_{d-1},y[,env]` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        if self.env_labels.is_some() {
            header.push("env".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            if let Some(l) = &self.env_labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout produced by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let y_col = header
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| HrmError::data("CSV has no `y` column"))?;
        let env_col = header.iter().position(|h| h == "env");
        let x_cols: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("x_"))
            .map(|(j, _)| j)
            .collect();
        let d = x_cols.len();
        let mut flat = Vec::new();
        let mut ys = Vec::new();
        let mut envs = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |j: usize| -> Result<f64> {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| HrmError::data(format!("bad number `{}`: {e}", &rec[j])))
            };
            for &j in &x_cols {
                flat.push(field(j)?);
            }
            ys.push(field(y_col)?);
            if let Some(j) = env_col {
                envs.push(
                    rec[j]
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| HrmError::data(format!("bad env label: {e}")))?,
                );
            }
        }
        let n = ys.len();
        let ds = Dataset {
            x: DMatrix::from_row_slice(n, d, &flat),
            y: DVector::from_vec(ys),
            env_labels: env_col.map(|_| envs),
            invariant_dims: None,
            seed: 0,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Invariant-block coefficients: the cyclic pattern `[1/2, -1, 1, -1/2, 1, -1]`.
pub fn theta_phi(n_phi: usize) -> Vec<f64> {
    (0..n_phi).map(|i| THETA_PHI_PATTERN[i % 6]).collect()
}

/// `θ_φᵀφ + β·φ₁φ₂φ₃ + noise`.
pub fn invariant_response(phi: &[f64], theta_phi: &[f64], beta: f64, noise: f64) -> Result<f64> {
    if phi.len() != theta_phi.len() {
        return Err(HrmError::config(format!(
            "phi has {} entries but theta_phi has {}",
            phi.len(),
            theta_phi.len()
        )));
    }
    if phi.len() < 3 {
        return Err(HrmError::config(
            "invariant block needs at least 3 dimensions",
        ));
    }
    let linear: f64 = phi.iter().zip(theta_phi).map(|(a, b)| a * b).sum();
    Ok(linear + beta * phi[0] * phi[1] * phi[2] + noise)
}

/// Acceptance probability `Π_i |r|^(-5·|y_clean - sign(r)·v_i|)`.
pub fn selection_probability(y_clean: f64, v_b: &[f64], r: f64) -> Result<f64> {
    if !(r.abs() > 1.0) {
        return Err(HrmError::config(format!(
            "selection bias needs |r| > 1, got {r}"
        )));
    }
    let s = r.signum();
    let dist: f64 = v_b.iter().map(|v| (y_clean - s * v).abs()).sum();
    Ok((-5.0 * r.abs().ln() * dist).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionBiasConfig {
    pub d: usize,
    pub n_phi: usize,
    pub n_b: usize,
    pub r: f64,
    pub beta: f64,
    pub sum: usize,
    pub kappa: f64,
    pub r_minor: f64,
    pub noise_std: f64,
}

impl Default for SelectionBiasConfig {
    fn default() -> Self {
        SelectionBiasConfig {
            d: 10,
            n_phi: 5,
            n_b: 1,
            r: 1.9,
            beta: 1.0,
            sum: 2000,
            kappa: 0.95,
            r_minor: -1.1,
            noise_std: DEFAULT_NOISE_VARIANCE.sqrt(),
        }
    }
}

impl SelectionBiasConfig {
    pub fn n_psi(&self) -> usize {
        self.d.saturating_sub(self.n_phi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_phi < 3 || self.n_phi >= self.d {
            return Err(HrmError::config(format!(
                "need 3 <= n_phi < d, got n_phi = {}, d = {}",
                self.n_phi, self.d
            )));
        }
        if self.n_b < 1 || self.n_b > self.n_psi() {
            return Err(HrmError::config(format!(
                "need 1 <= n_b <= n_psi = {}, got {}",
                self.n_psi(),
                self.n_b
            )));
        }
        for r in [self.r, self.r_minor] {
            if !(r.abs() > 1.0) {
                return Err(HrmError::config(format!(
                    "bias strength must satisfy |r| > 1, got {r}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(HrmError::config(format!(
                "kappa must lie in [0, 1], got {}",
                self.kappa
            )));
        }
        if !(self.noise_std >= 0.0) || !self.beta.is_finite() {
            return Err(HrmError::config("noise_std must be >= 0 and beta finite"));
        }
        if self.sum == 0 {
            return Err(HrmError::config("sum must be positive"));
        }
        Ok(())
    }

    /// Column indices of the bias variables `V_b`.
    pub fn bias_dims(&self) -> std::ops::Range<usize> {
        self.n_phi..self.n_phi + self.n_b
    }
}

/// One unselected draw: returns the row and the noiseless response f(φ).
fn draw_candidate(
    cfg: &SelectionBiasConfig,
    theta: &[f64],
    rng: &mut Rng64,
    row: &mut [f64],
) -> f64 {
    let z: Vec<f64> = (0..=cfg.n_phi).map(|_| normal(rng)).collect();
    for i in 0..cfg.n_phi {
        row[i] = 0.8 * z[i] + 0.2 * z[i + 1];
    }
    for v in row[cfg.n_phi..].iter_mut() {
        *v = normal(rng);
    }
    // dimensions validated upstream
    invariant_response(&row[..cfg.n_phi], theta, cfg.beta, 0.0).unwrap_or(f64::NAN)
}

fn sample_selected(
    cfg: &SelectionBiasConfig,
    r: f64,
    n: usize,
    rng: &mut Rng64,
    flat: &mut Vec<f64>,
    ys: &mut Vec<f64>,
) -> Result<()> {
    let theta = theta_phi(cfg.n_phi);
    let bias = cfg.bias_dims();
    let max_attempts = MAX_ATTEMPTS_PER_SAMPLE.saturating_mul(n.max(1));
    let mut row = vec![0.0; cfg.d];
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < n {
        if attempts >= max_attempts {
            return Err(HrmError::Generation {
                requested: n,
                accepted,
                attempts,
                r,
            });
        }
        attempts += 1;
        let f = draw_candidate(cfg, &theta, rng, &mut row);
        let p = selection_probability(f, &row[bias.clone()], r)?;
        let u: f64 = rng.random();
        if u <= p {
            let y = f + cfg.noise_std * normal(rng);
            flat.extend_from_slice(&row);
            ys.push(y);
            accepted += 1;
        }
    }
    Ok(())
}

/// Pooled two-source training set: `round(κ·sum)` samples under `r` (label 0)
/// and the rest under `r_minor` (label 1).
pub fn generate_selection_bias(cfg: &SelectionBiasConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let n_major = ((cfg.kappa * cfg.sum as f64).round() as usize).min(cfg.sum);
    let n_minor = cfg.sum - n_major;
    let mut flat = Vec::with_capacity(cfg.sum * cfg.d);
    let mut ys = Vec::with_capacity(cfg.sum);
    sample_selected(cfg, cfg.r, n_major, &mut rng, &mut flat, &mut ys)?;
    sample_selected(cfg, cfg.r_minor, n_minor, &mut rng, &mut flat, &mut ys)?;
    let mut labels = vec![0usize; n_major];
    labels.resize(cfg.sum, 1);
    let ds = Dataset {
        x: DMatrix::from_row_slice(cfg.sum, cfg.d, &flat),
        y: DVector::from_vec(ys),
        env_labels: Some(labels),
        invariant_dims: Some((0..cfg.n_phi).collect()),
        seed,
    };
    ds.validate()?;
    Ok(ds)
}

/// Draws without the selection step, for checking the pre-selection joint law.
pub fn generate_unselected(cfg: &SelectionBiasConfig, n: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let theta = theta_phi(cfg.n_phi);
    let mut flat = Vec::with_capacity(n * cfg.d);
    let mut ys = Vec::with_capacity(n);
    let mut row = vec![0.0; cfg.d];
    for _ in 0..n {
        let f = draw_candidate(cfg, &theta, &mut rng, &mut row);
        flat.extend_from_slice(&row);
        ys.push(f + cfg.noise_std * normal(&mut rng));
    }
    let ds = Dataset {
        x: DMatrix::from_row_slice(n, cfg.d, &flat),
        y: DVector::from_vec(ys),
        env_labels: None,
        invariant_dims: Some((0..cfg.n_phi).collect()),
        seed,
    };
    ds.validate()?;
    Ok(ds)
}

/// One single-source dataset per bias strength in `r_values`, labelled by
/// its position in the grid.
pub fn generate_test_grid(
    cfg: &SelectionBiasConfig,
    r_values: &[f64],
    n_per_env: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    cfg.validate()?;
    r_values
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let env_cfg = SelectionBiasConfig {
                r,
                kappa: 1.0,
                sum: n_per_env,
                ..cfg.clone()
            };
            env_cfg.validate()?;
            let env_seed = derive_seed(seed, k as u64);
            let mut rng = rng_from_seed(env_seed);
            let mut flat = Vec::with_capacity(n_per_env * cfg.d);
            let mut ys = Vec::with_capacity(n_per_env);
            sample_selected(&env_cfg, r, n_per_env, &mut rng, &mut flat, &mut ys)?;
            let ds = Dataset {
                x: DMatrix::from_row_slice(n_per_env, cfg.d, &flat),
                y: DVector::from_vec(ys),
                env_labels: Some(vec![k; n_per_env]),
                invariant_dims: Some((0..cfg.n_phi).collect()),
                seed: env_seed,
            };
            ds.validate()?;
            Ok(ds)
        })
        .collect()
}

/// Mixture-of-Gaussians invariant block with an anti-causal variant block
/// `Ψ* = θ_ψ·Y + N(0, σ(μ_c)²)`, where `c` is the component that produced Φ*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntiCausalConfig {
    pub n_phi: usize,
    pub n_psi: usize,
    /// Component means, each of length `n_phi`.
    pub means: Vec<Vec<f64>>,
    /// Variant-block noise std per component.
    pub sigmas: Vec<f64>,
    pub beta: f64,
    pub noise_std: f64,
    pub theta_phi: Vec<f64>,
    pub theta_psi: Vec<f64>,
}

/// Environment definition: mixture weights over components and a sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEnv {
    pub weights: Vec<f64>,
    pub n: usize,
}

pub const ANTI_CAUSAL_SIGMAS: [f64; 10] = [0.2, 0.5, 1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0];

impl AntiCausalConfig {
    /// Ten components with the benchmark means and noise levels; the two
    /// trailing mean coordinates carry the `(±1, ±1)` pattern and leading
    /// coordinates are zero. Coefficients are drawn once from
    /// `θ_φ ~ N(1, I)`, `θ_ψ ~ N(0.5, 0.1·I)`.
    pub fn benchmark(n_phi: usize, n_psi: usize, seed: u64) -> Result<Self> {
        if n_phi < 3 || n_psi < 1 {
            return Err(HrmError::config(
                "anti-causal benchmark needs n_phi >= 3 and n_psi >= 1",
            ));
        }
        let tail: [[f64; 2]; 4] = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let means = (0..10)
            .map(|c| {
                let mut m = vec![0.0; n_phi];
                let t = tail[c.min(3)];
                m[n_phi - 2] = t[0];
                m[n_phi - 1] = t[1];
                m
            })
            .collect();
        let mut rng = rng_from_seed(seed);
        let theta_phi = (0..n_phi).map(|_| 1.0 + normal(&mut rng)).collect();
        let theta_psi = (0..n_psi)
            .map(|_| 0.5 + 0.1f64.sqrt() * normal(&mut rng))
            .collect();
        let cfg = AntiCausalConfig {
            n_phi,
            n_psi,
            means,
            sigmas: ANTI_CAUSAL_SIGMAS.to_vec(),
            beta: 0.1,
            noise_std: DEFAULT_NOISE_VARIANCE.sqrt(),
            theta_phi,
            theta_psi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_phi < 3 {
            return Err(HrmError::config("anti-causal generator needs n_phi >= 3"));
        }
        if self.k() == 0 || self.sigmas.len() != self.k() {
            return Err(HrmError::config(
                "need one sigma per mixture component and k >= 1",
            ));
        }
        if self.means.iter().any(|m| m.len() != self.n_phi) {
            return Err(HrmError::config("component mean length must equal n_phi"));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(HrmError::config("component sigmas must be positive"));
        }
        if self.theta_phi.len() != self.n_phi || self.theta_psi.len() != self.n_psi {
            return Err(HrmError::config(
                "coefficient vector lengths do not match dimensions",
            ));
        }
        if !(self.noise_std >= 0.0) {
            return Err(HrmError::config("noise_std must be >= 0"));
        }
        Ok(())
    }

    /// One environment per benchmark component: environment `i` draws Φ*
    /// purely from component `i`.
    pub fn one_hot_envs(&self, sizes: &[usize]) -> Vec<MixtureEnv> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut weights = vec![0.0; self.k()];
                weights[i.min(self.k() - 1)] = 1.0;
                MixtureEnv { weights, n }
            })
            .collect()
    }
}

fn check_simplex(w: &[f64], k: usize) -> Result<()> {
    if w.len() != k {
        return Err(HrmError::config(format!(
            "mixture weights have length {} but there are {k} components",
            w.len()
        )));
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(HrmError::config(
            "mixture weights must be nonnegative and sum to 1",
        ));
    }
    Ok(())
}

/// One dataset per environment in `envs`, each labelled with its index.
pub fn generate_anti_causal(
    cfg: &AntiCausalConfig,
    envs: &[MixtureEnv],
    seed: u64,
) -> Result<Vec<Dataset>> {
    cfg.validate()?;
    let d = cfg.n_phi + cfg.n_psi;
    envs.iter()
        .enumerate()
        .map(|(e, env)| {
            check_simplex(&env.weights, cfg.k())?;
            let env_seed = derive_seed(seed, e as u64);
            let mut rng = rng_from_seed(env_seed);
            let picker = WeightedIndex::new(&env.weights)
                .map_err(|err| HrmError::config(format!("invalid mixture weights: {err}")))?;
            let mut flat = Vec::with_capacity(env.n * d);
            let mut ys = Vec::with_capacity(env.n);
            let mut phi = vec![0.0; cfg.n_phi];
            for _ in 0..env.n {
                let c = picker.sample(&mut rng);
                for (p, m) in phi.iter_mut().zip(&cfg.means[c]) {
                    *p = m + normal(&mut rng);
                }
                let y = invariant_response(
                    &phi,
                    &cfg.theta_phi,
                    cfg.beta,
                    cfg.noise_std * normal(&mut rng),
                )?;
                flat.extend_from_slice(&phi);
                for t in &cfg.theta_psi {
                    flat.push(t * y + cfg.sigmas[c] * normal(&mut rng));
                }
                ys.push(y);
            }
            let ds = Dataset {
                x: DMatrix::from_row_slice(env.n, d, &flat),
                y: DVector::from_vec(ys),
                env_labels: Some(vec![e; env.n]),
                invariant_dims: Some((0..cfg.n_phi).collect()),
                seed: env_seed,
            };
            ds.validate()?;
            Ok(ds)
        })
        .collect()
}

/// Generator description stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorSpec {
    SelectionBias {
        config: SelectionBiasConfig,
        theta_phi: Vec<f64>,
    },
    AntiCausal {
        config: AntiCausalConfig,
        envs: Vec<MixtureEnv>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(flatten)]
    pub generator: GeneratorSpec,
    pub seed: u64,
    pub invariant_dims: Vec<usize>,
    pub n: usize,
    pub d: usize,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn invariant_response_examples() {
        let theta = theta_phi(10);
        assert_eq!(
            invariant_response(&[0.0; 10], &theta, 3.0, 0.0).unwrap(),
            0.0
        );
        let mut phi = [0.0; 10];
        phi[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        assert_relative_eq!(invariant_response(&phi, &theta, 1.0, 0.0).unwrap(), 1.5);
        phi[1] = -1.0;
        assert_relative_eq!(invariant_response(&phi, &theta, 1.0, 0.0).unwrap(), 1.5);
        assert!(invariant_response(&phi[..4], &theta, 1.0, 0.0).is_err());
    }

    #[test]
    fn theta_pattern_repeats() {
        assert_eq!(
            theta_phi(8),
            vec![0.5, -1.0, 1.0, -0.5, 1.0, -1.0, 0.5, -1.0]
        );
    }

    #[test]
    fn selection_probability_examples() {
        assert_relative_eq!(selection_probability(1.0, &[1.0], 1.9).unwrap(), 1.0);
        assert_relative_eq!(
            selection_probability(0.0, &[1.0], -1.1).unwrap(),
            1.1f64.powf(-5.0),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            selection_probability(0.0, &[1.0], -1.1).unwrap(),
            0.62092,
            epsilon = 1e-5
        );
        assert_relative_eq!(
            selection_probability(1.0, &[0.5], 2.0).unwrap(),
            0.17678,
            epsilon = 1e-5
        );
        assert!(selection_probability(0.0, &[1.0], 1.0).is_err());
        assert!(selection_probability(0.0, &[1.0], -0.5).is_err());
    }

    #[test]
    fn selection_probability_decreases_with_distance() {
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let v = 0.5 + 0.1 * k as f64;
            let p = selection_probability(0.5, &[v], 1.5).unwrap();
            assert!(p < prev && p > 0.0 && p <= 1.0);
            prev = p;
        }
    }

    #[test]
    fn benchmark_scenario_sizes() {
        let ds = generate_selection_bias(&SelectionBiasConfig::default(), 3).unwrap();
        assert_eq!(ds.n(), 2000);
        let labels = ds.env_labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 1900);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 100);
        assert_eq!(ds.invariant_dims.as_deref(), Some(&[0, 1, 2, 3, 4][..]));
    }

    #[test]
    fn kappa_one_is_single_source() {
        let cfg = SelectionBiasConfig {
            kappa: 1.0,
            sum: 300,
            ..Default::default()
        };
        let ds = generate_selection_bias(&cfg, 1).unwrap();
        assert!(ds.env_labels.unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SelectionBiasConfig {
            sum: 200,
            ..Default::default()
        };
        assert_eq!(
            generate_selection_bias(&cfg, 9).unwrap(),
            generate_selection_bias(&cfg, 9).unwrap()
        );
        assert_ne!(
            generate_selection_bias(&cfg, 9).unwrap(),
            generate_selection_bias(&cfg, 10).unwrap()
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SelectionBiasConfig {
                r: 0.9,
                ..Default::default()
            },
            SelectionBiasConfig {
                kappa: 1.2,
                ..Default::default()
            },
            SelectionBiasConfig {
                n_b: 0,
                ..Default::default()
            },
            SelectionBiasConfig {
                n_b: 6,
                ..Default::default()
            },
            SelectionBiasConfig {
                n_phi: 10,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(
                generate_selection_bias(&cfg, 0),
                Err(HrmError::Config(_))
            ));
        }
    }

    #[test]
    fn empty_test_grid() {
        let grid = generate_test_grid(&SelectionBiasConfig::default(), &[], 10, 0).unwrap();
        assert!(grid.is_empty());
    }

    #[test]
    fn test_grid_has_one_env_per_r() {
        let grid = generate_test_grid(&SelectionBiasConfig::default(), &SELECTION_TEST_GRID, 50, 4)
            .unwrap();
        assert_eq!(grid.len(), 10);
        assert!(grid.iter().all(|g| g.n() == 50 && g.d() == 10));
    }

    #[test]
    fn anti_causal_rejects_off_simplex_weights() {
        let cfg = AntiCausalConfig::benchmark(9, 1, 0).unwrap();
        let env = MixtureEnv {
            weights: vec![0.5; 10],
            n: 10,
        };
        assert!(matches!(
            generate_anti_causal(&cfg, &[env], 0),
            Err(HrmError::Config(_))
        ));
    }

    #[test]
    fn anti_causal_shapes() {
        let cfg = AntiCausalConfig::benchmark(9, 1, 0).unwrap();
        let envs = cfg.one_hot_envs(&[20; 10]);
        let sets = generate_anti_causal(&cfg, &envs, 5).unwrap();
        assert_eq!(sets.len(), 10);
        assert!(sets.iter().all(|s| s.d() == 10 && s.n() == 20));
        assert_eq!(cfg.means[0][7..], [1.0, 1.0]);
        assert_eq!(cfg.means[9][7..], [-1.0, -1.0]);
    }

    #[test]
    fn derive_seed_separates_streams() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|k| derive_seed(42, k)).collect();
        assert_eq!(seeds.len(), 100);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SelectionBiasConfig {
            sum: 30,
            ..Default::default()
        };
        let ds = generate_selection_bias(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.env_labels, ds.env_labels);
    }
}
