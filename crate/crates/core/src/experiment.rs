//! Repeated-seed benchmark runs over the synthetic scenarios, with CSV,
//! Markdown and manifest outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_dro, fit_erm, fit_irm, BaselineConfig, BaselineMethod};
use crate::data::{
    derive_seed, generate_anti_causal, generate_selection_bias, generate_test_grid,
    AntiCausalConfig, Dataset, SelectionBiasConfig, DEFAULT_TEST_SIZE, SELECTION_TEST_GRID,
};
use crate::envs::envs_from_labels;
use crate::error::{HrmError, Result};
use crate::gates::{Checkpoint, LinearModel};
use crate::hrm::{run_hrm, HrmConfig, HrmState};
use crate::metrics::{aggregate, compute_metrics, mean_losses, AggregateMetrics, MetricsReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Caps the worker pool.
pub const THREADS_ENV: &str = "HRM_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ERM")]
    Erm,
    #[serde(rename = "DRO")]
    Dro,
    #[serde(rename = "IRM")]
    Irm,
    #[serde(rename = "HRM^s")]
    HrmSingle,
    #[serde(rename = "HRM")]
    Hrm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Erm,
        Method::Dro,
        Method::Irm,
        Method::HrmSingle,
        Method::Hrm,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Erm => "ERM",
            Method::Dro => "DRO",
            Method::Irm => "IRM",
            Method::HrmSingle => "HRM^s",
            Method::Hrm => "HRM",
        }
    }

    /// Filesystem-safe name.
    pub fn slug(&self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Dro => "dro",
            Method::Irm => "irm",
            Method::HrmSingle => "hrm_s",
            Method::Hrm => "hrm",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.label().eq_ignore_ascii_case(s) || m.slug().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                HrmError::config(format!(
                    "unknown method '{s}' (expected one of erm, dro, irm, hrm_s, hrm)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// One table column per training bias strength.
    SelectionBias {
        #[serde(default)]
        config: SelectionBiasConfig,
        train_r: Vec<f64>,
        #[serde(default = "default_test_grid")]
        test_r: Vec<f64>,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
    /// Environments built from one mixture component each; the first
    /// `train_sizes.len()` are pooled for training and every environment is
    /// scored on fresh samples.
    AntiCausal {
        n_phi: usize,
        n_psi: usize,
        train_sizes: Vec<usize>,
        n_envs: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
}

fn default_test_grid() -> Vec<f64> {
    SELECTION_TEST_GRID.to_vec()
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub name: String,
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub n_runs: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub hrm: HrmConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Selection-bias table: training columns r ∈ {1.5, 1.9, 2.3}.
    pub fn sim_selection(n_runs: usize, master_seed: u64) -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            name: "sim-selection-s1".into(),
            scenario: Scenario::SelectionBias {
                config: SelectionBiasConfig::default(),
                train_r: vec![1.5, 1.9, 2.3],
                test_r: default_test_grid(),
                test_size: DEFAULT_TEST_SIZE,
            },
            methods: Method::ALL.to_vec(),
            n_runs,
            master_seed,
            baseline: BaselineConfig::default(),
            hrm: HrmConfig::default(),
            out_dir: None,
        }
    }

    /// Anti-causal table: 9 invariant and 1 variant dimension, 3 training
    /// environments and 7 held-out ones. Clustering uses one cluster per
    /// training source.
    pub fn anti_causal(n_runs: usize, master_seed: u64) -> Self {
        let mut hrm = HrmConfig::default();
        hrm.mc.k = 3;
        // the target here has roughly fifteen times the selection-bias variance;
        // fixed-width centres cannot split the sources and λ=10 leaves Ψ open
        hrm.mc.learn_sigma = true;
        hrm.mp.lambda = 100.0;
        // the inner sup over perturbations is bounded only while γ > ‖θ‖², and
        // ‖θ‖² is near 25 at this coefficient scale
        let baseline = BaselineConfig {
            dro_gamma: 50.0,
            dro_inner_lr: 0.01,
            ..BaselineConfig::default()
        };
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            name: "anti-causal-s1".into(),
            scenario: Scenario::AntiCausal {
                n_phi: 9,
                n_psi: 1,
                train_sizes: vec![1000, 600, 400],
                n_envs: 10,
                test_size: DEFAULT_TEST_SIZE,
            },
            methods: Method::ALL.to_vec(),
            n_runs,
            master_seed,
            baseline,
            hrm,
            out_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentSpec::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HrmError::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n_runs == 0 {
            return Err(HrmError::config("n_runs must be >= 1"));
        }
        if self.methods.is_empty() {
            return Err(HrmError::config("at least one method is required"));
        }
        match &self.scenario {
            Scenario::SelectionBias {
                config,
                train_r,
                test_r,
                test_size,
            } => {
                config.validate()?;
                if train_r.is_empty() {
                    return Err(HrmError::config("train_r must not be empty"));
                }
                if test_r.len() < 2 {
                    return Err(HrmError::config("need at least 2 test environments"));
                }
                if let Some(r) = train_r.iter().chain(test_r).find(|r| !(r.abs() > 1.0)) {
                    return Err(HrmError::config(format!(
                        "bias strength {r} must satisfy |r| > 1"
                    )));
                }
                if *test_size == 0 {
                    return Err(HrmError::config("test_size must be >= 1"));
                }
            }
            Scenario::AntiCausal {
                n_phi,
                n_psi,
                train_sizes,
                n_envs,
                test_size,
            } => {
                if *n_phi < 3 || *n_psi < 1 {
                    return Err(HrmError::config(
                        "anti-causal scenario needs n_phi >= 3 and n_psi >= 1",
                    ));
                }
                if train_sizes.is_empty() || train_sizes.iter().any(|n| *n == 0) {
                    return Err(HrmError::config(
                        "train_sizes must be nonempty and positive",
                    ));
                }
                if *n_envs > 10 || n_envs.saturating_sub(train_sizes.len()) < 2 {
                    return Err(HrmError::config(
                        "n_envs must be at most 10 and leave at least 2 held-out environments",
                    ));
                }
                if *test_size == 0 {
                    return Err(HrmError::config("test_size must be >= 1"));
                }
            }
        }
        self.baseline.validate()?;
        self.hrm.validate()
    }

    fn columns(&self) -> Vec<String> {
        match &self.scenario {
            Scenario::SelectionBias { train_r, .. } => {
                train_r.iter().map(|r| format!("r={r}")).collect()
            }
            Scenario::AntiCausal { .. } => vec!["all".into()],
        }
    }
}

/// Training set and scored environments for one (column, run).
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub tests: Vec<Dataset>,
    /// Index of the first environment that counts towards the metrics.
    pub first_scored: usize,
}

/// Coefficients drawn once per experiment.
pub fn anti_causal_coefficients(spec: &ExperimentSpec) -> Result<Option<AntiCausalConfig>> {
    match &spec.scenario {
        Scenario::AntiCausal { n_phi, n_psi, .. } => Ok(Some(AntiCausalConfig::benchmark(
            *n_phi,
            *n_psi,
            derive_seed(spec.master_seed, u64::MAX),
        )?)),
        Scenario::SelectionBias { .. } => Ok(None),
    }
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

pub fn generate_run_data(
    spec: &ExperimentSpec,
    coefficients: Option<&AntiCausalConfig>,
    column: usize,
    run: usize,
) -> Result<RunData> {
    let seed = derive_seed(run_seed(spec.master_seed, run), column as u64);
    match &spec.scenario {
        Scenario::SelectionBias {
            config,
            train_r,
            test_r,
            test_size,
        } => {
            let cfg = SelectionBiasConfig {
                r: train_r[column],
                ..config.clone()
            };
            Ok(RunData {
                train: generate_selection_bias(&cfg, derive_seed(seed, 0))?,
                tests: generate_test_grid(&cfg, test_r, *test_size, derive_seed(seed, 1))?,
                first_scored: 0,
            })
        }
        Scenario::AntiCausal {
            train_sizes,
            n_envs,
            test_size,
            ..
        } => {
            let cfg =
                coefficients.ok_or_else(|| HrmError::config("anti-causal coefficients missing"))?;
            let train_envs =
                generate_anti_causal(cfg, &cfg.one_hot_envs(train_sizes), derive_seed(seed, 0))?;
            let train = Dataset::concat(&train_envs)?;
            let tests = generate_anti_causal(
                cfg,
                &cfg.one_hot_envs(&vec![*test_size; *n_envs]),
                derive_seed(seed, 1),
            )?;
            Ok(RunData {
                train,
                tests,
                first_scored: train_sizes.len(),
            })
        }
    }
}

/// Outcome of one method on one (column, run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub column: usize,
    pub run: usize,
    pub method: Method,
    pub seed: u64,
    pub outcome: std::result::Result<CellFit, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    /// Loss on every environment in `RunData::tests`.
    pub env_losses: Vec<f64>,
    /// Metrics over the scored environments.
    pub metrics: MetricsReport,
    pub checkpoint: Checkpoint,
    /// Agreement with the true environment labels after each HRM round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Vec<Option<f64>>>,
    #[serde(skip)]
    pub hrm_state: Option<HrmState>,
}

fn hrm_for_seed(cfg: &HrmConfig, seed: u64, rounds: Option<usize>) -> HrmConfig {
    let mut h = cfg.clone();
    h.mc.seed = derive_seed(seed, 1);
    h.mp.seed = derive_seed(seed, 2);
    if let Some(r) = rounds {
        h.rounds = r;
    }
    h
}

/// Trains `method` on `data.train` and scores it.
pub fn fit_method(
    spec: &ExperimentSpec,
    method: Method,
    data: &RunData,
    seed: u64,
) -> Result<CellFit> {
    let baseline = |m: BaselineMethod| BaselineConfig {
        method: m,
        seed,
        ..spec.baseline.clone()
    };
    let (model, checkpoint, state): (LinearModel, Checkpoint, Option<HrmState>) = match method {
        Method::Erm | Method::Dro | Method::Irm => {
            let (cfg, fit) = match method {
                Method::Erm => {
                    let cfg = baseline(BaselineMethod::Erm);
                    let fit = fit_erm(&data.train, &cfg)?;
                    (cfg, fit)
                }
                Method::Dro => {
                    let cfg = baseline(BaselineMethod::Dro);
                    let fit = fit_dro(&data.train, &cfg)?;
                    (cfg, fit)
                }
                _ => {
                    let cfg = baseline(BaselineMethod::Irm);
                    let fit = fit_irm(&envs_from_labels(&data.train)?, &cfg)?;
                    (cfg, fit)
                }
            };
            let ck = Checkpoint::plain(
                method.label(),
                &fit.model,
                serde_json::to_value(&cfg)?,
                seed,
            );
            (fit.model, ck, None)
        }
        Method::Hrm | Method::HrmSingle => {
            let rounds = (method == Method::HrmSingle).then_some(1);
            let cfg = hrm_for_seed(&spec.hrm, seed, rounds);
            let state = run_hrm(&data.train, &cfg)?;
            let ck = Checkpoint {
                method: method.label().to_string(),
                mu: Some(state.gate.mu.iter().copied().collect()),
                sigma_gate: Some(state.gate.sigma_gate),
                theta: state.model.theta.iter().copied().collect(),
                intercept: state.model.intercept,
                config: serde_json::to_value(&cfg)?,
                seed,
            };
            (state.predictor(), ck, Some(state))
        }
    };
    let env_losses: Vec<f64> = data.tests.iter().map(|t| model.mse(&t.x, &t.y)).collect();
    let metrics = compute_metrics(&env_losses[data.first_scored..])?;
    Ok(CellFit {
        env_losses,
        metrics,
        checkpoint,
        agreement: state
            .as_ref()
            .map(|s| s.history.iter().map(|h| h.agreement).collect()),
        hrm_state: state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub method: Method,
    pub column: usize,
    pub aggregate: Option<AggregateMetrics>,
    /// Per-environment losses averaged over the successful runs.
    pub env_losses: Option<Vec<f64>>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub columns: Vec<String>,
    pub cells: Vec<CellResult>,
    pub table: Vec<TableCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anti_causal: Option<AntiCausalConfig>,
}

impl ExperimentResult {
    pub fn cell(&self, method: Method, column: usize) -> Option<&TableCell> {
        self.table
            .iter()
            .find(|c| c.method == method && c.column == column)
    }

    pub fn runs(&self, method: Method, column: usize) -> impl Iterator<Item = &CellResult> {
        self.cells
            .iter()
            .filter(move |c| c.method == method && c.column == column)
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| {
            HrmError::config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| HrmError::config(format!("cannot build worker pool: {e}")))
}

/// Runs every (column, run, method) cell. Method failures are recorded in
/// their cell; data-generation failures abort.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let coefficients = anti_causal_coefficients(spec)?;
    let columns = spec.columns();
    let pool = pool()?;
    let data_keys: Vec<(usize, usize)> = (0..columns.len())
        .flat_map(|c| (0..spec.n_runs).map(move |r| (c, r)))
        .collect();
    let data: Vec<RunData> = pool.install(|| {
        data_keys
            .par_iter()
            .map(|&(c, r)| generate_run_data(spec, coefficients.as_ref(), c, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let tasks: Vec<(usize, Method)> = (0..data_keys.len())
        .flat_map(|i| spec.methods.iter().map(move |m| (i, *m)))
        .collect();
    let cells: Vec<CellResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, method)| {
                let (column, run) = data_keys[i];
                let seed = run_seed(spec.master_seed, run);
                let outcome = fit_method(spec, method, &data[i], seed).map_err(|e| {
                    warn!("{} column {column} run {run}: {e}", method.label());
                    e.to_string()
                });
                CellResult {
                    column,
                    run,
                    method,
                    seed,
                    outcome,
                }
            })
            .collect()
    });
    let mut table = Vec::new();
    for method in &spec.methods {
        for column in 0..columns.len() {
            let mut reports = Vec::new();
            let mut failures = Vec::new();
            for c in cells
                .iter()
                .filter(|c| c.method == *method && c.column == column)
            {
                match &c.outcome {
                    Ok(fit) => reports.push(MetricsReport {
                        losses: fit.env_losses.clone(),
                        ..fit.metrics.clone()
                    }),
                    Err(e) => failures.push(format!("run {}: {e}", c.run)),
                }
            }
            table.push(TableCell {
                method: *method,
                column,
                aggregate: aggregate(&reports).ok(),
                env_losses: mean_losses(&reports).ok(),
                failures,
            });
        }
    }
    info!("{}: {} cells finished", spec.name, cells.len());
    Ok(ExperimentResult {
        spec: spec.clone(),
        columns,
        cells,
        table,
        anti_causal: coefficients,
    })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Long-format table: one row per (method, column).
pub fn results_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("method,column,mean_error,std_error,max_error,runs,failures");
    let n_envs = result
        .table
        .iter()
        .filter_map(|c| c.env_losses.as_ref())
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    for e in 0..n_envs {
        let _ = write!(out, ",e{}", e + 1);
    }
    out.push('\n');
    for cell in &result.table {
        let a = cell.aggregate;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            cell.method.label(),
            result.columns[cell.column],
            fmt_metric(a.map(|a| a.mean_error)),
            fmt_metric(a.map(|a| a.std_error)),
            fmt_metric(a.map(|a| a.max_error)),
            a.map_or(0, |a| a.runs),
            cell.failures.len()
        );
        for e in 0..n_envs {
            let _ = write!(
                out,
                ",{}",
                fmt_metric(cell.env_losses.as_ref().and_then(|l| l.get(e).copied()))
            );
        }
        out.push('\n');
    }
    out
}

/// Wide table in the layout of the benchmark: Mean/Std/Max per column for
/// selection bias, per-environment errors for the anti-causal scenario.
pub fn results_markdown(result: &ExperimentResult) -> String {
    let mut out = format!("# {}\n\n", result.spec.name);
    let f3 = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"));
    match &result.spec.scenario {
        Scenario::SelectionBias { .. } => {
            out.push_str("| Method |");
            for c in &result.columns {
                let _ = write!(out, " {c} Mean | {c} Std | {c} Max |");
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(3 * result.columns.len()));
            out.push('\n');
            for m in &result.spec.methods {
                let _ = write!(out, "| {} |", m.label());
                for c in 0..result.columns.len() {
                    let a = result.cell(*m, c).and_then(|t| t.aggregate);
                    let _ = write!(
                        out,
                        " {} | {} | {} |",
                        f3(a.map(|a| a.mean_error)),
                        f3(a.map(|a| a.std_error)),
                        f3(a.map(|a| a.max_error))
                    );
                }
                out.push('\n');
            }
        }
        Scenario::AntiCausal {
            n_envs,
            train_sizes,
            ..
        } => {
            out.push_str("| Method |");
            for e in 0..*n_envs {
                let tag = if e < train_sizes.len() {
                    " (train)"
                } else {
                    ""
                };
                let _ = write!(out, " e{}{tag} |", e + 1);
            }
            out.push_str(" Mean | Std | Max |\n|---|");
            out.push_str(&"---|".repeat(n_envs + 3));
            out.push('\n');
            for m in &result.spec.methods {
                let cell = result.cell(*m, 0);
                let _ = write!(out, "| {} |", m.label());
                for e in 0..*n_envs {
                    let v = cell
                        .and_then(|c| c.env_losses.as_ref())
                        .and_then(|l| l.get(e).copied());
                    let _ = write!(out, " {} |", f3(v));
                }
                let a = cell.and_then(|t| t.aggregate);
                let _ = writeln!(
                    out,
                    " {} | {} | {} |",
                    f3(a.map(|a| a.mean_error)),
                    f3(a.map(|a| a.std_error)),
                    f3(a.map(|a| a.max_error))
                );
            }
        }
    }
    let failed: Vec<String> = result
        .table
        .iter()
        .flat_map(|c| {
            c.failures
                .iter()
                .map(move |f| format!("- {} {}: {f}", c.method.label(), result.columns[c.column]))
        })
        .collect();
    if !failed.is_empty() {
        out.push_str("\nFailures:\n\n");
        out.push_str(&failed.join("\n"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct ManifestRun<'a> {
    column: &'a str,
    run: usize,
    method: &'static str,
    seed: u64,
    data_seed: u64,
    dir: String,
    error: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    spec: &'a ExperimentSpec,
    columns: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    anti_causal: Option<&'a AntiCausalConfig>,
    runs: Vec<ManifestRun<'a>>,
    crate_version: &'static str,
}

fn run_dir(result: &ExperimentResult, c: &CellResult) -> String {
    format!(
        "runs/{}/run_{:02}/{}",
        result.columns[c.column],
        c.run,
        c.method.slug()
    )
}

/// Writes `results.csv`, `results.md`, `manifest.json` and one directory per
/// (column, run, method).
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), results_csv(result))?;
    std::fs::write(dir.join("results.md"), results_markdown(result))?;
    let mut runs = Vec::with_capacity(result.cells.len());
    for c in &result.cells {
        let rel = run_dir(result, c);
        let path = dir.join(&rel);
        std::fs::create_dir_all(&path)?;
        match &c.outcome {
            Ok(fit) => {
                std::fs::write(
                    path.join("checkpoint.json"),
                    serde_json::to_string_pretty(&fit.checkpoint)? + "\n",
                )?;
                std::fs::write(
                    path.join("metrics.json"),
                    serde_json::to_string_pretty(&fit.metrics)? + "\n",
                )?;
                if let Some(state) = &fit.hrm_state {
                    let cfg: HrmConfig = serde_json::from_value(fit.checkpoint.config.clone())?;
                    state.write_artifacts(&path.join("artifacts"), &cfg, c.seed)?;
                }
            }
            Err(e) => std::fs::write(path.join("error.txt"), format!("{e}\n"))?,
        }
        runs.push(ManifestRun {
            column: &result.columns[c.column],
            run: c.run,
            method: c.method.label(),
            seed: c.seed,
            data_seed: derive_seed(c.seed, c.column as u64),
            dir: rel,
            error: c.outcome.as_ref().err().map(String::as_str),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        spec: &result.spec,
        columns: &result.columns,
        anti_causal: result.anti_causal.as_ref(),
        runs,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}
