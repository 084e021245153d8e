//! `hrm-lab` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::baselines::{fit_dro, fit_erm, fit_irm, BaselineConfig, BaselineMethod};
use crate::data::{derive_seed, theta_phi, Dataset, DatasetManifest, GeneratorSpec};
use crate::envs::envs_from_labels;
use crate::error::{HrmError, Result};
use crate::experiment::{
    anti_causal_coefficients, generate_run_data, results_markdown, run_experiment, run_seed,
    write_outputs, ExperimentSpec, Method, Scenario,
};
use crate::gates::Checkpoint;
use crate::hrm::{run_hrm, HrmConfig};
use crate::metrics::compute_metrics;
use crate::selftest::run_selftest;

#[derive(Debug, Parser)]
#[command(
    name = "hrm-lab",
    version,
    about = "Heterogeneous risk minimization benchmark harness"
)]
pub struct Cli {
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/test CSVs and a manifest for every column and run of an experiment file.
    Generate(GenerateArgs),
    /// Fit one method on a dataset CSV and write its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled test CSV, or run a whole experiment file.
    Evaluate(EvaluateArgs),
    /// Run a built-in benchmark table end to end.
    Reproduce(ReproduceArgs),
    /// Run the fast invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of runs.
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training CSV (`x_*`, `y`, optional `env`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "hrm")]
    pub method: String,
    /// Experiment file whose `[baseline]` and `[hrm]` sections configure the fit.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `checkpoint.json` (and HRM artifacts).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["config", "checkpoint"]))]
pub struct EvaluateArgs {
    /// Experiment file to run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to score.
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Test CSV with an `env` column.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Restrict to these methods (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableId {
    #[value(name = "sim-selection-s1")]
    SimSelectionS1,
    #[value(name = "anti-causal-s1")]
    AntiCausalS1,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    pub table: TableId,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Defaults to `results/<table>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Experiment file overriding the built-in method settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate(a) => generate(&a).map(|_| 0),
        Command::Train(a) => train(&a).map(|_| 0),
        Command::Evaluate(a) => evaluate(&a).map(|_| 0),
        Command::Reproduce(a) => reproduce(&a).map(|_| 0),
        Command::Selftest => Ok(selftest()),
    }
}

fn parse_methods(names: &[String]) -> Result<Option<Vec<Method>>> {
    if names.is_empty() {
        return Ok(None);
    }
    names
        .iter()
        .map(|s| Method::parse(s.trim()))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn apply_overrides(
    spec: &mut ExperimentSpec,
    seed: Option<u64>,
    runs: Option<usize>,
    methods: &[String],
) -> Result<()> {
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    if let Some(r) = runs {
        spec.n_runs = r;
    }
    if let Some(m) = parse_methods(methods)? {
        spec.methods = m;
    }
    spec.validate()
}

#[derive(Serialize)]
struct GeneratedRun {
    schema_version: u32,
    column: String,
    run: usize,
    data_seed: u64,
    train: DatasetManifest,
    test_envs: usize,
    /// Test environments before this index are training sources and are not scored.
    first_scored: usize,
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&a.config)?;
    apply_overrides(&mut spec, a.seed, a.runs, &[])?;
    let coefficients = anti_causal_coefficients(&spec)?;
    let columns: Vec<String> = match &spec.scenario {
        Scenario::SelectionBias { train_r, .. } => {
            train_r.iter().map(|r| format!("r={r}")).collect()
        }
        Scenario::AntiCausal { .. } => vec!["all".into()],
    };
    for (c, column) in columns.iter().enumerate() {
        for run in 0..spec.n_runs {
            let data = generate_run_data(&spec, coefficients.as_ref(), c, run)?;
            let dir = a.out.join(column).join(format!("run_{run:02}"));
            std::fs::create_dir_all(&dir)?;
            data.train.write_csv(&dir.join("train.csv"))?;
            Dataset::concat(&data.tests)?.write_csv(&dir.join("test.csv"))?;
            let generator = match (&spec.scenario, &coefficients) {
                (
                    Scenario::SelectionBias {
                        config, train_r, ..
                    },
                    _,
                ) => GeneratorSpec::SelectionBias {
                    config: crate::data::SelectionBiasConfig {
                        r: train_r[c],
                        ..config.clone()
                    },
                    theta_phi: theta_phi(config.n_phi),
                },
                (Scenario::AntiCausal { train_sizes, .. }, Some(cfg)) => {
                    GeneratorSpec::AntiCausal {
                        config: cfg.clone(),
                        envs: cfg.one_hot_envs(train_sizes),
                    }
                }
                (Scenario::AntiCausal { .. }, None) => {
                    unreachable!("coefficients exist for anti-causal specs")
                }
            };
            let manifest = GeneratedRun {
                schema_version: crate::experiment::SCHEMA_VERSION,
                column: column.clone(),
                run,
                data_seed: derive_seed(run_seed(spec.master_seed, run), c as u64),
                train: DatasetManifest {
                    generator,
                    seed: data.train.seed,
                    invariant_dims: data.train.invariant_dims.clone().unwrap_or_default(),
                    n: data.train.n(),
                    d: data.train.d(),
                },
                test_envs: data.tests.len(),
                first_scored: data.first_scored,
            };
            std::fs::write(
                dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)? + "\n",
            )?;
        }
    }
    println!(
        "wrote {} run(s) x {} column(s) to {}",
        spec.n_runs,
        columns.len(),
        a.out.display()
    );
    Ok(())
}

fn method_configs(config: Option<&Path>) -> Result<(BaselineConfig, HrmConfig)> {
    match config {
        Some(p) => {
            let spec = ExperimentSpec::load(p)?;
            Ok((spec.baseline, spec.hrm))
        }
        None => Ok((BaselineConfig::default(), HrmConfig::default())),
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    let method = Method::parse(&a.method)?;
    let data = Dataset::read_csv(&a.data)?;
    let (baseline, hrm) = method_configs(a.config.as_deref())?;
    std::fs::create_dir_all(&a.out)?;
    let checkpoint = match method {
        Method::Erm | Method::Dro | Method::Irm => {
            let m = match method {
                Method::Erm => BaselineMethod::Erm,
                Method::Dro => BaselineMethod::Dro,
                _ => BaselineMethod::Irm,
            };
            let cfg = BaselineConfig {
                method: m,
                seed: a.seed,
                ..baseline
            };
            let fit = match m {
                BaselineMethod::Erm => fit_erm(&data, &cfg)?,
                BaselineMethod::Dro => fit_dro(&data, &cfg)?,
                BaselineMethod::Irm => fit_irm(&envs_from_labels(&data)?, &cfg)?,
            };
            Checkpoint::plain(
                method.label(),
                &fit.model,
                serde_json::to_value(&cfg)?,
                a.seed,
            )
        }
        Method::Hrm | Method::HrmSingle => {
            let mut cfg = hrm;
            cfg.mc.seed = derive_seed(a.seed, 1);
            cfg.mp.seed = derive_seed(a.seed, 2);
            if method == Method::HrmSingle {
                cfg.rounds = 1;
            }
            let state = run_hrm(&data, &cfg)?;
            state.write_artifacts(&a.out.join("artifacts"), &cfg, a.seed)?;
            Checkpoint {
                method: method.label().to_string(),
                mu: Some(state.gate.mu.iter().copied().collect()),
                sigma_gate: Some(state.gate.sigma_gate),
                theta: state.model.theta.iter().copied().collect(),
                intercept: state.model.intercept,
                config: serde_json::to_value(&cfg)?,
                seed: a.seed,
            }
        }
    };
    let path = a.out.join("checkpoint.json");
    std::fs::write(&path, serde_json::to_string_pretty(&checkpoint)? + "\n")?;
    println!("wrote {}", path.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if let Some(ck_path) = &a.checkpoint {
        let data_path = a
            .data
            .as_ref()
            .ok_or_else(|| HrmError::config("--checkpoint needs --data"))?;
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(ck_path)?)?;
        let model = ck.predictor()?;
        let data = Dataset::read_csv(data_path)?;
        if model.theta.len() != data.d() {
            return Err(HrmError::data(format!(
                "checkpoint has {} coefficients but the data has {} columns",
                model.theta.len(),
                data.d()
            )));
        }
        let k = data
            .env_count()
            .ok_or_else(|| HrmError::data("test CSV needs an `env` column"))?;
        let losses = (0..k)
            .map(|e| data.env_subset(e).map(|s| model.mse(&s.x, &s.y)))
            .collect::<Result<Vec<_>>>()?;
        let report = compute_metrics(&losses)?;
        let text = serde_json::to_string_pretty(&report)? + "\n";
        if let Some(out) = &a.out {
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("metrics.json"), &text)?;
        }
        print!("{text}");
        return Ok(());
    }
    let path = a
        .config
        .as_ref()
        .ok_or_else(|| HrmError::config("evaluate needs --config or --checkpoint"))?;
    let mut spec = ExperimentSpec::load(path)?;
    apply_overrides(&mut spec, a.seed, a.runs, &a.method)?;
    let out = a
        .out
        .clone()
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&spec.name));
    run_and_write(&spec, &out)
}

fn run_and_write(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let result = run_experiment(spec)?;
    write_outputs(&result, out)?;
    print!("{}", results_markdown(&result));
    println!("\noutputs written to {}", out.display());
    Ok(())
}

fn reproduce(a: &ReproduceArgs) -> Result<()> {
    let mut spec = match a.table {
        TableId::SimSelectionS1 => ExperimentSpec::sim_selection(a.runs, a.seed),
        TableId::AntiCausalS1 => ExperimentSpec::anti_causal(a.runs, a.seed),
    };
    if let Some(p) = &a.config {
        let file = ExperimentSpec::load(p)?;
        spec.baseline = file.baseline;
        spec.hrm = file.hrm;
    }
    apply_overrides(&mut spec, None, None, &a.method)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(&spec.name));
    run_and_write(&spec, &out)
}

fn selftest() -> i32 {
    let outcomes = run_selftest();
    for o in &outcomes {
        println!(
            "{} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{} of {} checks passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    if failed == 0 {
        0
    } else {
        1
    }
}
