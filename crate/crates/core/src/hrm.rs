//! The joint loop: cluster on the current variant features, learn gates on
//! the inferred environments, then feed the complement of the learned mask
//! back into the clustering.

use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::{fit_mc, ClusterCenter, EnvironmentPartition, McConfig};
use crate::data::{derive_seed, rng_from_seed, Dataset};
use crate::envs::{envs_from_hard_labels, envs_from_soft, Environment};
use crate::error::{HrmError, Result};
use crate::gates::{fit_mp, hard_mask, GateVector, LinearModel, MpConfig, MpFit};

/// How the learned mask becomes the clustering selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Convert {
    /// `ψ = (1 - M) ⊙ x` with the continuous mask.
    Soft,
    /// `ψ = (1 - 1[M ≥ τ]) ⊙ x`.
    HardThreshold { tau: f64 },
}

/// How cluster responsibilities become Mp environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// One weighted environment per cluster.
    Soft,
    /// One hard label per row drawn from its responsibilities.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrmConfig {
    pub rounds: usize,
    pub mc: McConfig,
    pub mp: MpConfig,
    pub convert: Convert,
    pub assignment: Assignment,
    pub stop_tol: f64,
    pub warm_start: bool,
}

impl Default for HrmConfig {
    fn default() -> Self {
        HrmConfig {
            rounds: 5,
            mc: McConfig::default(),
            mp: MpConfig::default(),
            convert: Convert::Soft,
            assignment: Assignment::Soft,
            stop_tol: 0.01,
            warm_start: true,
        }
    }
}

impl HrmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(HrmError::config("rounds must be >= 1"));
        }
        if let Convert::HardThreshold { tau } = self.convert {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(HrmError::config("hard threshold tau must lie in (0, 1)"));
            }
        }
        if !(self.stop_tol >= 0.0) {
            return Err(HrmError::config("stop_tol must be >= 0"));
        }
        self.mc.validate()?;
        self.mp.validate()
    }
}

/// What one outer round produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub mask: DVector<f64>,
    pub partition: EnvironmentPartition,
    pub mc_objective: f64,
    pub mp_objective: f64,
    /// Agreement with the dataset's own environment labels, when present.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrmState {
    /// Index of the last completed round.
    pub round: usize,
    pub gate: GateVector,
    pub model: LinearModel,
    pub partition: EnvironmentPartition,
    pub centers: Vec<ClusterCenter>,
    pub history: Vec<RoundRecord>,
}

impl HrmState {
    pub fn predictor(&self) -> LinearModel {
        self.model.masked(&hard_mask(&self.gate))
    }

    pub fn mask(&self) -> DVector<f64> {
        hard_mask(&self.gate)
    }

    /// Writes `mask.json` and `partition.csv` per round plus
    /// `objective_trace.csv` and `manifest.json` at the top level.
    pub fn write_artifacts(&self, dir: &Path, config: &HrmConfig, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut trace = csv::Writer::from_path(dir.join("objective_trace.csv"))?;
        trace.write_record(["round", "mc_objective", "mp_objective", "agreement"])?;
        for (t, rec) in self.history.iter().enumerate() {
            let rd = dir.join(format!("round_{t}"));
            std::fs::create_dir_all(&rd)?;
            let mask: Vec<f64> = rec.mask.iter().copied().collect();
            std::fs::write(rd.join("mask.json"), serde_json::to_string_pretty(&mask)?)?;
            rec.partition.write_csv(&rd.join("partition.csv"))?;
            trace.write_record([
                t.to_string(),
                rec.mc_objective.to_string(),
                rec.mp_objective.to_string(),
                rec.agreement.map_or(String::new(), |a| a.to_string()),
            ])?;
        }
        trace.flush()?;
        std::fs::write(
            dir.join("centers.json"),
            serde_json::to_string_pretty(&self.centers)?,
        )?;
        let manifest = serde_json::json!({
            "seed": seed,
            "rounds_completed": self.history.len(),
            "config": config,
            "final_mask": self.mask().iter().copied().collect::<Vec<f64>>(),
        });
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

fn selector_from_mask(mask: &DVector<f64>, convert: Convert) -> DVector<f64> {
    match convert {
        Convert::Soft => mask.map(|m| 1.0 - m),
        Convert::HardThreshold { tau } => mask.map(|m| if m >= tau { 0.0 } else { 1.0 }),
    }
}

fn round_envs(
    data: &Dataset,
    partition: &EnvironmentPartition,
    cfg: &HrmConfig,
    round: usize,
) -> Result<Vec<Environment>> {
    let mut envs = match cfg.assignment {
        Assignment::Soft => envs_from_soft(data, &partition.w)?,
        Assignment::Sampled => {
            let mut rng = rng_from_seed(derive_seed(cfg.mc.seed ^ 0x5a5a, round as u64));
            envs_from_hard_labels(data, &partition.sample_labels(&mut rng))?
        }
    };
    if envs.len() == 1 {
        // a single environment carries no heterogeneity: zero penalty
        warn!("round {round}: clustering produced one non-empty environment");
        envs.push(envs[0].clone());
    }
    Ok(envs)
}

fn with_round<T>(round: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| HrmError::Round {
        round,
        source: Box::new(e),
    })
}

/// Runs the joint loop for up to `cfg.rounds` rounds.
pub fn run_hrm(data: &Dataset, cfg: &HrmConfig) -> Result<HrmState> {
    cfg.validate()?;
    data.validate()?;
    let d = data.d();
    let mut selector = DVector::from_element(d, 1.0);
    let mut prev: Option<MpFit> = None;
    let mut history: Vec<RoundRecord> = Vec::new();
    let mut last_centers = Vec::new();
    for t in 0..cfg.rounds {
        let mc_cfg = McConfig {
            seed: derive_seed(cfg.mc.seed, t as u64),
            ..cfg.mc.clone()
        };
        let mc = with_round(t, fit_mc(data, &selector, &mc_cfg))?;
        let envs = with_round(t, round_envs(data, &mc.partition, cfg, t))?;
        let mp_cfg = MpConfig {
            seed: derive_seed(cfg.mp.seed, t as u64),
            ..cfg.mp.clone()
        };
        let warm = if cfg.warm_start {
            prev.as_ref().map(|f| (&f.gate, &f.model))
        } else {
            None
        };
        let fit = with_round(t, fit_mp(&envs, &mp_cfg, warm))?;
        let mask = hard_mask(&fit.gate);
        let agreement = match &data.env_labels {
            Some(truth) => Some(with_round(
                t,
                partition_agreement(&mc.partition.hard_labels, truth),
            )?),
            None => None,
        };
        let change = history
            .last()
            .map(|h| (&mask - &h.mask).amax())
            .unwrap_or(f64::INFINITY);
        info!(
            "round {t}: mc objective {:.5}, agreement {:?}, mask change {change:.4}",
            mc.trace.last().copied().unwrap_or(f64::NAN),
            agreement
        );
        history.push(RoundRecord {
            mask: mask.clone(),
            partition: mc.partition,
            mc_objective: mc.trace.last().copied().unwrap_or(f64::NAN),
            mp_objective: fit.trace.last().copied().unwrap_or(f64::NAN),
            agreement,
        });
        last_centers = mc.centers;
        prev = Some(fit);
        if change < cfg.stop_tol {
            break;
        }
        selector = selector_from_mask(&mask, cfg.convert);
        if !selector.iter().any(|s| *s > 0.0) {
            warn!("round {t}: every gate is fully open; clustering on all of X next round");
            selector = DVector::from_element(d, 1.0);
        }
    }
    let fit = prev.expect("rounds >= 1");
    let last = history.last().expect("rounds >= 1");
    Ok(HrmState {
        round: history.len() - 1,
        gate: fit.gate,
        model: fit.model,
        partition: last.partition.clone(),
        centers: last_centers,
        history,
    })
}

/// The one-round ablation without feedback.
pub fn run_hrm_single(data: &Dataset, cfg: &HrmConfig) -> Result<HrmState> {
    run_hrm(
        data,
        &HrmConfig {
            rounds: 1,
            ..cfg.clone()
        },
    )
}

/// Best hard-label accuracy over all relabelings of the predicted labels.
pub fn partition_agreement(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(HrmError::data(
            "partition_agreement: label vectors differ in length",
        ));
    }
    if predicted.is_empty() {
        return Err(HrmError::data("partition_agreement: no labels"));
    }
    let kp = predicted.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let m = kp.max(kt);
    let mut confusion = DMatrix::<usize>::zeros(m, m);
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[(p, t)] += 1;
    }
    let best = if m <= 8 {
        let mut perm: Vec<usize> = (0..m).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |p| {
            best = best.max((0..m).map(|i| confusion[(i, p[i])]).sum::<usize>());
        });
        best
    } else {
        greedy_matching(&confusion)
    };
    Ok(best as f64 / predicted.len() as f64)
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

fn greedy_matching(confusion: &DMatrix<usize>) -> usize {
    let m = confusion.nrows();
    let mut cells: Vec<(usize, usize, usize)> = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| (confusion[(i, j)], i, j))
        .collect();
    cells.sort_by(|a, b| b.cmp(a));
    let (mut used_r, mut used_c) = (vec![false; m], vec![false; m]);
    let mut total = 0;
    for (c, i, j) in cells {
        if !used_r[i] && !used_c[j] {
            used_r[i] = true;
            used_c[j] = true;
            total += c;
        }
    }
    total
}
