//! Probabilistic scores and grouped cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::inference::{fit, SamplerConfig};
use crate::model::{Dataset, ModelConfig, SnowModel, VarianceMode};
use crate::predict::{predict_curves, PredictionMode, PredictionRequest, Target};
use crate::{rng, MispError, Result};

/// Empirical CRPS of `draws` against `truth`:
/// `(1/M) Σ |x_j − y| − (1/2M²) Σ_m Σ_m' |x_m − x_m'|`, in `O(M log M)`.
pub fn crps_empirical(draws: &[f64], truth: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(MispError::Input("CRPS needs at least one draw".into()));
    }
    let m = draws.len() as f64;
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs_term = sorted.iter().map(|x| (x - truth).abs()).sum::<f64>() / m;
    // Σ_m Σ_m' |x_m − x_m'| = 2 Σ_i (2i − M + 1) x_(i) for zero-based ranks i.
    let spread = sorted.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - m + 1.0) * x).sum::<f64>();
    Ok((abs_term - spread / (m * m)).max(0.0))
}

/// Direct double-sum CRPS, `O(M²)`.
pub fn crps_brute(draws: &[f64], truth: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(MispError::Input("CRPS needs at least one draw".into()));
    }
    let m = draws.len() as f64;
    let a = draws.iter().map(|x| (x - truth).abs()).sum::<f64>() / m;
    let mut b = 0.0;
    for x in draws {
        for y in draws {
            b += (x - y).abs();
        }
    }
    Ok(a - b / (2.0 * m * m))
}

/// One held-out measurement with its predictive draws.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutPrediction {
    pub site_id: String,
    pub core_rep: String,
    pub depth: f64,
    pub truth: f64,
    pub draws: Vec<f64>,
}

/// Held-out measurements of one core with its length weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreHoldout {
    pub x_max: f64,
    pub n: usize,
    pub points: Vec<HoldoutPrediction>,
}

/// `(ISE, IAE)` with per-core weight `x_max / n` on errors of the
/// predictive mean.
pub fn integrated_errors(cores: &[CoreHoldout]) -> Result<(f64, f64)> {
    let mut ise = 0.0;
    let mut iae = 0.0;
    for core in cores {
        if core.n == 0 || !(core.x_max > 0.0) {
            return Err(MispError::Input("held-out core lacks a positive length or count".into()));
        }
        let w = core.x_max / core.n as f64;
        for p in &core.points {
            if p.draws.is_empty() {
                return Err(MispError::Input(format!(
                    "no predictive draws for {}/{} at {} m",
                    p.site_id, p.core_rep, p.depth
                )));
            }
            let e = p.draws.iter().sum::<f64>() / p.draws.len() as f64 - p.truth;
            ise += w * e * e;
            iae += w * e.abs();
        }
    }
    Ok((ise, iae))
}

/// Totals divided by the smallest total.
pub fn relative_crps(totals: &[f64]) -> Result<Vec<f64>> {
    if totals.is_empty() {
        return Err(MispError::Input("no CRPS totals".into()));
    }
    if let Some(bad) = totals.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(MispError::Input(format!("CRPS total {bad} is not positive")));
    }
    let best = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(totals.iter().map(|t| t / best).collect())
}

/// Assignment of cores to folds. Cores of one site share a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n_folds: usize,
    /// Fold of each core, in dataset order.
    pub assignment: Vec<usize>,
}

impl CvPlan {
    /// Shuffle sites with a seeded permutation and deal them round-robin
    /// into `n_folds` folds.
    pub fn random(data: &Dataset, n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(MispError::Plan(format!("need at least 2 folds, got {n_folds}")));
        }
        if n_folds > data.cores.len() {
            return Err(MispError::Plan(format!(
                "{n_folds} folds requested but only {} cores",
                data.cores.len()
            )));
        }
        if n_folds > data.sites.len() {
            return Err(MispError::Plan(format!(
                "{n_folds} folds requested but only {} sites (replicate cores share a fold)",
                data.sites.len()
            )));
        }
        let mut order: Vec<usize> = (0..data.sites.len()).collect();
        order.shuffle(&mut rng::stream(seed, "cv-folds", 0));
        let mut site_fold = vec![0; data.sites.len()];
        for (k, s) in order.into_iter().enumerate() {
            site_fold[s] = k % n_folds;
        }
        let plan = CvPlan { n_folds, assignment: data.core_site.iter().map(|&s| site_fold[s]).collect() };
        plan.validate(data)?;
        Ok(plan)
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.assignment.len() != data.cores.len() {
            return Err(MispError::Plan(format!(
                "plan covers {} cores, dataset has {}",
                self.assignment.len(),
                data.cores.len()
            )));
        }
        for k in 0..self.n_folds {
            let held = self.assignment.iter().filter(|&&f| f == k).count();
            if held == 0 {
                return Err(MispError::Plan(format!("fold {k} holds out no cores")));
            }
            if held == data.cores.len() {
                return Err(MispError::Plan(format!("fold {k} leaves zero training cores")));
            }
        }
        if let Some(f) = self.assignment.iter().find(|&&f| f >= self.n_folds) {
            return Err(MispError::Plan(format!("fold index {f} out of range")));
        }
        let mut site_fold: BTreeMap<usize, usize> = BTreeMap::new();
        for (ci, &f) in self.assignment.iter().enumerate() {
            if let Some(&prev) = site_fold.get(&data.core_site[ci]) {
                if prev != f {
                    return Err(MispError::Plan(format!(
                        "cores of site {} are split across folds",
                        data.sites[data.core_site[ci]].id
                    )));
                }
            }
            site_fold.insert(data.core_site[ci], f);
        }
        Ok(())
    }

    pub fn fold_cores(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&c| self.assignment[c] != fold)
    }
}

/// Cross-validated scores for one model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub model_label: String,
    pub ise: f64,
    pub iae: f64,
    /// Summed over all held-out measurements.
    pub crps: f64,
    pub n_points: usize,
    pub n_fits: usize,
    pub warnings: Vec<String>,
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub model_label: String,
    pub ise: f64,
    pub iae: f64,
    pub crps: f64,
    pub relative_crps: f64,
}

pub fn cv_table(scores: &[CvScores]) -> Result<Vec<CvRow>> {
    let rel = relative_crps(&scores.iter().map(|s| s.crps).collect::<Vec<_>>())?;
    Ok(scores
        .iter()
        .zip(rel)
        .map(|(s, r)| CvRow {
            model_label: s.model_label.clone(),
            ise: s.ise,
            iae: s.iae,
            crps: s.crps,
            relative_crps: r,
        })
        .collect())
}

struct FoldOutcome {
    cores: Vec<CoreHoldout>,
    warnings: Vec<String>,
}

/// Fit on each fold's training cores and score noisy predictions of the
/// held-out cores. Folds run concurrently; fold `k` samples with seed
/// derived from `(sampler.seed, "cv-fit", k)`.
pub fn run_cv(
    label: &str,
    data: &Dataset,
    cfg: &ModelConfig,
    sampler: &SamplerConfig,
    plan: &CvPlan,
) -> Result<CvScores> {
    cfg.validate()?;
    sampler.validate()?;
    plan.validate(data)?;
    if cfg.variance_mode == VarianceMode::FixedWeightedCampaign {
        for k in 0..plan.n_folds {
            let (train, test) = plan.fold_cores(k);
            for &c in &test {
                let camp = &data.cores[c].campaign;
                if !train.iter().any(|&t| data.cores[t].campaign == *camp) {
                    return Err(MispError::Plan(format!("fold {k} holds out every core of campaign {camp}")));
                }
            }
        }
    }
    let outcomes: Vec<Result<FoldOutcome>> =
        (0..plan.n_folds).into_par_iter().map(|k| run_fold(k, data, cfg, sampler, plan)).collect();
    let mut cores = Vec::new();
    let mut warnings = Vec::new();
    for o in outcomes {
        let o = o?;
        cores.extend(o.cores);
        warnings.extend(o.warnings);
    }
    let (ise, iae) = integrated_errors(&cores)?;
    let mut crps = 0.0;
    let mut n_points = 0;
    for p in cores.iter().flat_map(|c| &c.points) {
        crps += crps_empirical(&p.draws, p.truth)?;
        n_points += 1;
    }
    Ok(CvScores { model_label: label.to_string(), ise, iae, crps, n_points, n_fits: plan.n_folds, warnings })
}

fn run_fold(
    k: usize,
    data: &Dataset,
    cfg: &ModelConfig,
    sampler: &SamplerConfig,
    plan: &CvPlan,
) -> Result<FoldOutcome> {
    let (train, test) = plan.fold_cores(k);
    let model = SnowModel::new(cfg.clone(), data.subset(&train)?)?;
    let fold_sampler =
        SamplerConfig { seed: rng::derive_seed(sampler.seed, "cv-fit", k as u64), ..sampler.clone() };
    let samples = fit(&model, &fold_sampler)?;
    let warnings = samples.warnings.iter().map(|w| format!("fold {k}: {w}")).collect();
    let mut cores = Vec::with_capacity(test.len());
    for &c in &test {
        let core = &data.cores[c];
        let req = PredictionRequest {
            targets: vec![Target {
                label: core.label(),
                location: core.location,
                weighting: Some(core.weight_context()),
            }],
            depths: core.depths.clone(),
            mode: PredictionMode::NoisyMeasurement,
            seed: rng::derive_seed(sampler.seed, "cv-predict", c as u64),
            thin: 1,
        };
        let pred = predict_curves(&model, &samples, &req)?;
        let points = core
            .depths
            .iter()
            .zip(&core.densities)
            .enumerate()
            .map(|(x, (&depth, &truth))| HoldoutPrediction {
                site_id: core.site_id.clone(),
                core_rep: core.core_rep.clone(),
                depth,
                truth,
                draws: pred.cell(0, x),
            })
            .collect();
        cores.push(CoreHoldout { x_max: core.x_max, n: core.n(), points });
    }
    Ok(FoldOutcome { cores, warnings })
}
