//! Interpolation of fitted curves to new sites.
//!
//! For each posterior draw, `α` and each `log_z_j` are conditioned on their
//! values at the fitted sites (jointly across all requested targets), a field
//! sample is drawn, and the mean curve is assembled through the link. Noisy
//! predictions add a draw from the data model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesy::{self, CovarianceSpec, SiteLocation, JITTER_MAX, JITTER_START};
use crate::inference::{quantile, PosteriorSamples};
use crate::model::{link, obs_variance, ParameterState, SnowModel, WeightContext};
use crate::simulate::draw_observation;
use crate::{rng, MispError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PredictionMode {
    /// The latent mean density μ(s, x).
    #[default]
    MeanCurve,
    /// A new measurement: μ plus data-model noise.
    NoisyMeasurement,
}

impl PredictionMode {
    pub fn label(&self) -> &'static str {
        match self {
            PredictionMode::MeanCurve => "mean_curve",
            PredictionMode::NoisyMeasurement => "noisy_measurement",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub label: String,
    pub location: SiteLocation,
    /// Required for noisy predictions.
    #[serde(default)]
    pub weighting: Option<WeightContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub targets: Vec<Target>,
    pub depths: Vec<f64>,
    pub mode: PredictionMode,
    pub seed: u64,
    /// Use every `thin`-th posterior draw.
    pub thin: usize,
}

impl PredictionRequest {
    pub fn mean_curves(targets: Vec<Target>, depths: Vec<f64>, seed: u64) -> Self {
        PredictionRequest { targets, depths, mode: PredictionMode::MeanCurve, seed, thin: 1 }
    }

    fn validate(&self, model: &SnowModel) -> Result<()> {
        if self.targets.is_empty() || self.depths.is_empty() {
            return Err(MispError::Input("prediction needs at least one target and depth".into()));
        }
        for t in &self.targets {
            t.location.validate()?;
            if self.mode == PredictionMode::NoisyMeasurement && t.weighting.is_none() {
                return Err(MispError::Input(format!(
                    "target {} needs a weighting context for noisy predictions",
                    t.label
                )));
            }
        }
        for &x in &self.depths {
            model.basis().check_depth(x)?;
        }
        Ok(())
    }
}

/// Conditional normal of one field at the targets, plus a joint draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalField {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub sample: Vec<f64>,
}

/// Precomputed kriging weights from observed sites to targets at one φ.
/// Every field shares them; only the mean and scale differ.
#[derive(Debug, Clone)]
pub struct Conditioner {
    /// Observed site exactly at each target, if any.
    coincident: Vec<Option<usize>>,
    /// Targets that need conditioning.
    free: Vec<usize>,
    /// `R_to R_oo⁻¹` for free targets.
    weights: DMatrix<f64>,
    /// Conditional correlation `R_tt − R_to R_oo⁻¹ R_ot` of free targets.
    cond_corr: DMatrix<f64>,
    cond_chol: Option<DMatrix<f64>>,
}

impl Conditioner {
    pub fn new(
        cov: &CovarianceSpec,
        phi: f64,
        observed: &[SiteLocation],
        targets: &[SiteLocation],
    ) -> Result<Self> {
        cov.validate()?;
        let coincident: Vec<Option<usize>> =
            targets.iter().map(|t| observed.iter().position(|o| cov.distance(o, t) == 0.0)).collect();
        let free: Vec<usize> = (0..targets.len()).filter(|&i| coincident[i].is_none()).collect();
        let free_locs: Vec<SiteLocation> = free.iter().map(|&i| targets[i]).collect();
        let nu = cov.smoothness;
        let d_oo = cov.distance_matrix(observed);
        let (chol_oo, _) = geodesy::factor_with_jitter(&geodesy::corr_matrix(nu, phi, &d_oo), &d_oo)?;
        let r_to = geodesy::corr_matrix(nu, phi, &cov.cross_distances(&free_locs, observed));
        let weights = chol_oo.solve(&r_to.transpose()).transpose();
        let d_tt = cov.distance_matrix(&free_locs);
        let r_tt = geodesy::corr_matrix(nu, phi, &d_tt);
        let mut cond_corr = r_tt - &weights * r_to.transpose();
        // symmetrise and clip tiny negative diagonals from rounding
        cond_corr = 0.5 * (&cond_corr + cond_corr.transpose());
        for i in 0..cond_corr.nrows() {
            if cond_corr[(i, i)] < 0.0 {
                cond_corr[(i, i)] = 0.0;
            }
        }
        let cond_chol = if free.is_empty() { None } else { Some(factor_psd(&cond_corr)?) };
        Ok(Conditioner { coincident, free, weights, cond_corr, cond_chol })
    }

    /// Condition field values `observed_values` with prior mean `mean` and
    /// variance `sigma2`, and draw a joint sample.
    pub fn condition<R: Rng>(
        &self,
        observed_values: &[f64],
        mean: f64,
        sigma2: f64,
        rng: &mut R,
    ) -> ConditionalField {
        let n = self.coincident.len();
        let mut out = ConditionalField { mean: vec![0.0; n], variance: vec![0.0; n], sample: vec![0.0; n] };
        for (i, c) in self.coincident.iter().enumerate() {
            if let Some(o) = c {
                out.mean[i] = observed_values[*o];
                out.sample[i] = observed_values[*o];
            }
        }
        if self.free.is_empty() {
            return out;
        }
        let resid = DVector::from_iterator(observed_values.len(), observed_values.iter().map(|v| v - mean));
        let m = &self.weights * resid;
        let z = DVector::from_iterator(
            self.free.len(),
            (0..self.free.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let noise = self.cond_chol.as_ref().unwrap() * z;
        let sd = sigma2.sqrt();
        for (k, &i) in self.free.iter().enumerate() {
            out.mean[i] = mean + m[k];
            out.variance[i] = sigma2 * self.cond_corr[(k, k)];
            out.sample[i] = out.mean[i] + sd * noise[k];
        }
        out
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix, adding escalating
/// diagonal jitter.
fn factor_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut jitter = JITTER_START;
    loop {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(a) {
            return Ok(ch.l());
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * 1.000_001 {
            return Err(MispError::Numerical(
                "conditional covariance is not positive semidefinite after jitter".into(),
            ));
        }
    }
}

/// Condition field `field` (0 = α, `j ≥ 1` = `log_z_j`) of one draw at `targets`.
pub fn condition_field<R: Rng>(
    draw: &ParameterState,
    field: usize,
    cov: &CovarianceSpec,
    observed: &[SiteLocation],
    targets: &[SiteLocation],
    rng: &mut R,
) -> Result<ConditionalField> {
    if field > draw.n_basis() {
        return Err(MispError::Index(format!("field {field} out of range")));
    }
    let c = Conditioner::new(cov, draw.phi, observed, targets)?;
    Ok(c.condition(&draw.field(field), draw.gamma[field], draw.sigma2[field], rng))
}

/// Per-draw predictions, stored draw-major: `values[(d * n_targets + t) * n_depths + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub target_labels: Vec<String>,
    pub depths: Vec<f64>,
    pub mode: PredictionMode,
    pub n_draws: usize,
    pub values: Vec<f64>,
}

/// Summary of one (target, depth) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub site_label: String,
    pub depth_m: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub mode: PredictionMode,
}

impl PredictiveDraws {
    pub fn get(&self, draw: usize, target: usize, depth: usize) -> f64 {
        let nt = self.target_labels.len();
        let nx = self.depths.len();
        self.values[(draw * nt + target) * nx + depth]
    }

    /// All draws of one cell.
    pub fn cell(&self, target: usize, depth: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.get(d, target, depth)).collect()
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut out = Vec::with_capacity(self.target_labels.len() * self.depths.len());
        for (t, label) in self.target_labels.iter().enumerate() {
            for (x, &depth) in self.depths.iter().enumerate() {
                let mut cell = self.cell(t, x);
                let mean = cell.iter().sum::<f64>() / cell.len() as f64;
                cell.sort_by(f64::total_cmp);
                out.push(CellSummary {
                    site_label: label.clone(),
                    depth_m: depth,
                    mean,
                    q025: quantile(&cell, 0.025),
                    q975: quantile(&cell, 0.975),
                    mode: self.mode,
                });
            }
        }
        out
    }
}

/// Predict curves at the requested targets for every (thinned) posterior draw.
pub fn predict_curves(
    model: &SnowModel,
    samples: &PosteriorSamples,
    req: &PredictionRequest,
) -> Result<PredictiveDraws> {
    req.validate(model)?;
    let cfg = model.config();
    let observed = model.data().site_locations();
    let target_locs: Vec<SiteLocation> = req.targets.iter().map(|t| t.location).collect();
    let rows: Vec<Vec<f64>> =
        req.depths.iter().map(|&x| model.basis().design_row(x)).collect::<Result<_>>()?;
    let draws = samples.thinned(req.thin);
    let nb = model.layout().n_basis;
    let campaigns = &model.data().campaigns;
    let per_draw: Vec<Result<Vec<f64>>> = draws
        .par_iter()
        .enumerate()
        .map(|(d, state)| {
            let mut r = rng::stream(req.seed, "predict", d as u64);
            let cond = Conditioner::new(&cfg.covariance, state.phi, &observed, &target_locs)?;
            let fields: Vec<Vec<f64>> = (0..=nb)
                .map(|k| cond.condition(&state.field(k), state.gamma[k], state.sigma2[k], &mut r).sample)
                .collect();
            let mut out = Vec::with_capacity(target_locs.len() * rows.len());
            for (t, target) in req.targets.iter().enumerate() {
                let z: Vec<f64> = (1..=nb).map(|k| fields[k][t].exp()).collect();
                let v = match req.mode {
                    PredictionMode::MeanCurve => 0.0,
                    PredictionMode::NoisyMeasurement => {
                        obs_variance(state, cfg, campaigns, target.weighting.as_ref().unwrap())?
                    }
                };
                for row in &rows {
                    let w = fields[0][t] + row.iter().zip(&z).map(|(k, z)| k * z).sum::<f64>();
                    let mu = link(w, cfg.rho_ice);
                    out.push(match req.mode {
                        PredictionMode::MeanCurve => mu,
                        PredictionMode::NoisyMeasurement => draw_observation(cfg.data_model, mu, v, &mut r),
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(draws.len() * target_locs.len() * rows.len());
    for d in per_draw {
        values.extend(d?);
    }
    Ok(PredictiveDraws {
        target_labels: req.targets.iter().map(|t| t.label.clone()).collect(),
        depths: req.depths.clone(),
        mode: req.mode,
        n_draws: draws.len(),
        values,
    })
}

/// Mean curve of a fitted site over `depths`, typically reaching below the
/// deepest measurement of its core.
pub fn extend_curve(
    model: &SnowModel,
    samples: &PosteriorSamples,
    site_id: &str,
    depths: &[f64],
    seed: u64,
) -> Result<PredictiveDraws> {
    let idx = model
        .data()
        .site_index(site_id)
        .ok_or_else(|| MispError::Input(format!("site {site_id} is not in the fitted dataset")))?;
    let site = &model.data().sites[idx];
    let req = PredictionRequest::mean_curves(
        vec![Target { label: site.id.clone(), location: site.location, weighting: None }],
        depths.to_vec(),
        seed,
    );
    predict_curves(model, samples, &req)
}

#[cfg(test)]
mod tests;
