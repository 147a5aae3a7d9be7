//! The hierarchical snow-density model.
//!
//! Mean density at site `s` and depth `x` is
//! `μ = ρ_I · logistic(α(s) + Σ_j K_j(x) z_j(s))` with `z_j = exp(log_z_j)`.
//! `α` is a Gaussian process and each `log_z_j` an independent Gaussian process
//! over sites, all sharing one decay φ. Observations are lower-truncated at 0
//! around `μ` with a variance that may depend on the core length and the field
//! campaign.

mod density;
mod posterior;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub(crate) use density::{tn_logpdf_grad, tt4_logpdf_grad};
pub use density::{trunc_normal_logpdf, trunc_t4_logpdf};
pub use posterior::{ParamLayout, SnowModel};

use crate::basis::{Basis, BasisSpec};
use crate::geodesy::{great_circle, CovarianceSpec, SiteLocation};
use crate::{MispError, Result};

/// Density of glacial ice in g/cm³.
pub const RHO_ICE: f64 = 0.917;

/// One core: consecutive depth/density measurements from one drilling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreRecord {
    pub site_id: String,
    /// Distinguishes replicate cores drilled at the same site.
    pub core_rep: String,
    pub location: SiteLocation,
    pub campaign: String,
    pub depths: Vec<f64>,
    pub densities: Vec<f64>,
    /// Core length in metres.
    pub x_max: f64,
}

impl CoreRecord {
    /// Build a core whose length is its deepest measurement.
    pub fn new(
        site_id: impl Into<String>,
        core_rep: impl Into<String>,
        location: SiteLocation,
        campaign: impl Into<String>,
        depths: Vec<f64>,
        densities: Vec<f64>,
    ) -> Result<Self> {
        let x_max = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let core = CoreRecord {
            site_id: site_id.into(),
            core_rep: core_rep.into(),
            location,
            campaign: campaign.into(),
            depths,
            densities,
            x_max,
        };
        core.validate(RHO_ICE)?;
        Ok(core)
    }

    pub fn n(&self) -> usize {
        self.depths.len()
    }

    /// Variance weight `n / x_max`.
    pub fn weight(&self) -> f64 {
        self.n() as f64 / self.x_max
    }

    pub fn label(&self) -> String {
        format!("{}#{}", self.site_id, self.core_rep)
    }

    pub fn weight_context(&self) -> WeightContext {
        WeightContext { campaign: self.campaign.clone(), n: self.n(), x_max: self.x_max }
    }

    pub fn validate(&self, rho_ice: f64) -> Result<()> {
        self.location.validate()?;
        if self.depths.is_empty() || self.depths.len() != self.densities.len() {
            return Err(MispError::Validation(format!(
                "core {}: need matching non-empty depth and density lists",
                self.label()
            )));
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            return Err(MispError::Validation(format!(
                "core {}: length x_max must be positive, got {}",
                self.label(),
                self.x_max
            )));
        }
        for (k, (&x, &rho)) in self.depths.iter().zip(&self.densities).enumerate() {
            if !(x >= 0.0 && x <= self.x_max) {
                return Err(MispError::Validation(format!(
                    "core {} measurement {k}: depth {x} outside [0, {}]",
                    self.label(),
                    self.x_max
                )));
            }
            if !(rho > 0.0 && rho < rho_ice) {
                return Err(MispError::Validation(format!(
                    "core {} measurement {k}: density {rho} outside (0, {rho_ice})",
                    self.label()
                )));
            }
        }
        Ok(())
    }
}

/// Weighting context of one core: its campaign, measurement count and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightContext {
    pub campaign: String,
    pub n: usize,
    pub x_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub location: SiteLocation,
}

/// Cores grouped onto deduplicated sites.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cores: Vec<CoreRecord>,
    pub sites: Vec<Site>,
    /// Site index of each core.
    pub core_site: Vec<usize>,
    /// Sorted distinct campaign names.
    pub campaigns: Vec<String>,
}

impl Dataset {
    /// Group cores onto sites by exact coordinate match.
    pub fn from_cores(cores: Vec<CoreRecord>) -> Result<Self> {
        Self::from_cores_with_tolerance(cores, 0.0, RHO_ICE)
    }

    /// Cores whose locations lie within `tolerance_km` of an existing site are
    /// merged onto it; a tolerance of 0 requires identical coordinates.
    pub fn from_cores_with_tolerance(
        cores: Vec<CoreRecord>,
        tolerance_km: f64,
        rho_ice: f64,
    ) -> Result<Self> {
        let mut sites: Vec<Site> = Vec::new();
        let mut core_site = Vec::with_capacity(cores.len());
        let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
        let mut seen_cores: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (ci, core) in cores.iter().enumerate() {
            core.validate(rho_ice)?;
            if let Some(prev) = seen_cores.insert((core.site_id.clone(), core.core_rep.clone()), ci) {
                return Err(MispError::Validation(format!(
                    "core {} appears twice (entries {prev} and {ci})",
                    core.label()
                )));
            }
            let found = sites.iter().position(|s| {
                if tolerance_km == 0.0 {
                    s.location == core.location
                } else {
                    great_circle(&s.location, &core.location) <= tolerance_km
                }
            });
            let idx = match found {
                Some(i) => i,
                None => {
                    sites.push(Site { id: core.site_id.clone(), location: core.location });
                    sites.len() - 1
                }
            };
            if let Some(&other) = by_id.get(&core.site_id) {
                if other != idx {
                    return Err(MispError::Validation(format!(
                        "site_id {} is used at two different locations",
                        core.site_id
                    )));
                }
            } else {
                by_id.insert(core.site_id.clone(), idx);
            }
            core_site.push(idx);
        }
        let mut campaigns: Vec<String> = cores.iter().map(|c| c.campaign.clone()).collect();
        campaigns.sort();
        campaigns.dedup();
        Ok(Dataset { cores, sites, core_site, campaigns })
    }

    pub fn n_measurements(&self) -> usize {
        self.cores.iter().map(CoreRecord::n).sum()
    }

    pub fn site_locations(&self) -> Vec<SiteLocation> {
        self.sites.iter().map(|s| s.location).collect()
    }

    pub fn site_index(&self, site_id: &str) -> Option<usize> {
        self.cores.iter().position(|c| c.site_id == site_id).map(|ci| self.core_site[ci])
    }

    /// New dataset made of the listed cores.
    pub fn subset(&self, core_indices: &[usize]) -> Result<Dataset> {
        Dataset::from_cores(core_indices.iter().map(|&i| self.cores[i].clone()).collect())
    }

    /// One-line shape summary.
    pub fn summary(&self) -> String {
        format!("n_sites={} n_cores={} N={}", self.sites.len(), self.cores.len(), self.n_measurements())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum VarianceMode {
    /// One τ² for every measurement.
    Homoscedastic,
    /// One τ² scaled by `n / x_max` per core.
    FixedWeighted,
    /// Per-campaign τ² scaled by `n / x_max` per core.
    #[default]
    FixedWeightedCampaign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DataModel {
    #[default]
    TruncNormal,
    TruncT4,
}

/// Inverse-Gamma with mean `scale / (shape - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln()
            - statrs::function::gamma::ln_gamma(self.shape)
            - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }
}

/// Gamma with mean `shape / rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - statrs::function::gamma::ln_gamma(self.shape)
            + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// Hyperpriors. φ bounds are per kilometre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub gamma0_mean: f64,
    pub gamma0_sd: f64,
    pub gammaj_mean: f64,
    pub gammaj_sd: f64,
    pub sigma2_0: InvGamma,
    pub sigma2_j: InvGamma,
    pub phi_lower: f64,
    pub phi_upper: f64,
    pub tau2: GammaPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            gamma0_mean: -0.5,
            gamma0_sd: 1.0,
            gammaj_mean: -1.5,
            gammaj_sd: 1.0,
            sigma2_0: InvGamma { shape: 10.0, scale: 3.0 },
            sigma2_j: InvGamma { shape: 4.0, scale: 3.0 },
            phi_lower: 1e-5,
            phi_upper: 1e-1,
            tau2: GammaPrior { shape: 1.0, rate: 100.0 },
        }
    }
}

impl PriorSpec {
    /// Same priors with zero-mean γ, the "standard" comparison setting whose
    /// prior curves reach ice density at shallow depth.
    pub fn zero_mean() -> Self {
        PriorSpec { gamma0_mean: 0.0, gammaj_mean: 0.0, ..PriorSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma0_sd", self.gamma0_sd),
            ("gammaj_sd", self.gammaj_sd),
            ("sigma2_0.shape", self.sigma2_0.shape),
            ("sigma2_0.scale", self.sigma2_0.scale),
            ("sigma2_j.shape", self.sigma2_j.shape),
            ("sigma2_j.scale", self.sigma2_j.scale),
            ("tau2.shape", self.tau2.shape),
            ("tau2.rate", self.tau2.rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MispError::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        if !(self.phi_lower > 0.0 && self.phi_lower < self.phi_upper && self.phi_upper.is_finite()) {
            return Err(MispError::Config(format!(
                "phi bounds must satisfy 0 < lower < upper, got ({}, {})",
                self.phi_lower, self.phi_upper
            )));
        }
        if !(self.gamma0_mean.is_finite() && self.gammaj_mean.is_finite()) {
            return Err(MispError::Config("prior means must be finite".into()));
        }
        Ok(())
    }
}

/// Every structural choice of a model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rho_ice: f64,
    pub basis: BasisSpec,
    pub covariance: CovarianceSpec,
    pub variance_mode: VarianceMode,
    pub data_model: DataModel,
    pub priors: PriorSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rho_ice: RHO_ICE,
            basis: BasisSpec::default(),
            covariance: CovarianceSpec::default(),
            variance_mode: VarianceMode::default(),
            data_model: DataModel::default(),
            priors: PriorSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_ice > 0.0 && self.rho_ice.is_finite()) {
            return Err(MispError::Config(format!("rho_ice must be positive, got {}", self.rho_ice)));
        }
        self.basis.validate()?;
        self.covariance.validate()?;
        self.priors.validate()
    }

    pub fn n_basis(&self) -> usize {
        self.basis.n_basis()
    }

    /// Number of τ² parameters for a dataset with `n_campaigns` campaigns.
    pub fn n_tau(&self, n_campaigns: usize) -> usize {
        match self.variance_mode {
            VarianceMode::FixedWeightedCampaign => n_campaigns.max(1),
            _ => 1,
        }
    }
}

/// One point in parameter space, on the constrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    /// `γ_0` (intercept mean) then `γ_1..γ_J`.
    pub gamma: Vec<f64>,
    /// `σ²_0..σ²_J`.
    pub sigma2: Vec<f64>,
    pub phi: f64,
    /// One per campaign under campaign weighting, otherwise one.
    pub tau2: Vec<f64>,
    /// Per-site intercepts.
    pub alpha: Vec<f64>,
    /// Site-major `n_sites × J` log-coefficients.
    pub log_z: Vec<f64>,
}

impl ParameterState {
    pub fn n_basis(&self) -> usize {
        self.gamma.len().saturating_sub(1)
    }

    pub fn n_sites(&self) -> usize {
        self.alpha.len()
    }

    pub fn log_z(&self, site: usize, j: usize) -> f64 {
        self.log_z[site * self.n_basis() + j]
    }

    /// `log_z[:, j]` across sites.
    pub fn log_z_column(&self, j: usize) -> Vec<f64> {
        (0..self.n_sites()).map(|s| self.log_z(s, j)).collect()
    }

    /// Field `k` over sites: `α` for `k = 0`, `log_z[:, k-1]` otherwise.
    pub fn field(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            self.alpha.clone()
        } else {
            self.log_z_column(k - 1)
        }
    }

    pub fn check_dims(&self, n_basis: usize, n_sites: usize, n_tau: usize) -> Result<()> {
        let ok = self.gamma.len() == n_basis + 1
            && self.sigma2.len() == n_basis + 1
            && self.tau2.len() == n_tau
            && self.alpha.len() == n_sites
            && self.log_z.len() == n_sites * n_basis;
        if !ok {
            return Err(MispError::Input(format!(
                "parameter state dimensions do not match J={n_basis}, sites={n_sites}, tau={n_tau}"
            )));
        }
        Ok(())
    }

    pub fn validate(&self, priors: &PriorSpec) -> Result<()> {
        if self.sigma2.iter().chain(&self.tau2).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(MispError::Validation("variances must be positive and finite".into()));
        }
        if !(self.phi > priors.phi_lower && self.phi < priors.phi_upper) {
            return Err(MispError::Validation(format!("phi {} outside prior bounds", self.phi)));
        }
        if self.gamma.iter().chain(&self.alpha).chain(&self.log_z).any(|v| !v.is_finite()) {
            return Err(MispError::Validation("non-finite location parameter".into()));
        }
        Ok(())
    }
}

/// Scaled logistic link `ρ_I e^w / (1 + e^w)`, kept inside the open
/// interval `(0, ρ_I)` where it would otherwise round onto an end point.
pub fn link(w: f64, rho_ice: f64) -> f64 {
    let mu = if w >= 0.0 {
        rho_ice / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        rho_ice * e / (1.0 + e)
    };
    mu.clamp(f64::MIN_POSITIVE, rho_ice.next_down())
}

/// `w(s, x) = α(s) + Σ_j K_j(x) exp(log_z[s, j])` from a precomputed row.
pub fn latent_w(state: &ParameterState, site: usize, row: &[f64]) -> f64 {
    let j_count = state.n_basis();
    let base = site * j_count;
    state.alpha[site]
        + row.iter().zip(&state.log_z[base..base + j_count]).map(|(k, lz)| k * lz.exp()).sum::<f64>()
}

/// Mean density at site index `site` and depth `x`.
pub fn mean_density(state: &ParameterState, cfg: &ModelConfig, site: usize, x: f64) -> Result<f64> {
    let basis = Basis::new(&cfg.basis)?;
    let row = basis.design_row(x)?;
    if site >= state.n_sites() {
        return Err(MispError::Index(format!("site {site} out of range")));
    }
    Ok(link(latent_w(state, site, &row), cfg.rho_ice))
}

/// Measurement variance for a core's weighting context.
pub fn obs_variance(
    state: &ParameterState,
    cfg: &ModelConfig,
    campaigns: &[String],
    ctx: &WeightContext,
) -> Result<f64> {
    let weight = ctx.n as f64 / ctx.x_max;
    Ok(match cfg.variance_mode {
        VarianceMode::Homoscedastic => state.tau2[0],
        VarianceMode::FixedWeighted => state.tau2[0] * weight,
        VarianceMode::FixedWeightedCampaign => {
            let idx = campaigns.iter().position(|c| *c == ctx.campaign).ok_or_else(|| {
                MispError::Config(format!("campaign {} has no variance parameter", ctx.campaign))
            })?;
            state.tau2[idx] * weight
        }
    })
}

/// Prior covariance of `w(s, x)` and `w(s', x')` for fixed hyperparameters,
/// given the correlation `corr` between the two sites and the design rows at
/// the two depths:
/// `σ²_0 ρ + Σ_j K_j(x) K_j(x') e^{2γ_j + σ²_j} (e^{σ²_j ρ} - 1)`.
pub fn prior_w_covariance(gamma: &[f64], sigma2: &[f64], corr: f64, row_x: &[f64], row_xp: &[f64]) -> f64 {
    let mut c = sigma2[0] * corr;
    for j in 0..row_x.len() {
        let (g, s2) = (gamma[j + 1], sigma2[j + 1]);
        c += row_x[j] * row_xp[j] * (2.0 * g + s2).exp() * ((s2 * corr).exp() - 1.0);
    }
    c
}

/// Prior mean of `w(s, x)`: `γ_0 + Σ_j K_j(x) e^{γ_j + σ²_j / 2}`.
pub fn prior_w_mean(gamma: &[f64], sigma2: &[f64], row: &[f64]) -> f64 {
    gamma[0]
        + row.iter().enumerate().map(|(j, k)| k * (gamma[j + 1] + 0.5 * sigma2[j + 1]).exp()).sum::<f64>()
}
