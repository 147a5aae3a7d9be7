//! TOML run configuration. Every section and key is optional; omitted values
//! take the final-model defaults. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BasisSpec, KernelFamily, KernelSpec, KnotConfig};
use crate::geodesy::{CovarianceSpec, DistanceMetric, SiteLocation, Smoothness};
use crate::inference::SamplerConfig;
use crate::model::{
    DataModel, GammaPrior, InvGamma, ModelConfig, PriorSpec, VarianceMode, WeightContext, RHO_ICE,
};
use crate::predict::{PredictionMode, Target};
use crate::simulate::{DepthLayout, Hyperparameters, Region, SimulationSpec, SiteLayout, Truth};
use crate::{MispError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub rho_ice: f64,
    pub variance_mode: VarianceMode,
    pub data_model: DataModel,
    /// Cores closer than this share a site; 0 means exact coordinate match.
    pub site_tolerance_km: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            rho_ice: RHO_ICE,
            variance_mode: VarianceMode::default(),
            data_model: DataModel::default(),
            site_tolerance_km: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub interior_knots: Vec<f64>,
    pub order: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub family: KernelFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymmetry: Option<f64>,
}

impl Default for BasisSection {
    fn default() -> Self {
        let k = KnotConfig::final_model();
        BasisSection {
            interior_knots: k.interior_knots,
            order: k.order,
            x_min: k.x_min,
            x_max: k.x_max,
            family: KernelFamily::MSpline,
            bandwidth: None,
            asymmetry: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceSection {
    pub distance: DistanceMetric,
    pub smoothness: Smoothness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub gamma0_mean: f64,
    pub gamma0_sd: f64,
    pub gammaj_mean: f64,
    pub gammaj_sd: f64,
    pub sigma2_0_shape: f64,
    pub sigma2_0_scale: f64,
    pub sigma2_j_shape: f64,
    pub sigma2_j_scale: f64,
    pub phi_lower: f64,
    pub phi_upper: f64,
    pub tau2_shape: f64,
    pub tau2_rate: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection::from(&PriorSpec::default())
    }
}

impl From<&PriorSpec> for PriorSection {
    fn from(p: &PriorSpec) -> Self {
        PriorSection {
            gamma0_mean: p.gamma0_mean,
            gamma0_sd: p.gamma0_sd,
            gammaj_mean: p.gammaj_mean,
            gammaj_sd: p.gammaj_sd,
            sigma2_0_shape: p.sigma2_0.shape,
            sigma2_0_scale: p.sigma2_0.scale,
            sigma2_j_shape: p.sigma2_j.shape,
            sigma2_j_scale: p.sigma2_j.scale,
            phi_lower: p.phi_lower,
            phi_upper: p.phi_upper,
            tau2_shape: p.tau2.shape,
            tau2_rate: p.tau2.rate,
        }
    }
}

impl PriorSection {
    pub fn to_spec(&self) -> PriorSpec {
        PriorSpec {
            gamma0_mean: self.gamma0_mean,
            gamma0_sd: self.gamma0_sd,
            gammaj_mean: self.gammaj_mean,
            gammaj_sd: self.gammaj_sd,
            sigma2_0: InvGamma { shape: self.sigma2_0_shape, scale: self.sigma2_0_scale },
            sigma2_j: InvGamma { shape: self.sigma2_j_shape, scale: self.sigma2_j_scale },
            phi_lower: self.phi_lower,
            phi_upper: self.phi_upper,
            tau2: GammaPrior { shape: self.tau2_shape, rate: self.tau2_rate },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub n_folds: usize,
    /// Seeds the fold permutation.
    pub seed: u64,
    pub label: String,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { n_folds: 19, seed: 1, label: "model".into() }
    }
}

/// A prediction location; weighting fields are needed for noisy predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub label: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
}

impl TargetEntry {
    pub fn to_target(&self) -> Result<Target> {
        let weighting = match (&self.campaign, self.n, self.x_max) {
            (Some(c), Some(n), Some(x)) => Some(WeightContext { campaign: c.clone(), n, x_max: x }),
            (None, None, None) => None,
            _ => {
                return Err(MispError::Config(format!(
                    "target {}: campaign, n and x_max must be given together",
                    self.label
                )))
            }
        };
        Ok(Target { label: self.label.clone(), location: SiteLocation::new(self.lat, self.lon)?, weighting })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Explicit depth grid; when empty, `x_min..=x_max` in steps of `depth_step`.
    pub depths: Vec<f64>,
    pub depth_step: f64,
    pub mode: PredictionMode,
    pub thin: usize,
    pub targets: Vec<TargetEntry>,
    /// Fitted sites whose curves are extended over the depth grid.
    pub extend_sites: Vec<String>,
}

impl Default for PredictSection {
    fn default() -> Self {
        PredictSection {
            depths: Vec::new(),
            depth_step: 1.0,
            mode: PredictionMode::MeanCurve,
            thin: 1,
            targets: Vec::new(),
            extend_sites: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_sites: usize,
    pub cores_per_site: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    pub width_km: f64,
    pub depth_count: usize,
    pub depth_start: f64,
    pub depth_spacing: f64,
    pub campaigns: Vec<String>,
    /// Fixed hyperparameters; when all four are absent, they come from the prior.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau2: Option<Vec<f64>>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let r = Region::default();
        SimulateSection {
            n_sites: 8,
            cores_per_site: 1,
            center_lat: r.center_lat,
            center_lon: r.center_lon,
            width_km: r.width_km,
            depth_count: 30,
            depth_start: 1.0,
            depth_spacing: 1.0,
            campaigns: vec!["EAP".into()],
            gamma: None,
            sigma2: None,
            phi: None,
            tau2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub basis: BasisSection,
    pub covariance: CovarianceSection,
    pub priors: PriorSection,
    pub sampler: SamplerConfig,
    pub cv: CvSection,
    pub predict: PredictSection,
    pub simulate: SimulateSection,
}

impl RunConfig {
    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| MispError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MispError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.sampler.validate()?;
        if !(self.model.site_tolerance_km >= 0.0) {
            return Err(MispError::Config("site_tolerance_km must be ≥ 0".into()));
        }
        if self.predict.thin == 0 {
            return Err(MispError::Config("predict.thin must be ≥ 1".into()));
        }
        if self.predict.depths.is_empty() && !(self.predict.depth_step > 0.0) {
            return Err(MispError::Config("predict.depth_step must be positive".into()));
        }
        for t in &self.predict.targets {
            t.to_target()?;
        }
        self.simulation_spec(0)?.validate(&self.model_config())?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let b = &self.basis;
        ModelConfig {
            rho_ice: self.model.rho_ice,
            basis: BasisSpec {
                knots: KnotConfig {
                    interior_knots: b.interior_knots.clone(),
                    order: b.order,
                    x_min: b.x_min,
                    x_max: b.x_max,
                },
                kernel: KernelSpec { family: b.family, bandwidth: b.bandwidth, asymmetry: b.asymmetry },
            },
            covariance: CovarianceSpec {
                distance: self.covariance.distance,
                smoothness: self.covariance.smoothness,
            },
            variance_mode: self.model.variance_mode,
            data_model: self.model.data_model,
            priors: self.priors.to_spec(),
        }
    }

    /// Sampler settings with an optional seed override.
    pub fn sampler_config(&self, seed: Option<u64>) -> SamplerConfig {
        SamplerConfig { seed: seed.unwrap_or(self.sampler.seed), ..self.sampler.clone() }
    }

    pub fn prediction_depths(&self) -> Vec<f64> {
        if !self.predict.depths.is_empty() {
            return self.predict.depths.clone();
        }
        let (lo, hi, step) = (self.basis.x_min, self.basis.x_max, self.predict.depth_step);
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let mut d: Vec<f64> = (0..=n).map(|i| lo + step * i as f64).collect();
        if *d.last().unwrap() < hi {
            d.push(hi);
        }
        d
    }

    pub fn prediction_targets(&self) -> Result<Vec<Target>> {
        self.predict.targets.iter().map(TargetEntry::to_target).collect()
    }

    pub fn simulation_spec(&self, seed: u64) -> Result<SimulationSpec> {
        let s = &self.simulate;
        let truth = match (&s.gamma, &s.sigma2, s.phi, &s.tau2) {
            (None, None, None, None) => Truth::PriorDraw,
            (Some(g), Some(v), Some(p), Some(t)) => {
                Truth::Hyper(Hyperparameters { gamma: g.clone(), sigma2: v.clone(), phi: p, tau2: t.clone() })
            }
            _ => {
                return Err(MispError::Config(
                    "simulate: gamma, sigma2, phi and tau2 must be given together".into(),
                ))
            }
        };
        Ok(SimulationSpec {
            sites: SiteLayout::Random {
                n_sites: s.n_sites,
                region: Region { center_lat: s.center_lat, center_lon: s.center_lon, width_km: s.width_km },
            },
            cores_per_site: s.cores_per_site,
            depths: DepthLayout::Even {
                count: s.depth_count,
                start: s.depth_start,
                spacing: s.depth_spacing,
            },
            campaigns: s.campaigns.clone(),
            truth,
            seed,
        })
    }
}
