//! Synthetic data: prior draws of every parameter and datasets generated from
//! a known truth.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::geodesy::{self, SiteLocation, EARTH_RADIUS_KM};
use crate::model::{
    latent_w, link, CoreRecord, DataModel, Dataset, ModelConfig, ParameterState, PriorSpec, VarianceMode,
};
use crate::special::t4_cdf;
use crate::{rng, MispError, Result};

/// Square region of the south polar stereographic plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub center_lat: f64,
    pub center_lon: f64,
    pub width_km: f64,
}

impl Default for Region {
    fn default() -> Self {
        Region { center_lat: -79.0, center_lon: -112.0, width_km: 1500.0 }
    }
}

fn stereo_forward(loc: &SiteLocation) -> (f64, f64) {
    let lat = loc.lat.to_radians();
    let lon = loc.lon.to_radians();
    let rho = 2.0 * EARTH_RADIUS_KM * (std::f64::consts::FRAC_PI_4 + lat / 2.0).tan();
    (rho * lon.sin(), rho * lon.cos())
}

fn stereo_inverse(x: f64, y: f64) -> SiteLocation {
    let rho = x.hypot(y);
    let lat = 2.0 * (rho / (2.0 * EARTH_RADIUS_KM)).atan() - std::f64::consts::FRAC_PI_2;
    let mut lon = x.atan2(y).to_degrees();
    if lon <= -180.0 {
        lon += 360.0;
    }
    SiteLocation { lat: lat.to_degrees(), lon }
}

impl Region {
    /// `n` locations uniform over the square.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<SiteLocation> {
        let (cx, cy) = stereo_forward(&SiteLocation { lat: self.center_lat, lon: self.center_lon });
        let half = self.width_km / 2.0;
        (0..n)
            .map(|_| {
                let dx = rng.random_range(-half..half);
                let dy = rng.random_range(-half..half);
                stereo_inverse(cx + dx, cy + dy)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SiteLayout {
    Explicit(Vec<SiteLocation>),
    Random { n_sites: usize, region: Region },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DepthLayout {
    /// `count` depths `start, start + spacing, …`.
    Even {
        count: usize,
        start: f64,
        spacing: f64,
    },
    Explicit(Vec<f64>),
}

impl DepthLayout {
    pub fn depths(&self) -> Vec<f64> {
        match self {
            DepthLayout::Even { count, start, spacing } => {
                (0..*count).map(|i| start + spacing * i as f64).collect()
            }
            DepthLayout::Explicit(d) => d.clone(),
        }
    }
}

/// Hyperparameters only; site fields are drawn from their Gaussian processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub gamma: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub phi: f64,
    pub tau2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Truth {
    PriorDraw,
    Supplied(ParameterState),
    Hyper(Hyperparameters),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub sites: SiteLayout,
    pub cores_per_site: usize,
    pub depths: DepthLayout,
    /// Assigned to sites cyclically.
    pub campaigns: Vec<String>,
    pub truth: Truth,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let n_sites = match &self.sites {
            SiteLayout::Explicit(s) => s.len(),
            SiteLayout::Random { n_sites, .. } => *n_sites,
        };
        if n_sites == 0 || self.cores_per_site == 0 {
            return Err(MispError::Config("simulation needs at least one site and core".into()));
        }
        if self.campaigns.is_empty() {
            return Err(MispError::Config("simulation needs at least one campaign".into()));
        }
        let depths = self.depths.depths();
        if depths.is_empty() {
            return Err(MispError::Config("simulation needs at least one depth".into()));
        }
        let (lo, hi) = (cfg.basis.knots.x_min, cfg.basis.knots.x_max);
        if let Some(x) = depths.iter().find(|&&x| !(x >= lo && x <= hi) || x <= 0.0) {
            return Err(MispError::Config(format!(
                "simulated depth {x} must lie in (0, {hi}] within [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Draw γ, σ², φ and τ² from their priors.
pub fn draw_hyperparameters<R: Rng>(
    priors: &PriorSpec,
    n_basis: usize,
    n_tau: usize,
    rng: &mut R,
) -> Hyperparameters {
    let mut gamma = Vec::with_capacity(n_basis + 1);
    gamma.push(Normal::new(priors.gamma0_mean, priors.gamma0_sd).unwrap().sample(rng));
    let gj = Normal::new(priors.gammaj_mean, priors.gammaj_sd).unwrap();
    gamma.extend((0..n_basis).map(|_| gj.sample(rng)));
    let inv_gamma = |shape: f64, scale: f64, rng: &mut R| -> f64 {
        1.0 / Gamma::new(shape, 1.0 / scale).unwrap().sample(rng)
    };
    let mut sigma2 = vec![inv_gamma(priors.sigma2_0.shape, priors.sigma2_0.scale, rng)];
    sigma2.extend((0..n_basis).map(|_| inv_gamma(priors.sigma2_j.shape, priors.sigma2_j.scale, rng)));
    let phi = loop {
        let p = rng.random_range(priors.phi_lower..priors.phi_upper);
        if p > priors.phi_lower {
            break p;
        }
    };
    let tau = Gamma::new(priors.tau2.shape, 1.0 / priors.tau2.rate).unwrap();
    let tau2 = (0..n_tau).map(|_| tau.sample(rng)).collect();
    Hyperparameters { gamma, sigma2, phi, tau2 }
}

/// Draw `α` and every `log_z_j` over `sites` from their Gaussian processes.
pub fn draw_fields<R: Rng>(
    cfg: &ModelConfig,
    sites: &[SiteLocation],
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<ParameterState> {
    let n_basis = cfg.n_basis();
    if hyper.gamma.len() != n_basis + 1 || hyper.sigma2.len() != n_basis + 1 {
        return Err(MispError::Input(format!("hyperparameters must have length J + 1 = {}", n_basis + 1)));
    }
    let dist = cfg.covariance.distance_matrix(sites);
    let corr = geodesy::corr_matrix(cfg.covariance.smoothness, hyper.phi, &dist);
    let (chol, _) = geodesy::factor_with_jitter(&corr, &dist)?;
    let l = chol.l();
    let n = sites.len();
    let mut draw_field = |mean: f64, sigma2: f64| -> Vec<f64> {
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let v = &l * z;
        v.iter().map(|e| mean + sigma2.sqrt() * e).collect()
    };
    let alpha = draw_field(hyper.gamma[0], hyper.sigma2[0]);
    let columns: Vec<Vec<f64>> = (1..=n_basis).map(|k| draw_field(hyper.gamma[k], hyper.sigma2[k])).collect();
    let mut log_z = vec![0.0; n * n_basis];
    for (j, col) in columns.iter().enumerate() {
        for s in 0..n {
            log_z[s * n_basis + j] = col[s];
        }
    }
    Ok(ParameterState {
        gamma: hyper.gamma.clone(),
        sigma2: hyper.sigma2.clone(),
        phi: hyper.phi,
        tau2: hyper.tau2.clone(),
        alpha,
        log_z,
    })
}

/// A full prior draw: hyperparameters, then the site fields given them.
pub fn draw_prior_state(
    cfg: &ModelConfig,
    sites: &[SiteLocation],
    n_tau: usize,
    seed: u64,
) -> Result<ParameterState> {
    let mut r = rng::stream(seed, "prior-state", 0);
    draw_prior_state_rng(cfg, sites, n_tau, &mut r)
}

pub fn draw_prior_state_rng<R: Rng>(
    cfg: &ModelConfig,
    sites: &[SiteLocation],
    n_tau: usize,
    rng: &mut R,
) -> Result<ParameterState> {
    let hyper = draw_hyperparameters(&cfg.priors, cfg.n_basis(), n_tau, rng);
    draw_fields(cfg, sites, &hyper, rng)
}

/// One measurement from the configured data model around `mu` with variance `v`.
pub fn draw_observation<R: Rng>(data_model: DataModel, mu: f64, v: f64, rng: &mut R) -> f64 {
    let sd = v.sqrt();
    match data_model {
        DataModel::TruncNormal => {
            let a = -mu / sd;
            if a < 0.5 {
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z > a {
                        return mu + sd * z;
                    }
                }
            }
            // exponential proposal for a far lower bound
            let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
            let exp = Exp::new(lambda).unwrap();
            loop {
                let z = a + exp.sample(rng);
                let u: f64 = rng.random();
                if u <= (-0.5 * (z - lambda).powi(2)).exp() {
                    return mu + sd * z;
                }
            }
        }
        DataModel::TruncT4 => {
            let a = -mu / sd;
            let upper_mass = 1.0 - t4_cdf(a);
            if upper_mass > 0.05 {
                let t4 = StudentT::new(4.0).unwrap();
                loop {
                    let z: f64 = t4.sample(rng);
                    if z > a {
                        return mu + sd * z;
                    }
                }
            }
            // invert the upper-tail survival function by bisection
            let target = rng.random::<f64>() * upper_mass;
            let surv = |t: f64| 1.0 - t4_cdf(t);
            let (mut lo, mut hi) = (a, a.abs().max(1.0) * 2.0);
            while surv(hi) > target {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if surv(mid) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            mu + sd * 0.5 * (lo + hi)
        }
    }
}

fn site_locations<R: Rng>(layout: &SiteLayout, rng: &mut R) -> Vec<SiteLocation> {
    match layout {
        SiteLayout::Explicit(s) => s.clone(),
        SiteLayout::Random { n_sites, region } => region.sample(*n_sites, rng),
    }
}

/// Generate a dataset and return it with the state that generated it.
///
/// Campaign indices of `tau2` follow the sorted campaign names, matching
/// [`Dataset::campaigns`].
pub fn generate_dataset(spec: &SimulationSpec, cfg: &ModelConfig) -> Result<(Dataset, ParameterState)> {
    cfg.validate()?;
    spec.validate(cfg)?;
    let mut r = rng::stream(spec.seed, "simulate", 0);
    let sites = site_locations(&spec.sites, &mut r);
    let used: Vec<String> = {
        let mut u: Vec<String> =
            (0..sites.len()).map(|i| spec.campaigns[i % spec.campaigns.len()].clone()).collect();
        u.sort();
        u.dedup();
        u
    };
    let n_tau = cfg.n_tau(used.len());
    let truth = match &spec.truth {
        Truth::PriorDraw => draw_prior_state_rng(cfg, &sites, n_tau, &mut r)?,
        Truth::Supplied(state) => state.clone(),
        Truth::Hyper(h) => draw_fields(cfg, &sites, h, &mut r)?,
    };
    truth.check_dims(cfg.n_basis(), sites.len(), n_tau)?;

    let basis = Basis::new(&cfg.basis)?;
    let depths = spec.depths.depths();
    let x_max = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rows: Vec<Vec<f64>> = depths.iter().map(|&x| basis.design_row(x)).collect::<Result<_>>()?;
    let width = sites.len().to_string().len().max(2);
    let mut cores = Vec::new();
    for (s, loc) in sites.iter().enumerate() {
        let campaign = spec.campaigns[s % spec.campaigns.len()].clone();
        let tau = match cfg.variance_mode {
            VarianceMode::FixedWeightedCampaign => used.iter().position(|c| *c == campaign).unwrap(),
            _ => 0,
        };
        let weight = match cfg.variance_mode {
            VarianceMode::Homoscedastic => 1.0,
            _ => depths.len() as f64 / x_max,
        };
        let v = truth.tau2[tau] * weight;
        for rep in 0..spec.cores_per_site {
            let densities: Vec<f64> = rows
                .iter()
                .map(|row| {
                    let mu = link(latent_w(&truth, s, row), cfg.rho_ice);
                    // keep draws inside (0, ρ_I) so the file stays ingestible
                    loop {
                        let y = draw_observation(cfg.data_model, mu, v, &mut r);
                        if y < cfg.rho_ice {
                            break y;
                        }
                    }
                })
                .collect();
            cores.push(CoreRecord {
                site_id: format!("S{:0width$}", s + 1, width = width),
                core_rep: (rep + 1).to_string(),
                location: *loc,
                campaign: campaign.clone(),
                depths: depths.clone(),
                densities,
                x_max,
            });
        }
    }
    let data = Dataset::from_cores_with_tolerance(cores, 0.0, cfg.rho_ice)?;
    Ok((data, truth))
}

/// Which prior the prior-predictive curves come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorPanel {
    /// The configured priors.
    Proposed,
    /// Zero-mean γ priors, everything else unchanged.
    ZeroMean,
}

/// Prior-predictive mean curves at a single site over `depths`.
pub fn prior_predictive_curves(
    cfg: &ModelConfig,
    panel: PriorPanel,
    n_draws: usize,
    depths: &[f64],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut cfg = cfg.clone();
    if panel == PriorPanel::ZeroMean {
        cfg.priors = PriorSpec { gamma0_mean: 0.0, gammaj_mean: 0.0, ..cfg.priors };
    }
    let basis = Basis::new(&cfg.basis)?;
    let rows: Vec<Vec<f64>> = depths.iter().map(|&x| basis.design_row(x)).collect::<Result<_>>()?;
    let site = [SiteLocation { lat: -80.0, lon: -110.0 }];
    let tag = match panel {
        PriorPanel::Proposed => "prior-curves",
        PriorPanel::ZeroMean => "prior-curves-zero",
    };
    let mut r: ChaCha8Rng = rng::stream(seed, tag, 0);
    (0..n_draws)
        .map(|_| {
            let state = draw_prior_state_rng(&cfg, &site, 1, &mut r)?;
            Ok(rows.iter().map(|row| link(latent_w(&state, 0, row), cfg.rho_ice)).collect())
        })
        .collect()
}
