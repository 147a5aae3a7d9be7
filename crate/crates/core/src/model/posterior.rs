//! Joint log-posterior over the unconstrained parameter vector.
//!
//! Layout of `u`:
//!
//! | block   | length       | transform                                  |
//! |---------|--------------|--------------------------------------------|
//! | γ       | J + 1        | identity                                   |
//! | log σ²  | J + 1        | `σ² = exp(u)`                              |
//! | φ       | 1            | `φ = lo + (hi - lo) · logistic(u)`         |
//! | log τ²  | n_tau        | `τ² = exp(u)`                              |
//! | α       | n_sites      | identity                                   |
//! | log z   | n_sites · J  | identity, site-major                       |
//!
//! The returned density includes the log-Jacobian of every transform.

use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use super::{
    link, tn_logpdf_grad, tt4_logpdf_grad, DataModel, Dataset, ModelConfig, ParameterState, VarianceMode,
};
use crate::basis::Basis;
use crate::geodesy::CorrelationFactor;
use crate::inference::LogDensity;
use crate::{MispError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Offsets of each block in the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_basis: usize,
    pub n_sites: usize,
    pub n_tau: usize,
}

impl ParamLayout {
    pub fn gamma(&self) -> usize {
        0
    }
    pub fn log_sigma2(&self) -> usize {
        self.n_basis + 1
    }
    pub fn phi(&self) -> usize {
        2 * (self.n_basis + 1)
    }
    pub fn log_tau2(&self) -> usize {
        self.phi() + 1
    }
    pub fn alpha(&self) -> usize {
        self.log_tau2() + self.n_tau
    }
    pub fn log_z(&self) -> usize {
        self.alpha() + self.n_sites
    }
    pub fn dim(&self) -> usize {
        self.log_z() + self.n_sites * self.n_basis
    }
}

#[derive(Debug, Clone)]
struct Observation {
    site: usize,
    tau: usize,
    weight: f64,
    rho: f64,
    row_start: usize,
}

/// A model configuration bound to a dataset, with design rows and site
/// distances precomputed.
#[derive(Debug, Clone)]
pub struct SnowModel {
    cfg: ModelConfig,
    data: Dataset,
    basis: Basis,
    layout: ParamLayout,
    dist: nalgebra::DMatrix<f64>,
    obs: Vec<Observation>,
    rows: Vec<f64>,
    tau_labels: Vec<String>,
}

impl SnowModel {
    pub fn new(cfg: ModelConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.sites.is_empty() {
            return Err(MispError::Input("dataset has no sites".into()));
        }
        let basis = Basis::new(&cfg.basis)?;
        let n_basis = basis.n_basis();
        let n_tau = cfg.n_tau(data.campaigns.len());
        let layout = ParamLayout { n_basis, n_sites: data.sites.len(), n_tau };
        let dist = cfg.covariance.distance_matrix(&data.site_locations());
        let mut obs = Vec::with_capacity(data.n_measurements());
        let mut rows = Vec::with_capacity(data.n_measurements() * n_basis);
        for (ci, core) in data.cores.iter().enumerate() {
            core.validate(cfg.rho_ice)?;
            let tau = match cfg.variance_mode {
                VarianceMode::FixedWeightedCampaign => {
                    data.campaigns.iter().position(|c| *c == core.campaign).unwrap()
                }
                _ => 0,
            };
            let weight = match cfg.variance_mode {
                VarianceMode::Homoscedastic => 1.0,
                _ => core.weight(),
            };
            let mut row = vec![0.0; n_basis];
            for (&x, &rho) in core.depths.iter().zip(&core.densities) {
                basis.design_row_into(x, &mut row)?;
                obs.push(Observation { site: data.core_site[ci], tau, weight, rho, row_start: rows.len() });
                rows.extend_from_slice(&row);
            }
        }
        let tau_labels = match cfg.variance_mode {
            VarianceMode::FixedWeightedCampaign => data.campaigns.clone(),
            _ => vec!["all".to_string()],
        };
        Ok(SnowModel { cfg, data, basis, layout, dist, obs, rows, tau_labels })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    /// Labels of the τ² parameters (campaign names, or `all`).
    pub fn tau_labels(&self) -> &[String] {
        &self.tau_labels
    }

    /// Parameter names in the order of [`SnowModel::flatten`].
    pub fn param_names(&self) -> Vec<String> {
        let j = self.layout.n_basis;
        let mut names = Vec::with_capacity(self.layout.dim());
        names.extend((0..=j).map(|k| format!("gamma_{k}")));
        names.extend((0..=j).map(|k| format!("sigma2_{k}")));
        names.push("phi".into());
        names.extend(self.tau_labels.iter().map(|c| format!("tau2_{c}")));
        names.extend(self.data.sites.iter().map(|s| format!("alpha_{}", s.id)));
        for s in &self.data.sites {
            names.extend((1..=j).map(|k| format!("logz_{}_{k}", s.id)));
        }
        names
    }

    /// Constrained parameter values in [`SnowModel::param_names`] order.
    pub fn flatten(&self, state: &ParameterState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout.dim());
        v.extend_from_slice(&state.gamma);
        v.extend_from_slice(&state.sigma2);
        v.push(state.phi);
        v.extend_from_slice(&state.tau2);
        v.extend_from_slice(&state.alpha);
        v.extend_from_slice(&state.log_z);
        v
    }

    pub fn unflatten(&self, values: &[f64]) -> Result<ParameterState> {
        let l = self.layout;
        if values.len() != l.dim() {
            return Err(MispError::Input(format!(
                "expected {} parameter values, got {}",
                l.dim(),
                values.len()
            )));
        }
        Ok(ParameterState {
            gamma: values[l.gamma()..l.log_sigma2()].to_vec(),
            sigma2: values[l.log_sigma2()..l.phi()].to_vec(),
            phi: values[l.phi()],
            tau2: values[l.log_tau2()..l.alpha()].to_vec(),
            alpha: values[l.alpha()..l.log_z()].to_vec(),
            log_z: values[l.log_z()..].to_vec(),
        })
    }

    /// Map an unconstrained vector to a parameter state.
    pub fn constrain(&self, u: &[f64]) -> ParameterState {
        let l = self.layout;
        let (lo, hi) = (self.cfg.priors.phi_lower, self.cfg.priors.phi_upper);
        ParameterState {
            gamma: u[l.gamma()..l.log_sigma2()].to_vec(),
            sigma2: u[l.log_sigma2()..l.phi()].iter().map(|v| v.exp()).collect(),
            phi: lo + (hi - lo) * logistic(u[l.phi()]),
            tau2: u[l.log_tau2()..l.alpha()].iter().map(|v| v.exp()).collect(),
            alpha: u[l.alpha()..l.log_z()].to_vec(),
            log_z: u[l.log_z()..].to_vec(),
        }
    }

    pub fn unconstrain(&self, state: &ParameterState) -> Result<Vec<f64>> {
        let l = self.layout;
        state.check_dims(l.n_basis, l.n_sites, l.n_tau)?;
        state.validate(&self.cfg.priors)?;
        let (lo, hi) = (self.cfg.priors.phi_lower, self.cfg.priors.phi_upper);
        let p = (state.phi - lo) / (hi - lo);
        let mut u = Vec::with_capacity(l.dim());
        u.extend_from_slice(&state.gamma);
        u.extend(state.sigma2.iter().map(|v| v.ln()));
        u.push(p.ln() - (-p).ln_1p());
        u.extend(state.tau2.iter().map(|v| v.ln()));
        u.extend_from_slice(&state.alpha);
        u.extend_from_slice(&state.log_z);
        Ok(u)
    }

    fn check_state(&self, state: &ParameterState) -> Result<()> {
        let l = self.layout;
        state.check_dims(l.n_basis, l.n_sites, l.n_tau)
    }

    /// Mean density of a fitted site at depth `x`.
    pub fn mean_density(&self, state: &ParameterState, site: usize, x: f64) -> Result<f64> {
        self.check_state(state)?;
        let row = self.basis.design_row(x)?;
        if site >= self.layout.n_sites {
            return Err(MispError::Index(format!("site {site} out of range")));
        }
        Ok(link(super::latent_w(state, site, &row), self.cfg.rho_ice))
    }

    /// Sum of the hyperprior and Gaussian-process layer log densities.
    pub fn log_prior(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        let pr = &self.cfg.priors;
        if !(state.phi > pr.phi_lower && state.phi < pr.phi_upper) {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lp = normal_ln_pdf(state.gamma[0], pr.gamma0_mean, pr.gamma0_sd);
        lp += state.gamma[1..].iter().map(|&g| normal_ln_pdf(g, pr.gammaj_mean, pr.gammaj_sd)).sum::<f64>();
        lp += pr.sigma2_0.ln_pdf(state.sigma2[0]);
        lp += state.sigma2[1..].iter().map(|&s| pr.sigma2_j.ln_pdf(s)).sum::<f64>();
        lp -= (pr.phi_upper - pr.phi_lower).ln();
        lp += state.tau2.iter().map(|&t| pr.tau2.ln_pdf(t)).sum::<f64>();
        let factor = CorrelationFactor::new(self.cfg.covariance.smoothness, state.phi, &self.dist)?;
        for k in 0..=self.layout.n_basis {
            let field = state.field(k);
            lp += gp_layer(&factor, &field, state.gamma[k], state.sigma2[k]).0;
        }
        Ok(lp)
    }

    /// Sum of the truncated data-model log densities over every measurement.
    pub fn log_likelihood(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        let j = self.layout.n_basis;
        let mut total = 0.0;
        for o in &self.obs {
            let row = &self.rows[o.row_start..o.row_start + j];
            let mu = link(super::latent_w(state, o.site, row), self.cfg.rho_ice);
            let v = state.tau2[o.tau] * o.weight;
            total += match self.cfg.data_model {
                DataModel::TruncNormal => tn_logpdf_grad(o.rho, mu, v, 0.0).0,
                DataModel::TruncT4 => tt4_logpdf_grad(o.rho, mu, v, 0.0).0,
            };
        }
        Ok(total)
    }

    /// Log posterior plus log-Jacobian at `u`, with its gradient written into
    /// `grad`.
    pub fn log_posterior_unconstrained(&self, u: &[f64], grad: &mut [f64]) -> Result<f64> {
        let l = self.layout;
        if u.len() != l.dim() || grad.len() != l.dim() {
            return Err(MispError::Input(format!(
                "expected vectors of length {}, got {} and {}",
                l.dim(),
                u.len(),
                grad.len()
            )));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            let names = self.param_names();
            return Err(MispError::Numerical(format!(
                "non-finite unconstrained coordinate {i} ({})",
                names[i]
            )));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let pr = &self.cfg.priors;
        let nb = l.n_basis;
        let ns = l.n_sites;
        let state = self.constrain(u);

        // γ
        let mut lp = 0.0;
        for k in 0..=nb {
            let (m, sd) =
                if k == 0 { (pr.gamma0_mean, pr.gamma0_sd) } else { (pr.gammaj_mean, pr.gammaj_sd) };
            lp += normal_ln_pdf(state.gamma[k], m, sd);
            grad[l.gamma() + k] -= (state.gamma[k] - m) / (sd * sd);
        }
        // σ² on the log scale, Jacobian included
        for k in 0..=nb {
            let ig = if k == 0 { pr.sigma2_0 } else { pr.sigma2_j };
            let ls = u[l.log_sigma2() + k];
            lp += ig.shape * ig.scale.ln() - ln_gamma(ig.shape) - ig.shape * ls - ig.scale * (-ls).exp();
            grad[l.log_sigma2() + k] += -ig.shape + ig.scale * (-ls).exp();
        }
        // φ: uniform prior and scaled-logit Jacobian cancel to log s(1 - s)
        let (lo, hi) = (pr.phi_lower, pr.phi_upper);
        let pu = u[l.phi()];
        let s = logistic(pu);
        lp += log_logistic(pu) + log_logistic(-pu);
        grad[l.phi()] += 1.0 - 2.0 * s;
        let dphi_du = (hi - lo) * s * (1.0 - s);
        // τ²
        for t in 0..l.n_tau {
            let lt = u[l.log_tau2() + t];
            let g = pr.tau2;
            lp += g.shape * g.rate.ln() - ln_gamma(g.shape) + g.shape * lt - g.rate * lt.exp();
            grad[l.log_tau2() + t] += g.shape - g.rate * lt.exp();
        }

        // Gaussian-process layers share one factorised correlation matrix.
        let factor = CorrelationFactor::new(self.cfg.covariance.smoothness, state.phi, &self.dist)?;
        let mut dlp_dphi = 0.0;
        let trace_term: f64 = factor.inverse.component_mul(&factor.dcorr_dphi).sum();
        for k in 0..=nb {
            let field = state.field(k);
            let sigma2 = state.sigma2[k];
            let (layer_lp, a, quad) = gp_layer(&factor, &field, state.gamma[k], sigma2);
            lp += layer_lp;
            grad[l.gamma() + k] += a.sum() / sigma2;
            grad[l.log_sigma2() + k] += -0.5 * ns as f64 + 0.5 * quad / sigma2;
            for site in 0..ns {
                let idx = if k == 0 { l.alpha() + site } else { l.log_z() + site * nb + (k - 1) };
                grad[idx] -= a[site] / sigma2;
            }
            let da = &factor.dcorr_dphi * &a;
            dlp_dphi += -0.5 * trace_term + 0.5 * a.dot(&da) / sigma2;
        }
        grad[l.phi()] += dlp_dphi * dphi_du;

        // likelihood
        let z: Vec<f64> = state.log_z.iter().map(|v| v.exp()).collect();
        let rho_i = self.cfg.rho_ice;
        for o in &self.obs {
            let row = &self.rows[o.row_start..o.row_start + nb];
            let zs = &z[o.site * nb..(o.site + 1) * nb];
            let w = state.alpha[o.site] + row.iter().zip(zs).map(|(k, z)| k * z).sum::<f64>();
            let sig = logistic(w);
            let mu = rho_i * sig;
            let v = state.tau2[o.tau] * o.weight;
            let (llp, dmu, dv) = match self.cfg.data_model {
                DataModel::TruncNormal => tn_logpdf_grad(o.rho, mu, v, 0.0),
                DataModel::TruncT4 => tt4_logpdf_grad(o.rho, mu, v, 0.0),
            };
            lp += llp;
            let dw = dmu * rho_i * sig * (1.0 - sig);
            grad[l.alpha() + o.site] += dw;
            let base = l.log_z() + o.site * nb;
            for j in 0..nb {
                if row[j] != 0.0 {
                    grad[base + j] += dw * row[j] * zs[j];
                }
            }
            grad[l.log_tau2() + o.tau] += dv * v;
        }
        Ok(lp)
    }
}

impl LogDensity for SnowModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.log_posterior_unconstrained(position, grad)
    }
}

/// `(log N(field; γ1, σ² R), R⁻¹(field - γ1), quadratic form)`.
fn gp_layer(factor: &CorrelationFactor, field: &[f64], mean: f64, sigma2: f64) -> (f64, DVector<f64>, f64) {
    let n = field.len();
    let r = DVector::from_iterator(n, field.iter().map(|v| v - mean));
    let a = factor.chol.solve(&r);
    let quad = r.dot(&a);
    let lp = -0.5 * n as f64 * (LN_2PI + sigma2.ln()) - 0.5 * factor.log_det - 0.5 * quad / sigma2;
    (lp, a, quad)
}

fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(logistic(x))` without overflow.
fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
