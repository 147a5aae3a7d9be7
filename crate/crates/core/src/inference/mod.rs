//! Posterior sampling and convergence diagnostics.
//!
//! Chains run static HMC with a fixed number of leapfrog steps. Warmup tunes
//! the step size by dual averaging and the diagonal mass matrix from position
//! variances:
//!
//! | warmup iterations        | step size      | mass matrix                  |
//! |--------------------------|----------------|------------------------------|
//! | first 75                 | adapt          | identity                     |
//! | windows of 25, 50, 100 … | adapt (reset)  | collect; set at window end   |
//! | last 50                  | adapt (reset)  | fixed                        |
//!
//! The last window stretches to meet the final buffer; warmups shorter than
//! 150 iterations split 15 % / 75 % / 10 % instead.
//!
//! Sampling then uses the averaged step size, jittered by ±10 % per transition,
//! and the final mass matrix.

mod diagnostics;
mod hmc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{
    effective_sample_size, effective_sample_size_raw, quantile, split_rhat, summarize, SummaryRow,
};
pub use hmc::{kinetic, leapfrog, LogDensity, Trajectory, MAX_ENERGY_ERROR};

use crate::model::{ParameterState, SnowModel};
use crate::{rng, MispError, Result};

/// Relative half-width of the uniform step-size jitter after warmup.
pub const STEP_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitMode {
    /// Each chain starts from its own draw from the prior.
    #[default]
    PriorDraw,
    /// Every chain starts from a state handed to [`fit_with_init`].
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    /// Retained draws per chain.
    pub n_keep: usize,
    pub leapfrog_steps: usize,
    pub target_accept: f64,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_warmup: 5000,
            n_keep: 12_500,
            leapfrog_steps: 32,
            target_accept: 0.8,
            seed: 20_210_401,
            init: InitMode::PriorDraw,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_keep == 0 || self.leapfrog_steps == 0 {
            return Err(MispError::Config("n_chains, n_keep and leapfrog_steps must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(MispError::Config(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// Per-chain tuning and acceptance statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
    /// Mean Metropolis acceptance probability after warmup.
    pub accept_rate: f64,
    pub n_divergent: usize,
    pub warmup_divergent: usize,
}

/// Retained draws of one chain on the sampler's own (unconstrained) scale.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub draws: Vec<Vec<f64>>,
    pub stats: ChainStats,
}

/// Output of [`sample`].
#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub chains: Vec<ChainDraws>,
    pub warnings: Vec<String>,
}

impl SamplerRun {
    /// Per-chain series of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.draws.iter().map(|d| d[i]).collect()).collect()
    }
}

/// Run `cfg.n_chains` independent chains. `init(chain, rng)` provides each
/// chain's starting point.
pub fn sample<T, F>(target: &T, cfg: &SamplerConfig, init: F) -> Result<SamplerRun>
where
    T: LogDensity + ?Sized,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    cfg.validate()?;
    let chains: Vec<Result<ChainDraws>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(cfg.seed, "chain", c as u64);
            let start = init(c, &mut rng)?;
            run_chain(target, cfg, start, &mut rng).map_err(|e| match e {
                MispError::Sampler(msg) => MispError::Sampler(format!("chain {c}: {msg}")),
                other => other,
            })
        })
        .collect();
    let chains = chains.into_iter().collect::<Result<Vec<_>>>()?;
    let mut warnings = Vec::new();
    for (c, ch) in chains.iter().enumerate() {
        let frac = ch.stats.n_divergent as f64 / cfg.n_keep as f64;
        if frac > 0.1 {
            warnings.push(format!("chain {c}: {:.1}% of post-warmup transitions diverged", 100.0 * frac));
        }
    }
    Ok(SamplerRun { chains, warnings })
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    start: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<ChainDraws> {
    let dim = target.dim();
    if start.len() != dim {
        return Err(MispError::Input(format!(
            "initial point has length {}, target dimension is {dim}",
            start.len()
        )));
    }
    let mut q = start;
    let mut grad = vec![0.0; dim];
    let mut logp = target.log_density_and_grad(&q, &mut grad)?;
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(MispError::Sampler("log density is not finite at the initial point".into()));
    }
    let mut inv_mass = vec![1.0; dim];
    let mut p = vec![0.0; dim];
    let steps = cfg.leapfrog_steps;

    let w = cfg.n_warmup;
    let windows = hmc::slow_windows(w);

    let mut eps = initial_eps(target, rng, &q, logp, &grad, &inv_mass);
    let mut da = hmc::DualAveraging::new(eps, cfg.target_accept);
    let mut window = hmc::VarianceWindow::new(dim);
    let mut warmup_divergent = 0;
    for it in 0..w {
        let t = hmc::transition(target, rng, &mut q, &mut logp, &mut grad, eps, steps, &inv_mass, &mut p);
        if t.divergent {
            warmup_divergent += 1;
        }
        da.update(t.accept_prob);
        eps = da.current();
        if windows.iter().any(|&(a, b)| it >= a && it < b) {
            window.push(&q);
        }
        if windows.iter().any(|&(_, b)| it + 1 == b) {
            if let Some(var) = window.regularized() {
                inv_mass = var;
            }
            window = hmc::VarianceWindow::new(dim);
            eps = initial_eps(target, rng, &q, logp, &grad, &inv_mass);
            da = hmc::DualAveraging::new(eps, cfg.target_accept);
        }
    }
    if w > 0 {
        if warmup_divergent == w {
            return Err(MispError::Sampler(format!(
                "every warmup transition diverged; final step size {eps:.3e}, \
                 log density {logp:.6e}, position {:?}",
                q
            )));
        }
        eps = da.final_step();
    }

    let mut draws = Vec::with_capacity(cfg.n_keep);
    let mut accept_sum = 0.0;
    let mut n_divergent = 0;
    for _ in 0..cfg.n_keep {
        // jitter breaks resonance of the fixed trajectory length
        let e = eps * rng.random_range(1.0 - STEP_JITTER..1.0 + STEP_JITTER);
        let t = hmc::transition(target, rng, &mut q, &mut logp, &mut grad, e, steps, &inv_mass, &mut p);
        accept_sum += t.accept_prob;
        if t.divergent {
            n_divergent += 1;
        }
        draws.push(q.clone());
    }
    Ok(ChainDraws {
        draws,
        stats: ChainStats {
            step_size: eps,
            inv_mass,
            accept_rate: accept_sum / cfg.n_keep as f64,
            n_divergent,
            warmup_divergent,
        },
    })
}

fn initial_eps<T: LogDensity + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    q: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
) -> f64 {
    hmc::initial_step_size(target, rng, q, logp, grad, inv_mass)
}

/// Posterior draws of the snow model on the constrained scale.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub param_names: Vec<String>,
    pub chains: Vec<Vec<ParameterState>>,
    pub stats: Vec<ChainStats>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// All retained draws, chain by chain.
    pub fn draws(&self) -> impl Iterator<Item = &ParameterState> {
        self.chains.iter().flatten()
    }

    /// Every `thin`-th draw of the pooled sequence.
    pub fn thinned(&self, thin: usize) -> Vec<&ParameterState> {
        self.draws().step_by(thin.max(1)).collect()
    }

    /// `series[param][chain][draw]` of constrained values.
    pub fn series(&self, model: &SnowModel) -> Vec<Vec<Vec<f64>>> {
        let flat: Vec<Vec<Vec<f64>>> =
            self.chains.iter().map(|c| c.iter().map(|s| model.flatten(s)).collect()).collect();
        (0..self.param_names.len())
            .map(|i| flat.iter().map(|c| c.iter().map(|d| d[i]).collect()).collect())
            .collect()
    }

    /// Mean, sd, 2.5 % / 97.5 % quantiles, R-hat and ESS per parameter.
    pub fn summary(&self, model: &SnowModel) -> Vec<SummaryRow> {
        self.series(model)
            .iter()
            .zip(&self.param_names)
            .map(|(chains, name)| summarize(name, chains))
            .collect()
    }
}

/// Fit the snow model, initialising each chain from a prior draw.
pub fn fit(model: &SnowModel, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    if cfg.init == InitMode::Supplied {
        return Err(MispError::Config("init = Supplied requires fit_with_init".into()));
    }
    fit_inner(model, cfg, None)
}

/// Fit the snow model with every chain starting at `init`.
pub fn fit_with_init(
    model: &SnowModel,
    cfg: &SamplerConfig,
    init: &ParameterState,
) -> Result<PosteriorSamples> {
    fit_inner(model, cfg, Some(init))
}

fn fit_inner(
    model: &SnowModel,
    cfg: &SamplerConfig,
    init: Option<&ParameterState>,
) -> Result<PosteriorSamples> {
    let supplied = init.map(|s| model.unconstrain(s)).transpose()?;
    let run = sample(model, cfg, |_, rng| match &supplied {
        Some(u) => Ok(u.clone()),
        None => prior_start(model, rng),
    })?;
    let chains = run.chains.iter().map(|c| c.draws.iter().map(|u| model.constrain(u)).collect()).collect();
    Ok(PosteriorSamples {
        param_names: model.param_names(),
        chains,
        stats: run.chains.into_iter().map(|c| c.stats).collect(),
        warnings: run.warnings,
    })
}

/// A prior draw with a finite posterior density; retries a few times before
/// giving up.
fn prior_start(model: &SnowModel, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let sites = model.data().site_locations();
    let mut grad = vec![0.0; model.layout().dim()];
    let mut last_err = None;
    for _ in 0..100 {
        let seed: u64 = rng.random();
        let state = crate::simulate::draw_prior_state(model.config(), &sites, model.layout().n_tau, seed)?;
        let u = match model.unconstrain(&state) {
            Ok(u) => u,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        match model.log_posterior_unconstrained(&u, &mut grad) {
            Ok(lp) if lp.is_finite() && grad.iter().all(|g| g.is_finite()) => return Ok(u),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err
        .unwrap_or_else(|| MispError::Sampler("no prior draw gave a finite posterior density".into())))
}
