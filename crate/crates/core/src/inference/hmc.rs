//! Static-trajectory Hamiltonian Monte Carlo with a diagonal mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::Result;

/// A differentiable log density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `position`; the gradient is written into `grad`.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Outcome of one leapfrog trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    Completed,
    /// A non-finite or failed density evaluation stopped the integration.
    Divergent,
}

/// `n_steps` leapfrog steps of size `eps` under kinetic energy
/// `½ Σ inv_mass_i p_i²`. On entry `grad` and `logp` hold the gradient and log
/// density at `q`; on exit they are updated to the final position.
#[allow(clippy::too_many_arguments)]
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    logp: &mut f64,
    eps: f64,
    n_steps: usize,
    inv_mass: &[f64],
) -> Trajectory {
    for _ in 0..n_steps {
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
        for i in 0..q.len() {
            q[i] += eps * inv_mass[i] * p[i];
        }
        match target.log_density_and_grad(q, grad) {
            Ok(lp) if lp.is_finite() && grad.iter().all(|g| g.is_finite()) => *logp = lp,
            _ => return Trajectory::Divergent,
        }
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
    }
    Trajectory::Completed
}

pub fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

pub(crate) fn draw_momentum<R: Rng>(rng: &mut R, inv_mass: &[f64], p: &mut [f64]) {
    for (pi, m) in p.iter_mut().zip(inv_mass) {
        let z: f64 = rng.sample(StandardNormal);
        *pi = z / m.sqrt();
    }
}

/// Energy error beyond which a transition counts as divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Result of one Metropolis-corrected HMC transition.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Transition {
    pub accept_prob: f64,
    pub divergent: bool,
}

/// One HMC transition from `(q, logp, grad)`, updating them in place when the
/// proposal is accepted.
#[allow(clippy::too_many_arguments)]
pub(crate) fn transition<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    rng: &mut R,
    q: &mut Vec<f64>,
    logp: &mut f64,
    grad: &mut Vec<f64>,
    eps: f64,
    n_steps: usize,
    inv_mass: &[f64],
    scratch_p: &mut [f64],
) -> Transition {
    draw_momentum(rng, inv_mass, scratch_p);
    let h0 = -*logp + kinetic(scratch_p, inv_mass);
    let mut q1 = q.clone();
    let mut g1 = grad.clone();
    let mut lp1 = *logp;
    let status = leapfrog(target, &mut q1, scratch_p, &mut g1, &mut lp1, eps, n_steps, inv_mass);
    let h1 = -lp1 + kinetic(scratch_p, inv_mass);
    let delta = h1 - h0;
    if status == Trajectory::Divergent || !delta.is_finite() || delta > MAX_ENERGY_ERROR {
        return Transition { accept_prob: 0.0, divergent: true };
    }
    let accept_prob = (-delta).exp().min(1.0);
    let u: f64 = rng.random();
    if u < accept_prob {
        *q = q1;
        *grad = g1;
        *logp = lp1;
    }
    Transition { accept_prob, divergent: false }
}

/// Nesterov dual averaging of `log ε` towards a target acceptance rate, with
/// the usual constants γ = 0.05, t₀ = 10, κ = 0.75.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn final_step(&self) -> f64 {
        if self.t == 0.0 {
            self.current()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
pub(crate) struct VarianceWindow {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceWindow {
    pub fn new(dim: usize) -> Self {
        VarianceWindow { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Variances shrunk towards 1e-3 as in common HMC warmups.
    pub fn regularized(&self) -> Option<Vec<f64>> {
        if self.n < 3.0 {
            return None;
        }
        let n = self.n;
        Some(self.m2.iter().map(|m2| (n / (n + 5.0)) * (m2 / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0))).collect())
    }
}

/// Slow mass-adaptation windows `[start, end)` for `n_warmup` iterations: a
/// 75-iteration initial buffer, windows of 25, 50, 100, … with the last one
/// stretched to a 50-iteration terminal buffer. Short warmups use 15 % / 75 % /
/// 10 % splits with a single window.
pub(crate) fn slow_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    const INIT: usize = 75;
    const TERM: usize = 50;
    const BASE: usize = 25;
    if n_warmup < 20 {
        return Vec::new();
    }
    let (init, term, base) = if INIT + BASE + TERM > n_warmup {
        let init = (0.15 * n_warmup as f64) as usize;
        let term = (0.1 * n_warmup as f64) as usize;
        (init, term, n_warmup - init - term)
    } else {
        (INIT, TERM, BASE)
    };
    let last = n_warmup - term;
    let mut windows = Vec::new();
    let (mut start, mut size) = (init, base);
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}

/// Step size whose single-step acceptance crosses 0.5, by doubling or halving
/// from 0.1.
pub(crate) fn initial_step_size<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    rng: &mut R,
    q: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
) -> f64 {
    let mut eps = 0.1;
    let mut p = vec![0.0; q.len()];
    let accept_log = |eps: f64, p0: &[f64]| -> f64 {
        let mut q1 = q.to_vec();
        let mut p1 = p0.to_vec();
        let mut g1 = grad.to_vec();
        let mut lp1 = logp;
        let status = leapfrog(target, &mut q1, &mut p1, &mut g1, &mut lp1, eps, 1, inv_mass);
        if status == Trajectory::Divergent {
            return f64::NEG_INFINITY;
        }
        let d = (-lp1 + kinetic(&p1, inv_mass)) - (-logp + kinetic(p0, inv_mass));
        if d.is_finite() {
            -d
        } else {
            f64::NEG_INFINITY
        }
    };
    draw_momentum(rng, inv_mass, &mut p);
    let first = accept_log(eps, &p);
    let up = first > 0.5f64.ln();
    for _ in 0..60 {
        let a = accept_log(eps, &p);
        if up && !(a > 0.5f64.ln()) {
            return eps / 2.0;
        }
        if !up && a > 0.5f64.ln() {
            return eps;
        }
        eps = if up { eps * 2.0 } else { eps / 2.0 };
    }
    eps
}
