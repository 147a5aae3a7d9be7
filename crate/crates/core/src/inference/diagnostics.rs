//! Rank-normalised split R-hat and effective sample size.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::special::norm_quantile;
use crate::{MispError, Result};

fn check_chains(chains: &[Vec<f64>]) -> Result<usize> {
    if chains.is_empty() {
        return Err(MispError::Input("need at least one chain".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(MispError::Input("chains have different lengths".into()));
    }
    if n < 4 {
        return Err(MispError::Input(format!("chains need at least 4 draws, got {n}")));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MispError::Input("chains contain non-finite values".into()));
    }
    Ok(n)
}

/// Replace pooled draws by normal scores of their (tie-averaged) ranks.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let total = chains.len() * n;
    let mut idx: Vec<(f64, usize)> =
        chains.iter().flatten().copied().enumerate().map(|(i, v)| (v, i)).collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in &idx[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let s = total as f64;
    let z: Vec<f64> = ranks.iter().map(|r| norm_quantile((r - 0.375) / (s + 0.25))).collect();
    z.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Split every chain into halves, dropping the middle draw of odd lengths.
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let half = n / 2;
    chains.iter().flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()]).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn rhat_classic(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n * var(&means);
    if !(w > 0.0) {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Rank-normalised split R-hat. `None` when every draw is identical.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check_chains(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    Ok(rhat_classic(&split(&rank_normalize(chains))))
}

/// Bulk effective sample size on rank-normalised split chains. `None` when
/// every draw is identical.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check_chains(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    Ok(Some(ess_geyer(&split(&rank_normalize(chains)))))
}

/// Effective sample size of the raw draws, appropriate for Monte Carlo
/// standard errors of the mean.
pub fn effective_sample_size_raw(chains: &[Vec<f64>]) -> Result<Option<f64>> {
    check_chains(chains)?;
    if is_constant(chains) {
        return Ok(None);
    }
    Ok(Some(ess_geyer(&split(chains))))
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|&v| v == first)
}

/// Biased autocovariance of one series at every lag, via FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess_geyer(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let nf = n as f64;
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&chain_means);
    }
    let rho = |t: usize| -> f64 {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            let avg = 0.5 * (rho_hat[t - 1] + rho_hat[t]);
            rho_hat[t + 1] = avg;
            rho_hat[t + 2] = avg;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Empirical quantile with midpoint interpolation between the two order
/// statistics that bracket `q (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    0.5 * (sorted[lo] + sorted[hi])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// `None` when undefined (constant draws or too few).
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

/// Summary statistics of one parameter given per-chain draws.
pub fn summarize(name: &str, chains: &[Vec<f64>]) -> SummaryRow {
    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let m = mean(&pooled);
    let sd = if pooled.len() > 1 { var(&pooled).sqrt() } else { 0.0 };
    pooled.sort_by(f64::total_cmp);
    SummaryRow {
        parameter: name.to_string(),
        mean: m,
        sd,
        q025: quantile(&pooled, 0.025),
        q975: quantile(&pooled, 0.975),
        rhat: split_rhat(chains).ok().flatten(),
        ess: effective_sample_size(chains).ok().flatten(),
    }
}
