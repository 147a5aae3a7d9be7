//! Lower-truncated data-model densities and their partial derivatives in the
//! location `mu` and variance `v`.

use crate::special::{ln_norm_pdf, ln_t4_pdf, log_norm_cdf, log_t4_cdf};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of `N(mu, v)` truncated to `(lower, ∞)`; `-∞` at or below
/// `lower`.
pub fn trunc_normal_logpdf(x: f64, mu: f64, v: f64, lower: f64) -> f64 {
    tn_logpdf_grad(x, mu, v, lower).0
}

/// Log density of a t₄ location-scale law (scale `√v`) truncated to
/// `(lower, ∞)`.
pub fn trunc_t4_logpdf(x: f64, mu: f64, v: f64, lower: f64) -> f64 {
    tt4_logpdf_grad(x, mu, v, lower).0
}

/// `(log p, ∂/∂mu, ∂/∂v)`.
pub(crate) fn tn_logpdf_grad(x: f64, mu: f64, v: f64, lower: f64) -> (f64, f64, f64) {
    if x <= lower {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    let sd = v.sqrt();
    let r = x - mu;
    let t = (mu - lower) / sd;
    let log_norm = log_norm_cdf(t);
    let lp = -0.5 * (LN_2PI + v.ln()) - r * r / (2.0 * v) - log_norm;
    let mills = (ln_norm_pdf(t) - log_norm).exp();
    let dmu = r / v - mills / sd;
    let dv = -0.5 / v + r * r / (2.0 * v * v) + mills * (mu - lower) / (2.0 * v * sd);
    (lp, dmu, dv)
}

pub(crate) fn tt4_logpdf_grad(x: f64, mu: f64, v: f64, lower: f64) -> (f64, f64, f64) {
    if x <= lower {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    let s = v.sqrt();
    let t = (x - mu) / s;
    let u = (mu - lower) / s;
    let log_tail = log_t4_cdf(u);
    let lp = ln_t4_pdf(t) - s.ln() - log_tail;
    let ratio = (ln_t4_pdf(u) - log_tail).exp();
    let dmu = (5.0 * t / (4.0 + t * t) - ratio) / s;
    let ds = (5.0 * t * t / (4.0 + t * t) - 1.0 + ratio * u) / s;
    (lp, dmu, ds / (2.0 * s))
}
