//! Scalar special functions shared by the basis, the likelihood and the
//! sampler: stable log normal CDF, the t distribution with four degrees of
//! freedom, Laplace-family CDFs and Gauss–Legendre rules.

use statrs::function::erf::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal log density.
pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `log Φ(z)`, accurate in both tails.
///
/// Below `z = -8` the Mills-ratio asymptotic series is summed until its terms
/// stop shrinking, which keeps full double precision there.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z < -8.0 {
        let z2 = z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            let next = -term * (2.0 * k - 1.0) / z2;
            if next.abs() >= term.abs() || next.abs() < 1e-17 {
                break;
            }
            sum += next;
            term = next;
            k += 1.0;
        }
        ln_norm_pdf(z) - (-z).ln() + sum.ln()
    } else if z > 5.0 {
        (-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// Inverse Mills ratio `φ(z)/Φ(z)`.
pub fn inv_mills(z: f64) -> f64 {
    (ln_norm_pdf(z) - log_norm_cdf(z)).exp()
}

pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Log density of the standard t distribution with four degrees of freedom.
pub fn ln_t4_pdf(t: f64) -> f64 {
    (3.0f64 / 8.0).ln() - 2.5 * (t * t / 4.0).ln_1p()
}

/// Lower tail `F(-|t|)` of the t₄ CDF, computed without cancellation.
fn t4_lower_tail(abs_t: f64) -> f64 {
    let root = (4.0 + abs_t * abs_t).sqrt();
    let a = abs_t / root;
    let one_minus_a = 4.0 / (root * (root + abs_t));
    one_minus_a * one_minus_a * (2.0 + a) / 4.0
}

pub fn t4_cdf(t: f64) -> f64 {
    if t < 0.0 {
        t4_lower_tail(-t)
    } else {
        1.0 - t4_lower_tail(t)
    }
}

pub fn log_t4_cdf(t: f64) -> f64 {
    if t < 0.0 {
        t4_lower_tail(-t).ln()
    } else {
        (-t4_lower_tail(t)).ln_1p()
    }
}

/// Standard Laplace CDF (unit scale, zero location).
pub fn laplace_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

pub fn laplace_pdf(z: f64) -> f64 {
    0.5 * (-z.abs()).exp()
}

/// Asymmetric Laplace CDF in the κ parameterization with unit rate:
/// density `exp(-κ z)/(κ + 1/κ)` for `z ≥ 0` and `exp(z/κ)/(κ + 1/κ)` below.
pub fn asym_laplace_cdf(z: f64, kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    if z < 0.0 {
        k2 / (1.0 + k2) * (z / kappa).exp()
    } else {
        1.0 - (-kappa * z).exp() / (1.0 + k2)
    }
}

pub fn asym_laplace_pdf(z: f64, kappa: f64) -> f64 {
    let norm = kappa + 1.0 / kappa;
    if z < 0.0 {
        (z / kappa).exp() / norm
    } else {
        (-kappa * z).exp() / norm
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        if n == 1 {
            nodes[0] = 0.0;
            weights[0] = 2.0;
            return (nodes, weights);
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
