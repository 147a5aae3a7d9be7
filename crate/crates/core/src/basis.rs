//! Monotone depth bases.
//!
//! Two families produce the integrated-kernel row `K(x)`:
//!
//! - M-splines of order `l` on an augmented knot sequence, integrated into
//!   I-splines. Order 1 gives piecewise-constant M-splines and piecewise-linear
//!   I-splines.
//! - Differences of a kernel CDF, `F((x - ξ_j)/h) - F((x_min - ξ_j)/h)`, with
//!   Gaussian, Laplace or asymmetric Laplace kernels centred at `x_min` and at
//!   each interior knot.
//!
//! Basis indices are zero-based throughout.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::special::{
    asym_laplace_cdf, asym_laplace_pdf, gauss_legendre, laplace_cdf, laplace_pdf, norm_cdf, LN_SQRT_2PI,
};
use crate::{MispError, Result};

/// Interior knots, spline order and depth domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotConfig {
    pub interior_knots: Vec<f64>,
    /// Spline order `l`; pieces are polynomials of degree `l - 1`.
    pub order: usize,
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for KnotConfig {
    fn default() -> Self {
        Self::final_model()
    }
}

impl KnotConfig {
    /// Piecewise-linear I-splines with interior knots at 5, 15, 30, 45 and 75 m
    /// on `[0, 140]`.
    pub fn final_model() -> Self {
        KnotConfig { interior_knots: vec![5.0, 15.0, 30.0, 45.0, 75.0], order: 1, x_min: 0.0, x_max: 140.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(MispError::Config("spline order must be at least 1".into()));
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(MispError::Config(format!(
                "depth domain [{}, {}] is not a proper interval",
                self.x_min, self.x_max
            )));
        }
        let mut prev = self.x_min;
        for (i, &k) in self.interior_knots.iter().enumerate() {
            if !(k.is_finite() && k > prev) {
                return Err(MispError::Config(format!(
                    "interior knot {i} ({k}) must be strictly greater than {prev}"
                )));
            }
            prev = k;
        }
        if prev >= self.x_max {
            return Err(MispError::Config(format!(
                "interior knots must lie strictly below x_max = {}",
                self.x_max
            )));
        }
        Ok(())
    }

    /// Number of spline basis functions, `L + l`.
    pub fn n_splines(&self) -> usize {
        self.interior_knots.len() + self.order
    }
}

/// Augmented knot sequence: `l` copies of `x_min`, the interior knots, then
/// `l` copies of `x_max`. Length `L + 2l`.
pub fn augment_knots(cfg: &KnotConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let l = cfg.order;
    let mut xi = Vec::with_capacity(cfg.interior_knots.len() + 2 * l);
    xi.extend(std::iter::repeat_n(cfg.x_min, l));
    xi.extend_from_slice(&cfg.interior_knots);
    xi.extend(std::iter::repeat_n(cfg.x_max, l));
    Ok(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    MSpline,
    Gaussian,
    Laplace,
    AsymmetricLaplaceLeft,
    AsymmetricLaplaceRight,
}

/// Kernel family with its scale parameters. `bandwidth` and `asymmetry` are
/// meaningless for M-splines and must be absent there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymmetry: Option<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { family: KernelFamily::MSpline, bandwidth: None, asymmetry: None }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::MSpline => {
                if self.bandwidth.is_some() || self.asymmetry.is_some() {
                    return Err(MispError::Config("M-spline kernels take no bandwidth or asymmetry".into()));
                }
            }
            family => {
                if let Some(h) = self.bandwidth {
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(MispError::Config(format!("kernel bandwidth must be positive, got {h}")));
                    }
                }
                let asym = matches!(
                    family,
                    KernelFamily::AsymmetricLaplaceLeft | KernelFamily::AsymmetricLaplaceRight
                );
                match (asym, self.asymmetry) {
                    (true, None) => {
                        return Err(MispError::Config(
                            "asymmetric Laplace kernels require an asymmetry ratio".into(),
                        ))
                    }
                    (true, Some(k)) if !(k > 0.0 && k.is_finite()) => {
                        return Err(MispError::Config(format!("asymmetry ratio must be positive, got {k}")))
                    }
                    (false, Some(_)) => {
                        return Err(MispError::Config(
                            "only asymmetric Laplace kernels take an asymmetry ratio".into(),
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Effective κ for the asymmetric Laplace CDF. Right skew (long tail
    /// towards depth) uses `1/κ`, left skew uses `κ`.
    fn kappa(&self) -> f64 {
        let k = self.asymmetry.unwrap_or(1.0);
        match self.family {
            KernelFamily::AsymmetricLaplaceRight => 1.0 / k,
            _ => k,
        }
    }

    fn std_cdf(&self, z: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => norm_cdf(z),
            KernelFamily::Laplace => laplace_cdf(z),
            KernelFamily::AsymmetricLaplaceLeft | KernelFamily::AsymmetricLaplaceRight => {
                asym_laplace_cdf(z, self.kappa())
            }
            KernelFamily::MSpline => unreachable!("M-splines have no closed-form CDF kernel"),
        }
    }

    /// Standardised kernel density; the scaled kernel is `pdf((u - ξ)/h)/h`.
    pub fn std_pdf(&self, z: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-0.5 * z * z - LN_SQRT_2PI).exp(),
            KernelFamily::Laplace => laplace_pdf(z),
            KernelFamily::AsymmetricLaplaceLeft | KernelFamily::AsymmetricLaplaceRight => {
                asym_laplace_pdf(z, self.kappa())
            }
            KernelFamily::MSpline => unreachable!("M-spline densities depend on the knots"),
        }
    }
}

/// Knots plus kernel: everything needed to evaluate `K(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub knots: KnotConfig,
    #[serde(default)]
    pub kernel: KernelSpec,
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        self.knots.validate()?;
        self.kernel.validate()
    }

    /// Number of basis functions `J`: `L + l` for splines, `L + 1` kernel
    /// centres (`x_min` plus each interior knot) otherwise.
    pub fn n_basis(&self) -> usize {
        match self.kernel.family {
            KernelFamily::MSpline => self.knots.n_splines(),
            _ => self.knots.interior_knots.len() + 1,
        }
    }

    /// Kernel bandwidth, defaulting to half the mean gap between consecutive
    /// points of `{x_min, interior knots, x_max}`.
    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth.unwrap_or_else(|| {
            let gaps = self.knots.interior_knots.len() as f64 + 1.0;
            0.5 * (self.knots.x_max - self.knots.x_min) / gaps
        })
    }

    fn centres(&self) -> Vec<f64> {
        std::iter::once(self.knots.x_min).chain(self.knots.interior_knots.iter().copied()).collect()
    }
}

/// Evaluate `M_j` of the configured order at `x` by the order recursion.
pub fn mspline_eval(cfg: &KnotConfig, j: usize, x: f64) -> Result<f64> {
    let xi = augment_knots(cfg)?;
    check_index(cfg, j)?;
    Ok(mspline(&xi, cfg.order, j, x))
}

/// Evaluate `I_j(x) = ∫_{x_min}^x M_j(t) dt`.
pub fn ispline_eval(cfg: &KnotConfig, j: usize, x: f64) -> Result<f64> {
    let xi = augment_knots(cfg)?;
    check_index(cfg, j)?;
    let (nodes, weights) = gauss_legendre(cfg.order);
    Ok(ispline(&xi, cfg.order, j, x, &nodes, &weights))
}

/// CDF-difference kernel `F((x - ξ)/h) - F((x_min - ξ)/h)` with `x_min = 0`.
pub fn cdf_kernel_eval(spec: &KernelSpec, knot: f64, x: f64) -> Result<f64> {
    cdf_kernel_from(spec, knot, 0.0, x)
}

fn cdf_kernel_from(spec: &KernelSpec, knot: f64, x_min: f64, x: f64) -> Result<f64> {
    if spec.family == KernelFamily::MSpline {
        return Err(MispError::Config("M-splines are not CDF-difference kernels".into()));
    }
    spec.validate()?;
    let h = spec
        .bandwidth
        .ok_or_else(|| MispError::Config("CDF kernels need an explicit bandwidth here".into()))?;
    Ok(spec.std_cdf((x - knot) / h) - spec.std_cdf((x_min - knot) / h))
}

fn check_index(cfg: &KnotConfig, j: usize) -> Result<()> {
    if j >= cfg.n_splines() {
        return Err(MispError::Index(format!("basis index {j} out of range for J = {}", cfg.n_splines())));
    }
    Ok(())
}

/// Whether `x` falls in the order-1 support `[ξ_i, ξ_{i+1})`; the final
/// nonempty interval is closed on the right so `x_max` is covered.
fn in_first_order_support(xi: &[f64], i: usize, x: f64) -> bool {
    let (lo, hi) = (xi[i], xi[i + 1]);
    if hi <= lo {
        return false;
    }
    if x >= lo && x < hi {
        return true;
    }
    x == hi && hi == *xi.last().unwrap()
}

fn mspline(xi: &[f64], order: usize, j: usize, x: f64) -> f64 {
    if x < xi[j] || x > xi[j + order] {
        return 0.0;
    }
    // Triangular table over orders 1..=order for indices j..j+order-k.
    let mut m: Vec<f64> = (j..j + order)
        .map(|i| if in_first_order_support(xi, i, x) { 1.0 / (xi[i + 1] - xi[i]) } else { 0.0 })
        .collect();
    for k in 2..=order {
        let kf = k as f64;
        for (off, i) in (j..=j + order - k).enumerate() {
            let span = xi[i + k] - xi[i];
            m[off] = if span > 0.0 && x >= xi[i] && x <= xi[i + k] {
                kf * ((x - xi[i]) * m[off] + (xi[i + k] - x) * m[off + 1]) / ((kf - 1.0) * span)
            } else {
                0.0
            };
        }
    }
    m[0]
}

fn ispline(xi: &[f64], order: usize, j: usize, x: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let lo = xi[j];
    let hi = xi[j + order];
    if x <= lo {
        return 0.0;
    }
    if x >= hi {
        return 1.0;
    }
    // M_j is a polynomial of degree order-1 between consecutive knots, so an
    // order-point Gauss–Legendre rule per piece is exact.
    let mut total = 0.0;
    for k in j..j + order {
        let a = xi[k];
        let b = xi[k + 1].min(x);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (t, w) in nodes.iter().zip(weights) {
            total += w * half * mspline(xi, order, j, mid + half * t);
        }
        if xi[k + 1] >= x {
            break;
        }
    }
    total.clamp(0.0, 1.0)
}

/// Compiled basis: knots augmented, quadrature rule and kernel centres fixed.
#[derive(Debug, Clone)]
pub struct Basis {
    spec: BasisSpec,
    xi: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    centres: Vec<f64>,
    bandwidth: f64,
}

impl Basis {
    pub fn new(spec: &BasisSpec) -> Result<Self> {
        spec.validate()?;
        let xi = augment_knots(&spec.knots)?;
        let (nodes, weights) = gauss_legendre(spec.knots.order);
        Ok(Basis {
            spec: spec.clone(),
            xi,
            nodes,
            weights,
            centres: spec.centres(),
            bandwidth: spec.bandwidth(),
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn n_basis(&self) -> usize {
        self.spec.n_basis()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.spec.knots.x_min, self.spec.knots.x_max)
    }

    pub fn check_depth(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(x >= lo && x <= hi) {
            return Err(MispError::Domain(format!("depth {x} m outside basis domain [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Write `K(x)` into `out` (length `J`).
    pub fn design_row_into(&self, x: f64, out: &mut [f64]) -> Result<()> {
        self.check_depth(x)?;
        debug_assert_eq!(out.len(), self.n_basis());
        match self.spec.kernel.family {
            KernelFamily::MSpline => {
                let order = self.spec.knots.order;
                for (j, o) in out.iter_mut().enumerate() {
                    *o = ispline(&self.xi, order, j, x, &self.nodes, &self.weights);
                }
            }
            _ => {
                let h = self.bandwidth;
                let x_min = self.spec.knots.x_min;
                for (o, &c) in out.iter_mut().zip(&self.centres) {
                    *o = self.spec.kernel.std_cdf((x - c) / h) - self.spec.kernel.std_cdf((x_min - c) / h);
                }
            }
        }
        Ok(())
    }

    pub fn design_row(&self, x: f64) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.n_basis()];
        self.design_row_into(x, &mut row)?;
        Ok(row)
    }

    /// Kernel density `k_j(x)`, the depth derivative of `K_j(x)`.
    pub fn kernel_density(&self, j: usize, x: f64) -> f64 {
        match self.spec.kernel.family {
            KernelFamily::MSpline => mspline(&self.xi, self.spec.knots.order, j, x),
            _ => {
                let h = self.bandwidth;
                self.spec.kernel.std_pdf((x - self.centres[j]) / h) / h
            }
        }
    }

    pub fn matrix(&self, depths: &[f64]) -> Result<BasisMatrix> {
        let values = depths.iter().map(|&x| self.design_row(x)).collect::<Result<Vec<_>>>()?;
        Ok(BasisMatrix { depths: depths.to_vec(), values })
    }
}

/// Convenience wrapper over [`Basis::design_row`].
pub fn design_row(spec: &BasisSpec, x: f64) -> Result<Vec<f64>> {
    Basis::new(spec)?.design_row(x)
}

/// Design rows `K(x)` at a list of depths.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub depths: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl BasisMatrix {
    /// CSV with a `depth_m` column followed by `K1..KJ`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let j = self.values.first().map_or(0, Vec::len);
        let mut header = vec!["depth_m".to_string()];
        header.extend((1..=j).map(|k| format!("K{k}")));
        w.write_record(&header)?;
        for (x, row) in self.depths.iter().zip(&self.values) {
            let mut rec = vec![crate::io::fmt_num(*x)];
            rec.extend(row.iter().map(|v| crate::io::fmt_num(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
