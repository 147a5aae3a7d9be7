//! Distances between sites on a spherical Earth and the Matérn correlations
//! built on them.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::{MispError, Result};

/// Mean Earth radius in kilometres. All distances in the crate are km and the
/// decay parameter φ is per km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Initial diagonal jitter, relative to the field variance.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before a factorisation is declared failed.
pub const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteLocation {
    /// Degrees north, in `[-90, 90]`.
    pub lat: f64,
    /// Degrees east, in `(-180, 180]`.
    pub lon: f64,
}

impl SiteLocation {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let loc = SiteLocation { lat, lon };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(MispError::Validation(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(self.lon.is_finite() && self.lon > -180.0 && self.lon <= 180.0) {
            return Err(MispError::Validation(format!("longitude {} outside (-180, 180]", self.lon)));
        }
        Ok(())
    }
}

/// `sin²(θ/2)` for the central angle θ between two sites.
fn haversine_term(a: &SiteLocation, b: &SiteLocation) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let s = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    s.clamp(0.0, 1.0)
}

/// Haversine great-circle distance in km.
pub fn great_circle(a: &SiteLocation, b: &SiteLocation) -> f64 {
    let h = haversine_term(a, b);
    2.0 * EARTH_RADIUS_KM * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Straight-line chord through the sphere, `2R sin(θ/2)`, in km.
pub fn chordal_distance(a: &SiteLocation, b: &SiteLocation) -> f64 {
    2.0 * EARTH_RADIUS_KM * haversine_term(a, b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DistanceMetric {
    #[default]
    GreatCircle,
    Chordal3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Smoothness {
    #[default]
    Half,
    ThreeHalves,
    FiveHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CovarianceSpec {
    pub distance: DistanceMetric,
    pub smoothness: Smoothness,
}

impl CovarianceSpec {
    /// Matérn correlations with ν > 1/2 are not positive definite under the
    /// great-circle metric, so that pairing is refused.
    pub fn validate(&self) -> Result<()> {
        if self.distance == DistanceMetric::GreatCircle && self.smoothness != Smoothness::Half {
            return Err(MispError::Config(
                "great-circle distance is only valid with smoothness 1/2 (exponential)".into(),
            ));
        }
        Ok(())
    }

    pub fn distance(&self, a: &SiteLocation, b: &SiteLocation) -> f64 {
        match self.distance {
            DistanceMetric::GreatCircle => great_circle(a, b),
            DistanceMetric::Chordal3D => chordal_distance(a, b),
        }
    }

    pub fn distance_matrix(&self, sites: &[SiteLocation]) -> DMatrix<f64> {
        let n = sites.len();
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { self.distance(&sites[i], &sites[j]) })
    }

    pub fn cross_distances(&self, rows: &[SiteLocation], cols: &[SiteLocation]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.distance(&rows[i], &cols[j]))
    }
}

/// Matérn correlation at distance `d` with decay `phi`.
pub fn matern_corr(spec: &CovarianceSpec, phi: f64, d: f64) -> Result<f64> {
    spec.validate()?;
    if !(phi > 0.0) || !(d >= 0.0) {
        return Err(MispError::Domain(format!("need phi > 0 and d >= 0, got phi={phi}, d={d}")));
    }
    Ok(corr_and_dphi(spec.smoothness, phi, d).0)
}

/// Correlation and its derivative with respect to φ.
pub(crate) fn corr_and_dphi(nu: Smoothness, phi: f64, d: f64) -> (f64, f64) {
    let t = phi * d;
    match nu {
        Smoothness::Half => {
            let e = (-t).exp();
            (e, -d * e)
        }
        Smoothness::ThreeHalves => {
            let s = 3f64.sqrt();
            let e = (-s * t).exp();
            ((1.0 + s * t) * e, -3.0 * t * e * d)
        }
        Smoothness::FiveHalves => {
            let s = 5f64.sqrt();
            let e = (-s * t).exp();
            ((1.0 + s * t + 5.0 * t * t / 3.0) * e, -(5.0 / 3.0) * t * (1.0 + s * t) * e * d)
        }
    }
}

pub(crate) fn corr_matrix(nu: Smoothness, phi: f64, dist: &DMatrix<f64>) -> DMatrix<f64> {
    dist.map(|d| corr_and_dphi(nu, phi, d).0)
}

/// `σ² · corr` plus the jitter that made it factorisable.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    pub matrix: DMatrix<f64>,
    /// Diagonal jitter actually added, in covariance units.
    pub jitter: f64,
}

/// Covariance matrix over `sites`, validated by a Cholesky factorisation.
pub fn covariance_matrix(
    sites: &[SiteLocation],
    spec: &CovarianceSpec,
    phi: f64,
    sigma2: f64,
) -> Result<CovarianceMatrix> {
    spec.validate()?;
    if !(sigma2 > 0.0) {
        return Err(MispError::Domain(format!("variance must be positive, got {sigma2}")));
    }
    let dist = spec.distance_matrix(sites);
    let corr = corr_matrix(spec.smoothness, phi, &dist);
    let (_, rel_jitter) = factor_with_jitter(&corr, &dist)?;
    let mut matrix = corr * sigma2;
    let jitter = rel_jitter * sigma2;
    for i in 0..sites.len() {
        matrix[(i, i)] += jitter;
    }
    Ok(CovarianceMatrix { matrix, jitter })
}

/// Cholesky-factor a correlation matrix, escalating diagonal jitter ×10 from
/// [`JITTER_START`] to [`JITTER_MAX`]. On failure the error names the closest
/// pair of sites.
pub(crate) fn factor_with_jitter(
    corr: &DMatrix<f64>,
    dist: &DMatrix<f64>,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = corr.nrows();
    let mut jitter = JITTER_START;
    loop {
        let mut m = corr.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * 1.000_001 {
            let mut best = (0, 0, f64::INFINITY);
            for i in 0..n {
                for j in (i + 1)..n {
                    if dist[(i, j)] < best.2 {
                        best = (i, j, dist[(i, j)]);
                    }
                }
            }
            return Err(MispError::Numerical(format!(
                "correlation matrix not positive definite after jitter {JITTER_MAX:e}; \
                 closest sites are #{} and #{} at {:.4} km",
                best.0, best.1, best.2
            )));
        }
    }
}

/// Factorised site correlation shared by all field layers at one φ.
#[derive(Debug, Clone)]
pub(crate) struct CorrelationFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub inverse: DMatrix<f64>,
    pub log_det: f64,
    pub dcorr_dphi: DMatrix<f64>,
}

impl CorrelationFactor {
    pub fn new(nu: Smoothness, phi: f64, dist: &DMatrix<f64>) -> Result<Self> {
        let corr = corr_matrix(nu, phi, dist);
        let dcorr_dphi = dist.map(|d| corr_and_dphi(nu, phi, d).1);
        let (chol, _) = factor_with_jitter(&corr, dist)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inverse = chol.inverse();
        Ok(CorrelationFactor { chol, inverse, log_det, dcorr_dphi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn loc(lat: f64, lon: f64) -> SiteLocation {
        SiteLocation::new(lat, lon).unwrap()
    }

    #[test]
    fn great_circle_reference_arcs() {
        assert_eq!(great_circle(&loc(-80.0, 120.0), &loc(-80.0, 120.0)), 0.0);
        assert_relative_eq!(
            great_circle(&loc(0.0, 0.0), &loc(0.0, 180.0)),
            PI * EARTH_RADIUS_KM,
            max_relative = 1e-12
        );
        assert_relative_eq!(great_circle(&loc(0.0, 0.0), &loc(0.0, 180.0)), 20015.09, epsilon = 0.01);
        assert_relative_eq!(great_circle(&loc(0.0, 0.0), &loc(0.0, 90.0)), 10007.54, epsilon = 0.01);
    }

    #[test]
    fn chordal_reference_values() {
        assert_eq!(chordal_distance(&loc(10.0, 10.0), &loc(10.0, 10.0)), 0.0);
        assert_relative_eq!(
            chordal_distance(&loc(0.0, 0.0), &loc(0.0, 180.0)),
            12742.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(chordal_distance(&loc(0.0, 0.0), &loc(0.0, 90.0)), 9009.95, epsilon = 0.01);
    }

    #[test]
    fn invalid_locations() {
        assert!(SiteLocation::new(91.0, 0.0).is_err());
        assert!(SiteLocation::new(0.0, -180.0).is_err());
        assert!(SiteLocation::new(0.0, 180.0).is_ok());
    }

    #[test]
    fn matern_closed_forms() {
        let exp = CovarianceSpec::default();
        assert_eq!(matern_corr(&exp, 0.3, 0.0).unwrap(), 1.0);
        assert_relative_eq!(matern_corr(&exp, 0.001, 1000.0).unwrap(), (-1.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(matern_corr(&exp, 0.001, 1000.0).unwrap(), 0.367879, epsilon = 1e-6);
        let m32 = CovarianceSpec { distance: DistanceMetric::Chordal3D, smoothness: Smoothness::ThreeHalves };
        assert_relative_eq!(matern_corr(&m32, 1.0, 1.0).unwrap(), 0.4833577, epsilon = 1e-7);
        let m52 = CovarianceSpec { distance: DistanceMetric::Chordal3D, smoothness: Smoothness::FiveHalves };
        assert_eq!(matern_corr(&m52, 2.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn great_circle_with_smooth_matern_is_rejected() {
        let bad =
            CovarianceSpec { distance: DistanceMetric::GreatCircle, smoothness: Smoothness::FiveHalves };
        assert!(matches!(matern_corr(&bad, 0.1, 1.0), Err(MispError::Config(_))));
    }

    #[test]
    fn dphi_matches_finite_differences() {
        for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            for &(phi, d) in &[(0.001, 500.0), (0.02, 30.0), (0.05, 0.1)] {
                let h = 1e-4 * phi;
                let fd = (corr_and_dphi(nu, phi + h, d).0 - corr_and_dphi(nu, phi - h, d).0) / (2.0 * h);
                assert_relative_eq!(corr_and_dphi(nu, phi, d).1, fd, max_relative = 1e-6, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_small_cases() {
        let spec = CovarianceSpec::default();
        let one = covariance_matrix(&[loc(-75.0, 100.0)], &spec, 0.01, 2.5).unwrap();
        assert_relative_eq!(one.matrix[(0, 0)], 2.5, max_relative = 1e-9);

        let p = loc(-75.0, 100.0);
        let two = covariance_matrix(&[p, p], &spec, 0.01, 1.0).unwrap();
        assert!(two.jitter > 0.0);
        assert_relative_eq!(two.matrix[(0, 1)], 1.0);
        assert_relative_eq!(two.matrix[(0, 0)], 1.0 + two.jitter);

        let sites = [loc(0.0, 0.0), loc(1.0, 0.0), loc(2.0, 0.0)];
        let cov = covariance_matrix(&sites, &spec, 0.001, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut want = (-0.001 * great_circle(&sites[i], &sites[j])).exp();
                if i == j {
                    want += cov.jitter;
                }
                assert_relative_eq!(cov.matrix[(i, j)], want, max_relative = 1e-14);
            }
        }
    }

    fn arb_site() -> impl Strategy<Value = SiteLocation> {
        (-89.0f64..89.0, -179.0f64..180.0).prop_map(|(lat, lon)| SiteLocation { lat, lon })
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_satisfy_triangle(a in arb_site(), b in arb_site(), c in arb_site()) {
            for f in [great_circle, chordal_distance] {
                prop_assert!((f(&a, &b) - f(&b, &a)).abs() < 1e-9);
                prop_assert!(f(&a, &c) <= f(&a, &b) + f(&b, &c) + 1e-6);
            }
            prop_assert!(chordal_distance(&a, &b) <= great_circle(&a, &b) + 1e-9);
        }

        #[test]
        fn matern_decreases_with_distance(phi in 1e-5f64..0.1, d1 in 0.0f64..5000.0, dd in 0.0f64..5000.0) {
            for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
                let (a, _) = corr_and_dphi(nu, phi, d1);
                let (b, _) = corr_and_dphi(nu, phi, d1 + dd);
                prop_assert!(b <= a + 1e-15);
            }
        }

        #[test]
        fn covariance_is_psd_before_jitter(
            sites in proptest::collection::vec(arb_site(), 1..50),
            phi in 1e-5f64..0.1,
            sigma2 in 0.1f64..5.0,
        ) {
            for spec in [
                CovarianceSpec::default(),
                CovarianceSpec { distance: DistanceMetric::Chordal3D, smoothness: Smoothness::FiveHalves },
            ] {
                let dist = spec.distance_matrix(&sites);
                let cov = corr_matrix(spec.smoothness, phi, &dist) * sigma2;
                let eig = cov.symmetric_eigenvalues();
                prop_assert!(eig.iter().all(|&e| e >= -1e-8 * sigma2), "min eig {}", eig.min());
            }
        }
    }
}
