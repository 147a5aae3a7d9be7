use approx::assert_relative_eq;

use super::*;
use crate::geodesy::{matern_corr, Smoothness};
use crate::inference::PosteriorSamples;
use crate::model::ModelConfig;
use crate::simulate::{
    draw_prior_state_rng, generate_dataset, DepthLayout, Region, SimulationSpec, SiteLayout, Truth,
};

fn loc(lat: f64, lon: f64) -> SiteLocation {
    SiteLocation::new(lat, lon).unwrap()
}

fn state_with_field(values: &[f64], gamma: f64, sigma2: f64, phi: f64) -> ParameterState {
    ParameterState {
        gamma: vec![gamma],
        sigma2: vec![sigma2],
        phi,
        tau2: vec![1e-4],
        alpha: values.to_vec(),
        log_z: vec![],
    }
}

#[test]
fn coincident_target_returns_the_observed_value() {
    let obs = [loc(-80.0, 0.0), loc(-79.0, 3.0)];
    let s = state_with_field(&[0.3, -0.7], -0.5, 0.4, 0.01);
    let mut r = rng::stream(1, "test", 0);
    let c = condition_field(&s, 0, &CovarianceSpec::default(), &obs, &[obs[1]], &mut r).unwrap();
    assert_eq!(c.mean, vec![-0.7]);
    assert_eq!(c.variance, vec![0.0]);
    assert_eq!(c.sample, vec![-0.7]);
}

#[test]
fn distant_target_reverts_to_the_prior() {
    let obs = [loc(-80.0, 0.0)];
    let s = state_with_field(&[2.0], -0.5, 0.4, 0.1);
    let mut r = rng::stream(2, "test", 0);
    let c = condition_field(&s, 0, &CovarianceSpec::default(), &obs, &[loc(80.0, 180.0)], &mut r).unwrap();
    assert_relative_eq!(c.mean[0], -0.5, epsilon = 1e-12);
    assert_relative_eq!(c.variance[0], 0.4, epsilon = 1e-12);
}

#[test]
fn bivariate_conditioning_matches_closed_form() {
    let cov = CovarianceSpec::default();
    let obs = [loc(-80.0, 0.0)];
    let target = loc(-78.5, 4.0);
    let (gamma, sigma2, phi, v) = (-0.5, 0.7, 0.004, 0.25);
    let s = state_with_field(&[v], gamma, sigma2, phi);
    let rho = matern_corr(&cov, phi, cov.distance(&obs[0], &target)).unwrap();
    let roo = 1.0 + JITTER_START;
    let mut r = rng::stream(3, "test", 0);
    let c = condition_field(&s, 0, &cov, &obs, &[target], &mut r).unwrap();
    assert!((c.mean[0] - (gamma + rho / roo * (v - gamma))).abs() < 1e-12);
    assert!((c.variance[0] - sigma2 * (1.0 - rho * rho / roo)).abs() < 1e-12);
}

#[test]
fn conditioning_reduces_variance_jointly() {
    let cov = CovarianceSpec {
        distance: crate::geodesy::DistanceMetric::Chordal3D,
        smoothness: Smoothness::ThreeHalves,
    };
    let obs: Vec<SiteLocation> = (0..5).map(|i| loc(-80.0 + 0.5 * i as f64, 10.0 * i as f64)).collect();
    let targets: Vec<SiteLocation> =
        (0..4).map(|i| loc(-79.7 + 0.4 * i as f64, 5.0 + 9.0 * i as f64)).collect();
    let s = state_with_field(&[0.1, 0.2, -0.3, 0.0, 0.5], 0.0, 1.3, 0.003);
    let mut r = rng::stream(4, "test", 0);
    let c = condition_field(&s, 0, &cov, &obs, &targets, &mut r).unwrap();
    assert!(c.variance.iter().all(|&v| (0.0..=1.3).contains(&v)));
    assert!(c.sample.iter().all(|v| v.is_finite()));
    assert!(condition_field(&s, 3, &cov, &obs, &targets, &mut r).is_err());
}

fn setup(n_sites: usize, seed: u64) -> (SnowModel, PosteriorSamples) {
    let cfg = ModelConfig::default();
    let spec = SimulationSpec {
        sites: SiteLayout::Random { n_sites, region: Region::default() },
        cores_per_site: 1,
        depths: DepthLayout::Even { count: 5, start: 2.0, spacing: 5.0 },
        campaigns: vec!["EAP".into(), "US".into()],
        truth: Truth::PriorDraw,
        seed,
    };
    let (data, _) = generate_dataset(&spec, &cfg).unwrap();
    let model = SnowModel::new(cfg.clone(), data).unwrap();
    let sites = model.data().site_locations();
    let mut r = rng::stream(seed, "draws", 0);
    let chains = (0..2)
        .map(|_| {
            (0..40)
                .map(|_| draw_prior_state_rng(&cfg, &sites, model.layout().n_tau, &mut r).unwrap())
                .collect()
        })
        .collect();
    let samples =
        PosteriorSamples { param_names: model.param_names(), chains, stats: vec![], warnings: vec![] };
    (model, samples)
}

#[test]
fn fitted_site_reproduces_in_sample_means() {
    let (model, samples) = setup(4, 5);
    let depths = vec![0.0, 3.0, 17.5, 60.0, 140.0];
    let pred = extend_curve(&model, &samples, &model.data().sites[2].id, &depths, 1).unwrap();
    for (d, state) in samples.draws().enumerate() {
        for (x, &depth) in depths.iter().enumerate() {
            let expect = model.mean_density(state, 2, depth).unwrap();
            assert!((pred.get(d, 0, x) - expect).abs() < 1e-10);
        }
    }
}

#[test]
fn mean_curves_are_monotone_and_bounded() {
    let (model, samples) = setup(5, 6);
    let targets = vec![
        Target { label: "T1".into(), location: loc(-78.0, -100.0), weighting: None },
        Target { label: "T2".into(), location: loc(-81.0, -120.0), weighting: None },
    ];
    let depths: Vec<f64> = (0..=28).map(|i| i as f64 * 5.0).collect();
    let pred = predict_curves(&model, &samples, &PredictionRequest::mean_curves(targets, depths.clone(), 3))
        .unwrap();
    assert_eq!(pred.n_draws, 80);
    for d in 0..pred.n_draws {
        for t in 0..2 {
            let mut prev = 0.0;
            for x in 0..depths.len() {
                let v = pred.get(d, t, x);
                assert!(v > 0.0 && v < 0.917 && v >= prev);
                prev = v;
            }
        }
    }
    let summary = pred.summary();
    assert_eq!(summary.len(), 2 * depths.len());
    assert!(summary.iter().all(|c| c.q025 <= c.mean && c.mean <= c.q975));
}

#[test]
fn predictions_are_reproducible_and_thinned() {
    let (model, samples) = setup(3, 7);
    let targets = vec![Target { label: "T".into(), location: loc(-79.0, -110.0), weighting: None }];
    let mut req = PredictionRequest::mean_curves(targets, vec![10.0, 50.0], 11);
    let a = predict_curves(&model, &samples, &req).unwrap();
    let b = predict_curves(&model, &samples, &req).unwrap();
    assert_eq!(a, b);
    req.thin = 4;
    assert_eq!(predict_curves(&model, &samples, &req).unwrap().n_draws, 20);
}

#[test]
fn noisy_predictions_need_weighting_and_stay_positive() {
    let (model, samples) = setup(3, 8);
    let mut req = PredictionRequest {
        targets: vec![Target { label: "T".into(), location: loc(-79.0, -110.0), weighting: None }],
        depths: vec![0.0, 5.0, 25.0],
        mode: PredictionMode::NoisyMeasurement,
        seed: 1,
        thin: 1,
    };
    assert!(matches!(predict_curves(&model, &samples, &req), Err(MispError::Input(_))));
    req.targets[0].weighting = Some(WeightContext { campaign: "US".into(), n: 30, x_max: 25.0 });
    let pred = predict_curves(&model, &samples, &req).unwrap();
    assert!(pred.values.iter().all(|v| *v > 0.0));
    req.depths = vec![200.0];
    assert!(matches!(predict_curves(&model, &samples, &req), Err(MispError::Domain(_))));
}

#[test]
fn unknown_site_cannot_be_extended() {
    let (model, samples) = setup(2, 9);
    assert!(extend_curve(&model, &samples, "nowhere", &[1.0], 0).is_err());
}
