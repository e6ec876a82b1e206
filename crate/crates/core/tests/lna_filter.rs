mod common;

use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use srn_lna::lna::{filter, lna_predict, FilterOptions, LikelihoodVariant};
use srn_lna::posterior::Posterior;
use srn_lna::{LnaState, ParameterVector, Reaction, ReactionNetwork, SolverConfig};

fn loglik(net: &ReactionNetwork, ds: &srn_lna::Dataset, eta: &[f64], init: &LnaState, cfg: &SolverConfig) -> f64 {
    let p = ParameterVector::from_eta(eta, net.param_count()).unwrap();
    filter(net, ds, &p, init, cfg, FilterOptions { record: false, ..Default::default() }).unwrap().loglik
}

#[test]
fn zero_rates_leave_state_unchanged() {
    let net = ReactionNetwork::michaelis_menten();
    let init = mm_init();
    let (out, _) = lna_predict(&net, &init, None, &[0.0; 3], 5.0, 100).unwrap();
    assert!((&out.mean - &init.mean).amax() < 1e-15);
    assert!((&out.cov - &init.cov).amax() < 1e-15);
}

#[test]
fn birth_death_moments_converge_to_closed_form() {
    let net = ReactionNetwork::birth_death();
    let (b, d, t): (f64, f64, f64) = (1.0, 0.1, 5.0);
    let init = birth_death_init();
    let mean = b / d + (2.0 - b / d) * (-d * t).exp();
    // Var' = -2dV + b + d m(t) with m(t) = b/d + c e^{-dt}
    let c = 2.0 - b / d;
    let e1 = (-d * t).exp();
    let e2 = (-2.0 * d * t).exp();
    let var = e2 + (2.0 * b / (2.0 * d)) * (1.0 - e2) + c * (e1 - e2);
    let mut errs = Vec::new();
    for n in [50, 500, 5000] {
        let (out, _) = lna_predict(&net, &init, None, &[b, d], t, n).unwrap();
        errs.push(((out.mean[0] - mean).abs(), (out.cov[(0, 0)] - var).abs()));
    }
    assert!(errs[2].0 < 1e-3 && errs[2].1 < 1e-3, "{errs:?}");
    for w in errs.windows(2) {
        let ratio = w[0].1 / w[1].1;
        assert!((7.0..13.0).contains(&ratio), "variance error ratio {ratio}");
    }
}

#[test]
fn covariance_stays_symmetric() {
    let net = ReactionNetwork::michaelis_menten();
    let (out, _) = lna_predict(&net, &mm_init(), None, &MM_THETA, 80.0, 8000).unwrap();
    assert_eq!(out.cov, out.cov.transpose());
    assert!(out.cov.clone().symmetric_eigenvalues().min() > -1e-9);
}

#[test]
fn single_observation_is_one_gaussian_density() {
    let net = ReactionNetwork::birth_death();
    let mut ds = birth_death_dataset(3);
    ds.model.times.truncate(1);
    ds.model.observed_sets.truncate(1);
    ds.observations.truncate(1);
    let eta = [1.0, 0.1, 0.5];
    let y = ds.observations[0][0];
    let expect = -0.5 * ((2.0 * std::f64::consts::PI * 1.5).ln() + (y - 2.0).powi(2) / 1.5);
    let got = loglik(&net, &ds, &eta, &birth_death_init(), &SolverConfig::default());
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn linear_network_matches_exact_kalman_filter() {
    let net = ReactionNetwork::birth_death();
    let ds = birth_death_dataset(11);
    let exact = birth_death_exact_loglik([1.0, 0.1], 0.5, 2.0, 1.0, &ds);
    let mut errs = Vec::new();
    for dz in [0.1, 0.01, 0.001] {
        let v = loglik(&net, &ds, &[1.0, 0.1, 0.5], &birth_death_init(), &SolverConfig::target_dz(dz));
        errs.push((v - exact).abs());
    }
    assert!(errs[2] < 1e-3, "{errs:?}");
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn gradient_exact_on_linear_network() {
    let net = ReactionNetwork::birth_death();
    let ds = birth_death_dataset(5);
    let init = birth_death_init();
    let cfg = SolverConfig::target_dz(0.05);
    let priors = birth_death_priors();
    for variant in [LikelihoodVariant::BayesianUpdating, LikelihoodVariant::OriginalLna] {
        let post = Posterior::new(&net, &ds, &priors, &init, &cfg).unwrap().with_variant(variant);
        let x = [0.3f64.ln(), 0.2f64.ln(), 0.7f64.ln()];
        let (_, g) = post.log_target_and_grad(&x).unwrap();
        let fd = central_diff(|z| post.log_target(z).unwrap(), &x, 1e-5);
        let err = max_rel_error(g.as_slice(), &fd);
        assert!(err < 1e-6, "{variant:?}: {err:e} {g} {fd:?}");
    }
}

#[test]
fn gradient_matches_fd_on_michaelis_menten() {
    let net = ReactionNetwork::michaelis_menten();
    let ds = mm_dataset(10.0, 7);
    let init = mm_init();
    let cfg = SolverConfig::default();
    let priors = mm_priors();
    let post = Posterior::new(&net, &ds, &priors, &init, &cfg).unwrap();
    let x: Vec<f64> = [0.002, 0.004, 0.02, 3.0].iter().map(|v: &f64| v.ln()).collect();
    let start = Instant::now();
    let (_, g) = post.log_target_and_grad(&x).unwrap();
    eprintln!("MM gradient evaluation: {:?}", start.elapsed());
    let fd = central_diff(|z| post.log_target(z).unwrap(), &x, 1e-5);
    let err = max_rel_error(g.as_slice(), &fd);
    assert!(err < 1e-4, "{err:e} {g} {fd:?}");
}

#[test]
fn filter_is_deterministic() {
    let net = ReactionNetwork::michaelis_menten();
    let ds = mm_dataset(5.0, 2);
    let eta = [0.001, 0.005, 0.01, 4.0];
    let a = loglik(&net, &ds, &eta, &mm_init(), &SolverConfig::default());
    let b = loglik(&net, &ds, &eta, &mm_init(), &SolverConfig::default());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn variants_agree_before_first_update_matters() {
    // With one observation the two variants are the same computation.
    let net = ReactionNetwork::birth_death();
    let mut ds = birth_death_dataset(9);
    ds.model.times.truncate(1);
    ds.model.observed_sets.truncate(1);
    ds.observations.truncate(1);
    let p = ParameterVector::new(vec![1.0, 0.1], vec![0.5]).unwrap();
    let cfg = SolverConfig::default();
    let a = filter(&net, &ds, &p, &birth_death_init(), &cfg, FilterOptions::default()).unwrap();
    let opts = FilterOptions { variant: LikelihoodVariant::OriginalLna, ..Default::default() };
    let b = filter(&net, &ds, &p, &birth_death_init(), &cfg, opts).unwrap();
    assert_eq!(a.loglik, b.loglik);
}

#[test]
fn pure_death_mean_matches_exponential_decay() {
    let net = ReactionNetwork::new(vec![Reaction::new(vec![1], vec![0], 0)], 1, 1.0).unwrap();
    let init = LnaState::new(DVector::from_element(1, 100.0), DMatrix::zeros(1, 1), 0.0).unwrap();
    let (out, _) = lna_predict(&net, &init, None, &[0.05], 20.0, 20000).unwrap();
    assert!((out.mean[0] - 100.0 * (-1f64).exp()).abs() < 2e-3);
}

