//! Test-only oracles, independent of the filter implementation.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use srn_lna::observation::{observe, Dataset, ObservationModel};
use srn_lna::ssa::ssa_simulate;
use srn_lna::{LnaState, Prior, Priors, ReactionNetwork};

/// Central differences of `f` at `x` with step `h` on every coordinate.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|l| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[l] += h;
            dn[l] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Exact scalar Kalman filter for the birth-death CLE (∅ → X at θ₁,
/// X → ∅ at θ₂x): mean and variance are propagated with the matrix
/// exponential of the augmented linear moment system.
pub fn birth_death_exact_loglik(theta: [f64; 2], sigma: f64, mean0: f64, var0: f64, ds: &Dataset) -> f64 {
    let (b, d) = (theta[0], theta[1]);
    let gen = DMatrix::from_row_slice(3, 3, &[-d, 0.0, b, d, -2.0 * d, b, 0.0, 0.0, 0.0]);
    let (mut m, mut v) = (mean0, var0);
    let mut total = 0.0;
    for (h, &t) in ds.model.times.iter().enumerate() {
        if h > 0 {
            let dt = t - ds.model.times[h - 1];
            let z = (gen.clone() * dt).exp() * DVector::from_vec(vec![m, v, 1.0]);
            m = z[0];
            v = z[1];
        }
        let y = ds.observations[h][0];
        let s = v + sigma;
        total += -0.5 * ((2.0 * PI * s).ln() + (y - m).powi(2) / s);
        let k = v / s;
        m += k * (y - m);
        v -= k * v;
    }
    total
}

pub fn birth_death_dataset(seed: u64) -> Dataset {
    let net = ReactionNetwork::birth_death();
    let traj = ssa_simulate(&net, &[1.0, 0.1], &[2], 10.0, seed).unwrap();
    let model = ObservationModel::regular(0.0, 1.0, 10, vec![0], 1, BTreeMap::from([(0, 0.5)])).unwrap();
    observe(&[traj], &model, 1.0, seed + 1).unwrap()
}

pub fn birth_death_init() -> LnaState {
    LnaState::new(DVector::from_element(1, 2.0), DMatrix::from_element(1, 1, 1.0), 0.0).unwrap()
}

pub fn birth_death_priors() -> Priors {
    Priors {
        theta: vec![Prior::Uniform { lower: 0.0, upper: 10.0 }; 2],
        sigma: vec![Prior::Uniform { lower: 0.0, upper: 10.0 }],
    }
}

pub const MM_THETA: [f64; 3] = [0.001, 0.005, 0.01];
pub const MM_X0: [i64; 4] = [45, 39, 55, 6];

/// Complex-only observation every `dt` over `[0, 80]`, σ = 4.
pub fn mm_dataset(dt: f64, seed: u64) -> Dataset {
    let net = ReactionNetwork::michaelis_menten();
    let traj = ssa_simulate(&net, &MM_THETA, &MM_X0, 80.0, seed).unwrap();
    let horizon = (80.0 / dt).round() as usize;
    let model = ObservationModel::regular(0.0, dt, horizon, vec![2], 1, BTreeMap::from([(2, 4.0)])).unwrap();
    observe(&[traj], &model, 1.0, seed.wrapping_add(1_000_003)).unwrap()
}

pub fn mm_init() -> LnaState {
    LnaState::new(DVector::from_vec(vec![50.0, 40.0, 60.0, 10.0]), DMatrix::identity(4, 4), 0.0).unwrap()
}

pub fn mm_priors() -> Priors {
    Priors {
        theta: vec![Prior::Uniform { lower: 0.0, upper: 1.0 }; 3],
        sigma: vec![Prior::Uniform { lower: 0.0, upper: 25.0 }],
    }
}

pub fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// The birth-death experiment cut down to a few hundred iterations, written
/// to `dir/config.json` with an absolute network path.
pub fn small_birth_death_config(dir: &std::path::Path) -> std::path::PathBuf {
    use srn_lna::experiment::ExperimentConfig;
    let text = std::fs::read_to_string(configs_dir().join("birth_death.json")).unwrap();
    let mut cfg = ExperimentConfig::from_json_str(&text).unwrap();
    cfg.network = configs_dir().join("birth_death.network.json").canonicalize().unwrap();
    cfg.replications = 2;
    cfg.output_dir = None;
    for cell in &mut cfg.samplers {
        cell.burn_in = 100;
        cell.samples = 20;
        cell.thin = 2;
    }
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json_string()).unwrap();
    path
}
