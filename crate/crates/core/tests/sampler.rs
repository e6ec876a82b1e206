use srn_lna::sampler::{run_chain, Algorithm, LogTarget};
use srn_lna::SamplerConfig;

struct StdNormal(usize);

impl LogTarget for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
    fn log_density_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.log_density(x), x.iter().map(|v| -v).collect())
    }
}

fn moments(algorithm: Algorithm, seed: u64) -> Vec<(f64, f64)> {
    let cfg = SamplerConfig {
        step_size: 0.1,
        burn_in: 0,
        samples: 100_000,
        thin: 1,
        algorithm,
        likelihood_variant: Default::default(),
        seed,
    };
    let chain = run_chain(&StdNormal(4), |_| vec![0.0; 4], &cfg).unwrap();
    let xs = &chain.log_trace[1..];
    (0..4)
        .map(|l| {
            let n = xs.len() as f64;
            let m = xs.iter().map(|x| x[l]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x[l] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v)
        })
        .collect()
}

#[test]
fn mala_calibrated_on_gaussian() {
    for (m, v) in moments(Algorithm::Mala, 1) {
        assert!(m.abs() < 0.03 && (0.94..=1.06).contains(&v), "mean {m} var {v}");
    }
}

#[test]
fn mh_calibrated_on_gaussian() {
    for (m, v) in moments(Algorithm::Mh, 2) {
        assert!(m.abs() < 0.03 && (0.94..=1.06).contains(&v), "mean {m} var {v}");
    }
}

/// Two-point support {0, 1} for one coordinate: the chain's empirical flow
/// 0→1 must match 1→0 (detailed balance).
#[test]
fn detailed_balance_on_two_states() {
    struct TwoWell;
    impl LogTarget for TwoWell {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            // sharp wells at 0 and 1 with weights 1 : 2
            let a = -((x[0]) / 0.05).powi(2) / 2.0;
            let b = 2f64.ln() - ((x[0] - 1.0) / 0.05).powi(2) / 2.0;
            a.max(b) + (-(a - b).abs()).exp().ln_1p()
        }
        fn log_density_and_grad(&self, _: &[f64]) -> (f64, Vec<f64>) {
            unreachable!()
        }
    }
    let cfg = SamplerConfig {
        step_size: 0.5,
        burn_in: 0,
        samples: 200_000,
        thin: 1,
        algorithm: Algorithm::Mh,
        likelihood_variant: Default::default(),
        seed: 3,
    };
    let chain = run_chain(&TwoWell, |_| vec![0.0], &cfg).unwrap();
    let side = |x: &Vec<f64>| usize::from(x[0] > 0.5);
    let mut flow = [[0usize; 2]; 2];
    let mut occupancy = [0usize; 2];
    for w in chain.log_trace.windows(2) {
        flow[side(&w[0])][side(&w[1])] += 1;
        occupancy[side(&w[1])] += 1;
    }
    let (f01, f10) = (flow[0][1] as f64, flow[1][0] as f64);
    assert!(f01 > 100.0, "too few crossings: {f01}");
    assert!((f01 - f10).abs() <= 1.0 + 4.0 * (f01 + f10).sqrt(), "{f01} vs {f10}");
    let frac = occupancy[1] as f64 / chain.log_trace.len() as f64;
    assert!((frac - 2.0 / 3.0).abs() < 0.05, "{frac}");
}
