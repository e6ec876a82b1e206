//! Conditioning the LNA prior on one observation vector.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::lna::{LnaState, Sensitivities};

#[derive(Debug, Clone)]
pub struct UpdateOutput {
    /// Posterior `N(α, β)` with `φ = 0`.
    pub posterior: LnaState,
    /// `∂α/∂η`, `∂β/∂η` when input sensitivities were given.
    pub sens: Option<Sensitivities>,
    /// `log N(y; G m, S)`.
    pub log_pred: f64,
    pub grad_log_pred: Option<DVector<f64>>,
    /// Predictive observation mean `G m` and covariance `S = GΨGᵀ + Σ`.
    pub pred_obs_mean: DVector<f64>,
    pub pred_obs_cov: DMatrix<f64>,
}

/// Factor `s`, inflating its diagonal by `(1 + jitter·2^m)`, `m = 0..=5`, on failure.
pub(crate) fn factor_with_jitter(s: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(s.clone()) {
        return Ok(ch);
    }
    for m in 0..=5 {
        let mut inflated = s.clone();
        let scale = 1.0 + jitter * f64::powi(2.0, m);
        for i in 0..s.nrows() {
            inflated[(i, i)] *= scale;
        }
        if let Some(ch) = Cholesky::new(inflated) {
            return Ok(ch);
        }
    }
    Err(Error::NotPositiveDefinite)
}

/// Gaussian conditioning of `s ~ N(s̄ + φ, Ψ)` on `y = G s + ε`, `ε ~ N(0, Σ)`.
///
/// `d_noise` lists `(l, ∂Σ/∂η_l)` for every `η_l` that enters `Σ`; all other
/// noise derivatives are zero.
pub fn kalman_update(
    state: &LnaState,
    sens: Option<&Sensitivities>,
    y: &DVector<f64>,
    g: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    d_noise: &[(usize, DMatrix<f64>)],
    jitter: f64,
) -> Result<UpdateOutput> {
    let j = state.dim();
    let n = y.len();
    if g.nrows() != n || g.ncols() != j || noise.nrows() != n || noise.ncols() != n {
        return Err(Error::Dimension(format!("update with y of length {n} and state of length {j}")));
    }
    let m = state.total_mean();
    let p = &state.cov;
    let b = g * p;
    let mut s = &b * g.transpose() + noise;
    s = (&s + s.transpose()) * 0.5;
    let chol = factor_with_jitter(&s, jitter)?;

    let pred_mean = g * &m;
    let e = y - &pred_mean;
    let u = chol.solve(&e);
    let w = chol.solve(&b);
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().take(n).map(|d| d.ln()).sum::<f64>();
    let log_pred = -0.5 * (n as f64 * (2.0 * PI).ln() + logdet + e.dot(&u));
    if !log_pred.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }

    let alpha = &m + b.transpose() * &u;
    let mut beta = p - b.transpose() * &w;
    beta = (&beta + beta.transpose()) * 0.5;

    let (post_sens, grad) = match sens {
        None => (None, None),
        Some(sens) => {
            let n_eta = sens.param_count();
            let mut out = Sensitivities::zeros(j, n_eta);
            let mut grad = DVector::zeros(n_eta);
            for l in 0..n_eta {
                let dm = sens.d_mean.column(l) + sens.d_pert.column(l);
                let dp = &sens.d_cov[l];
                let db = g * dp;
                let mut ds = &db * g.transpose();
                for (idx, dn) in d_noise {
                    if *idx == l {
                        ds += dn;
                    }
                }
                let de = -(g * &dm);
                let sinv_ds = chol.solve(&ds);
                let ds_u = &ds * &u;
                grad[l] = -0.5 * sinv_ds.trace() - u.dot(&de) + 0.5 * u.dot(&ds_u);
                let du = chol.solve(&(&de - &ds_u));
                let dalpha = &dm + db.transpose() * &u + b.transpose() * &du;
                out.d_mean.set_column(l, &dalpha);
                let dbw = db.transpose() * &w;
                let mut dbeta = dp - &dbw - dbw.transpose() + w.transpose() * &ds * &w;
                dbeta = (&dbeta + dbeta.transpose()) * 0.5;
                out.d_cov[l] = dbeta;
            }
            (Some(out), Some(grad))
        }
    };

    Ok(UpdateOutput {
        posterior: LnaState {
            mean: alpha,
            pert_mean: DVector::zeros(j),
            cov: beta,
            time: state.time,
        },
        sens: post_sens,
        log_pred,
        grad_log_pred: grad,
        pred_obs_mean: pred_mean,
        pred_obs_cov: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(mean: f64, var: f64) -> LnaState {
        LnaState::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var), 0.0).unwrap()
    }

    fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
    }

    #[test]
    fn scalar_update() {
        let g = DMatrix::from_element(1, 1, 1.0);
        let noise = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 2.0);
        let out = kalman_update(&scalar_state(0.0, 1.0), None, &y, &g, &noise, &[], 1e-9).unwrap();
        assert!((out.posterior.mean[0] - 1.0).abs() < 1e-15);
        assert!((out.posterior.cov[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((out.log_pred - normal_logpdf(2.0, 0.0, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn exact_observation_pins_state() {
        let state = LnaState::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            0.0,
        )
        .unwrap();
        let y = DVector::from_vec(vec![1.5, 2.5]);
        let noise = DMatrix::identity(2, 2) * 1e-12;
        let out = kalman_update(&state, None, &y, &DMatrix::identity(2, 2), &noise, &[], 1e-9).unwrap();
        assert!((out.posterior.mean - &y).amax() < 1e-9);
        assert!(out.posterior.cov.amax() < 1e-9);
    }

    #[test]
    fn uninformative_observation_leaves_prior() {
        let state = LnaState::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            0.0,
        )
        .unwrap();
        let g = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let noise = DMatrix::from_element(1, 1, 1e12);
        let y = DVector::from_element(1, 50.0);
        let out = kalman_update(&state, None, &y, &g, &noise, &[], 1e-9).unwrap();
        assert!((&out.posterior.mean - &state.mean).amax() < 1e-9);
        assert!((&out.posterior.cov - &state.cov).amax() < 1e-9);
        let flat = -0.5 * ((2.0 * PI).ln() + (1e12f64 + 1.0).ln());
        assert!((out.log_pred - flat).abs() < 1e-6);
    }

    #[test]
    fn perturbation_mean_enters_prediction_and_is_cleared() {
        let state = scalar_state(0.0, 1.0).with_pert_mean(DVector::from_element(1, 1.0)).unwrap();
        let g = DMatrix::from_element(1, 1, 1.0);
        let noise = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 3.0);
        let out = kalman_update(&state, None, &y, &g, &noise, &[], 1e-9).unwrap();
        assert!((out.log_pred - normal_logpdf(3.0, 1.0, 2.0)).abs() < 1e-14);
        assert_eq!(out.posterior.pert_mean[0], 0.0);
        assert!((out.posterior.mean[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_innovation_fails() {
        let state = scalar_state(0.0, 0.0);
        let g = DMatrix::from_element(1, 1, 1.0);
        let noise = DMatrix::from_element(1, 1, 0.0);
        let y = DVector::from_element(1, 1.0);
        assert!(matches!(
            kalman_update(&state, None, &y, &g, &noise, &[], 1e-9),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_in_noise_and_moments() {
        // η = (a, σ): mean = a, Ψ = a², Σ = σ
        let eval = |a: f64, sigma: f64| {
            let state = scalar_state(a, a * a);
            let mut sens = Sensitivities::zeros(1, 2);
            sens.d_mean[(0, 0)] = 1.0;
            sens.d_cov[0][(0, 0)] = 2.0 * a;
            let g = DMatrix::from_element(1, 1, 1.0);
            let noise = DMatrix::from_element(1, 1, sigma);
            let dn = vec![(1, DMatrix::from_element(1, 1, 1.0))];
            kalman_update(&state, Some(&sens), &DVector::from_element(1, 0.7), &g, &noise, &dn, 1e-9).unwrap()
        };
        let (a, sigma, h) = (1.3, 0.4, 1e-6);
        let out = eval(a, sigma);
        let grad = out.grad_log_pred.unwrap();
        let fd_a = (eval(a + h, sigma).log_pred - eval(a - h, sigma).log_pred) / (2.0 * h);
        let fd_s = (eval(a, sigma + h).log_pred - eval(a, sigma - h).log_pred) / (2.0 * h);
        assert!((grad[0] - fd_a).abs() < 1e-7 * (1.0 + fd_a.abs()));
        assert!((grad[1] - fd_s).abs() < 1e-7 * (1.0 + fd_s.abs()));
        let sens = out.sens.unwrap();
        let fd_alpha = (eval(a, sigma + h).posterior.mean[0] - eval(a, sigma - h).posterior.mean[0]) / (2.0 * h);
        let fd_beta = (eval(a + h, sigma).posterior.cov[(0, 0)] - eval(a - h, sigma).posterior.cov[(0, 0)]) / (2.0 * h);
        assert!((sens.d_mean[(0, 1)] - fd_alpha).abs() < 1e-7);
        assert!((sens.d_cov[0][(0, 0)] - fd_beta).abs() < 1e-7);
    }
}
