//! Marginal likelihood of a dataset under the LNA, with optional gradient.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lna::predict::{predict_in_place, PredictWorkspace};
use crate::lna::update::kalman_update;
use crate::lna::{LnaState, Sensitivities, SolverConfig};
use crate::network::{ParameterVector, ReactionNetwork};
use crate::observation::Dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodVariant {
    /// Restart the moment equations from the Kalman posterior at every
    /// observation time.
    #[default]
    BayesianUpdating,
    /// Integrate the LNA once from `t_0`; observations only contribute
    /// predictive densities and never feed back into the propagated state.
    OriginalLna,
}

#[derive(Debug, Clone, Copy)]
pub struct FilterOptions {
    pub variant: LikelihoodVariant,
    pub gradient: bool,
    /// Keep per-step predictive and posterior moments.
    pub record: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            variant: LikelihoodVariant::BayesianUpdating,
            gradient: false,
            record: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub time: f64,
    pub pred_mean: DVector<f64>,
    pub pred_cov: DMatrix<f64>,
    pub log_pred: f64,
    pub post_mean: DVector<f64>,
    pub post_cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub loglik: f64,
    pub steps: Vec<StepRecord>,
    /// `α(t_H)`, `β(t_H)` (the propagated state for the original variant).
    pub final_mean: DVector<f64>,
    pub final_cov: DMatrix<f64>,
    /// `∂ loglik / ∂η`, length `L`.
    pub gradient: Option<DVector<f64>>,
}

/// Updating-variant log-likelihood without gradient.
pub fn log_likelihood(
    net: &ReactionNetwork,
    ds: &Dataset,
    params: &ParameterVector,
    init: &LnaState,
    cfg: &SolverConfig,
) -> Result<FilterOutput> {
    filter(net, ds, params, init, cfg, FilterOptions::default())
}

pub fn filter(
    net: &ReactionNetwork,
    ds: &Dataset,
    params: &ParameterVector,
    init: &LnaState,
    cfg: &SolverConfig,
    opts: FilterOptions,
) -> Result<FilterOutput> {
    let j = net.species_count();
    let n_theta = net.param_count();
    let model = &ds.model;
    let n_sigma = model.observed_species().len();
    if params.theta.len() != n_theta || params.sigma.len() != n_sigma {
        return Err(Error::Dimension(format!(
            "η must have {n_theta} kinetic and {n_sigma} noise entries, got {} and {}",
            params.theta.len(),
            params.sigma.len()
        )));
    }
    if init.dim() != j {
        return Err(Error::Dimension(format!("initial LNA state has {} species, network has {j}", init.dim())));
    }
    if model.observed_species().last().is_some_and(|&s| s >= j) {
        return Err(Error::Dimension("observed species index beyond the network".into()));
    }
    let n_eta = n_theta + n_sigma;

    let mut state = init.clone();
    state.time = model.times[0];
    let mut sens = opts.gradient.then(|| Sensitivities::zeros(j, n_eta));
    let mut ws = PredictWorkspace::new(net);
    let mut loglik = 0.0;
    let mut grad = opts.gradient.then(|| DVector::zeros(n_eta));
    let mut steps = Vec::new();

    for (h, &t) in model.times.iter().enumerate() {
        if h > 0 {
            let dt = t - model.times[h - 1];
            let substeps = cfg.substeps_for(h - 1, dt)?;
            predict_in_place(net, &mut state, sens.as_mut(), &params.theta, dt, substeps, &mut ws)?;
            state.time = t;
        }
        let g = model.selection_matrix(h, j);
        let sigma_idx = model.row_sigma_index(h);
        let noise = model.noise_covariance(h, &params.sigma);
        let d_noise: Vec<(usize, DMatrix<f64>)> = if opts.gradient {
            (0..n_sigma)
                .filter(|q| sigma_idx.contains(q))
                .map(|q| {
                    let diag = DVector::from_iterator(
                        sigma_idx.len(),
                        sigma_idx.iter().map(|&i| if i == q { 1.0 } else { 0.0 }),
                    );
                    (n_theta + q, DMatrix::from_diagonal(&diag))
                })
                .collect()
        } else {
            Vec::new()
        };
        let out = kalman_update(&state, sens.as_ref(), &ds.observations[h], &g, &noise, &d_noise, cfg.jitter)?;
        loglik += out.log_pred;
        if let (Some(total), Some(step)) = (grad.as_mut(), out.grad_log_pred.as_ref()) {
            *total += step;
        }
        if opts.record {
            steps.push(StepRecord {
                time: t,
                pred_mean: state.total_mean(),
                pred_cov: state.cov.clone(),
                log_pred: out.log_pred,
                post_mean: out.posterior.mean.clone(),
                post_cov: out.posterior.cov.clone(),
            });
        }
        if opts.variant == LikelihoodVariant::BayesianUpdating {
            state = out.posterior;
            sens = out.sens;
        }
    }

    Ok(FilterOutput {
        loglik,
        steps,
        final_mean: state.total_mean(),
        final_cov: state.cov,
        gradient: grad,
    })
}

/// Per-step diagnostic dump: time, log_pred, predictive mean and covariance
/// diagonal, posterior mean and covariance diagonal.
pub fn write_filter_trace_csv(out: &FilterOutput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let j = out.final_mean.len();
    let mut text = String::from("time,log_pred");
    for prefix in ["pred_mean", "pred_var", "post_mean", "post_var"] {
        for i in 1..=j {
            let _ = write!(text, ",{prefix}{i}");
        }
    }
    text.push('\n');
    for step in &out.steps {
        let _ = write!(text, "{},{}", step.time, step.log_pred);
        for v in step.pred_mean.iter().chain(step.pred_cov.diagonal().iter()) {
            let _ = write!(text, ",{v}");
        }
        for v in step.post_mean.iter().chain(step.post_cov.diagonal().iter()) {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
