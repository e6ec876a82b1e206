//! Joint posterior of kinetic constants and noise variances.
//!
//! `log p(η | D) = log p(θ) + log p(σ) + loglik(η)` up to the model evidence.
//! Samplers work on `x = log η`; the density there gains the log-Jacobian
//! `Σ_l x_l` unless it is switched off.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lna::{filter, FilterOptions, LikelihoodVariant, LnaState, SolverConfig};
use crate::network::{ParameterVector, ReactionNetwork};
use crate::observation::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Uniform on the open interval `(lower, upper)`.
    Uniform { lower: f64, upper: f64 },
}

impl Prior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => {
                if x > lower && x < upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    pub theta: Vec<Prior>,
    pub sigma: Vec<Prior>,
}

impl Priors {
    pub fn len(&self) -> usize {
        self.theta.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn iter(&self) -> impl Iterator<Item = &Prior> {
        self.theta.iter().chain(&self.sigma)
    }

    pub fn log_density(&self, eta: &[f64]) -> f64 {
        self.iter().zip(eta).map(|(p, &x)| p.log_density(x)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.iter().map(|p| p.sample(rng)).collect()
    }
}

/// Everything needed to evaluate `log p(η | D)` and its gradient.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub net: &'a ReactionNetwork,
    pub data: &'a Dataset,
    pub priors: &'a Priors,
    pub init: &'a LnaState,
    pub solver: &'a SolverConfig,
    pub variant: LikelihoodVariant,
    /// Add `Σ log η_l` to the log-space density.
    pub include_jacobian: bool,
}

impl<'a> Posterior<'a> {
    pub fn new(
        net: &'a ReactionNetwork,
        data: &'a Dataset,
        priors: &'a Priors,
        init: &'a LnaState,
        solver: &'a SolverConfig,
    ) -> Result<Self> {
        let n_sigma = data.model.observed_species().len();
        if priors.theta.len() != net.param_count() || priors.sigma.len() != n_sigma {
            return Err(Error::Dimension(format!(
                "priors cover {}+{} parameters, model has {}+{n_sigma}",
                priors.theta.len(),
                priors.sigma.len(),
                net.param_count()
            )));
        }
        Ok(Self {
            net,
            data,
            priors,
            init,
            solver,
            variant: LikelihoodVariant::BayesianUpdating,
            include_jacobian: true,
        })
    }

    pub fn with_variant(mut self, variant: LikelihoodVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_jacobian(mut self, include: bool) -> Self {
        self.include_jacobian = include;
        self
    }

    pub fn dim(&self) -> usize {
        self.priors.len()
    }

    fn eval(&self, eta: &[f64], gradient: bool) -> Result<(f64, Option<DVector<f64>>)> {
        if eta.len() != self.dim() {
            return Err(Error::Dimension(format!("η has {} entries, expected {}", eta.len(), self.dim())));
        }
        let log_prior = self.priors.log_density(eta);
        if !log_prior.is_finite() {
            return Ok((f64::NEG_INFINITY, None));
        }
        let params = ParameterVector::from_eta(eta, self.net.param_count())?;
        let opts = FilterOptions {
            variant: self.variant,
            gradient,
            record: false,
        };
        let out = filter(self.net, self.data, &params, self.init, self.solver, opts)?;
        Ok((log_prior + out.loglik, out.gradient))
    }

    /// `log p(η | D)`; `-∞` outside the prior support.
    pub fn log_posterior(&self, eta: &[f64]) -> Result<f64> {
        Ok(self.eval(eta, false)?.0)
    }

    /// `log p(η | D)` and `∇_η log p(η | D)`. Outside the support the value
    /// is `-∞` and the gradient is zero.
    pub fn log_posterior_and_grad(&self, eta: &[f64]) -> Result<(f64, DVector<f64>)> {
        let (value, grad) = self.eval(eta, true)?;
        Ok((value, grad.unwrap_or_else(|| DVector::zeros(self.dim()))))
    }

    /// Density of `x = log η`.
    pub fn log_target(&self, x: &[f64]) -> Result<f64> {
        let eta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let value = self.log_posterior(&eta)?;
        Ok(if self.include_jacobian && value.is_finite() {
            value + x.iter().sum::<f64>()
        } else {
            value
        })
    }

    /// Density of `x = log η` and its gradient `η ⊙ ∇_η log p + 1`.
    pub fn log_target_and_grad(&self, x: &[f64]) -> Result<(f64, DVector<f64>)> {
        let eta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let (value, grad) = self.log_posterior_and_grad(&eta)?;
        if !value.is_finite() {
            return Ok((value, grad));
        }
        let jac = if self.include_jacobian { 1.0 } else { 0.0 };
        let grad = DVector::from_iterator(eta.len(), eta.iter().zip(grad.iter()).map(|(e, g)| e * g + jac));
        let value = if self.include_jacobian { value + x.iter().sum::<f64>() } else { value };
        Ok((value, grad))
    }
}

/// Free-function form of [`Posterior::log_posterior_and_grad`] on the updating filter.
pub fn log_posterior_and_grad(
    net: &ReactionNetwork,
    data: &Dataset,
    eta: &[f64],
    priors: &Priors,
    init: &LnaState,
    solver: &SolverConfig,
) -> Result<(f64, DVector<f64>)> {
    Posterior::new(net, data, priors, init, solver)?.log_posterior_and_grad(eta)
}
