//! Bayesian-updating linear noise approximation.
//!
//! Between observation times the LNA moments are pushed forward with Euler
//! substeps ([`predict`]); at each observation time a Kalman-style
//! conditioning step ([`update`]) yields the one-step predictive density and
//! the posterior that restarts the moment equations. [`filter`] chains the
//! two into the marginal log-likelihood and its gradient.

pub mod filter;
pub mod predict;
pub mod update;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{filter, log_likelihood, FilterOptions, FilterOutput, LikelihoodVariant, StepRecord};
pub use predict::{lna_predict, predict_in_place, PredictWorkspace};
pub use update::{kalman_update, UpdateOutput};

/// Running LNA state: `s(t) ≈ N(s̄ + φ, Ψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LnaState {
    pub mean: DVector<f64>,
    pub pert_mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub time: f64,
}

impl LnaState {
    /// Initial condition with `s̄ + φ = mean` carried entirely in `s̄`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, time: f64) -> Result<Self> {
        let j = mean.len();
        if cov.nrows() != j || cov.ncols() != j {
            return Err(Error::Dimension(format!("covariance must be {j}×{j}")));
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * (1.0 + cov.amax()) {
            return Err(Error::Invalid("covariance must be symmetric".into()));
        }
        Ok(Self {
            mean,
            pert_mean: DVector::zeros(j),
            cov,
            time,
        })
    }

    pub fn with_pert_mean(mut self, pert_mean: DVector<f64>) -> Result<Self> {
        if pert_mean.len() != self.mean.len() {
            return Err(Error::Dimension("perturbation mean length".into()));
        }
        self.pert_mean = pert_mean;
        Ok(self)
    }

    /// `s̄ + φ`.
    pub fn total_mean(&self) -> DVector<f64> {
        &self.mean + &self.pert_mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Derivatives of the LNA state with respect to every entry of `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities {
    /// `∂s̄/∂η_l` in column `l` (`J × L`).
    pub d_mean: DMatrix<f64>,
    /// `∂φ/∂η_l` in column `l` (`J × L`).
    pub d_pert: DMatrix<f64>,
    /// `∂Ψ/∂η_l`, one symmetric `J × J` slice per `l`.
    pub d_cov: Vec<DMatrix<f64>>,
}

impl Sensitivities {
    pub fn zeros(species: usize, params: usize) -> Self {
        Self {
            d_mean: DMatrix::zeros(species, params),
            d_pert: DMatrix::zeros(species, params),
            d_cov: vec![DMatrix::zeros(species, species); params],
        }
    }

    pub fn param_count(&self) -> usize {
        self.d_cov.len()
    }
}

/// How many Euler substeps to take on each observation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substeps {
    /// Same `I_h` on every interval.
    Fixed(usize),
    /// Explicit `I_h` per interval.
    PerInterval(Vec<usize>),
    /// `I_h = round(Δt_h / Δz)`, at least 1.
    TargetDz(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub substeps: Substeps,
    /// Relative diagonal inflation tried when the innovation covariance
    /// fails to factor.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-9
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            substeps: Substeps::TargetDz(0.01),
            jitter: default_jitter(),
        }
    }
}

impl SolverConfig {
    pub fn fixed(substeps: usize) -> Self {
        Self {
            substeps: Substeps::Fixed(substeps),
            jitter: default_jitter(),
        }
    }

    pub fn target_dz(dz: f64) -> Self {
        Self {
            substeps: Substeps::TargetDz(dz),
            jitter: default_jitter(),
        }
    }

    /// `I_h` for interval `h` of length `dt`.
    pub fn substeps_for(&self, h: usize, dt: f64) -> Result<usize> {
        let n = match &self.substeps {
            Substeps::Fixed(n) => *n,
            Substeps::PerInterval(v) => *v
                .get(h)
                .ok_or_else(|| Error::Dimension(format!("no substep count for interval {h}")))?,
            Substeps::TargetDz(dz) => {
                if !(*dz > 0.0) {
                    return Err(Error::Invalid("target Δz must be positive".into()));
                }
                ((dt / dz).round() as usize).max(1)
            }
        };
        if n == 0 {
            return Err(Error::Invalid("substep count must be at least 1".into()));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substeps_from_target_dz() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.substeps_for(0, 5.0).unwrap(), 500);
        assert_eq!(cfg.substeps_for(0, 10.0).unwrap(), 1000);
        assert_eq!(cfg.substeps_for(0, 20.0).unwrap(), 2000);
        assert_eq!(cfg.substeps_for(0, 0.001).unwrap(), 1);
        let per = SolverConfig {
            substeps: Substeps::PerInterval(vec![3, 4]),
            jitter: 1e-9,
        };
        assert_eq!(per.substeps_for(1, 1.0).unwrap(), 4);
        assert!(per.substeps_for(2, 1.0).is_err());
        assert!(SolverConfig::fixed(0).substeps_for(0, 1.0).is_err());
    }

    #[test]
    fn state_requires_symmetric_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LnaState::new(DVector::zeros(2), cov, 0.0).is_err());
        assert!(LnaState::new(DVector::zeros(2), DMatrix::identity(3, 3), 0.0).is_err());
    }
}
