//! Bayesian inference for partially observed stochastic reaction networks.
//!
//! - [`network`]: mass-action networks, drift/diffusion and derivatives
//! - [`ssa`]: exact Gillespie simulation in counts
//! - [`observation`]: noisy partial observation and the dataset format
//! - [`lna`]: Bayesian-updating LNA likelihood with exact gradients
//! - [`posterior`]: priors and the (log-space) posterior target
//! - [`sampler`]: MALA / Metropolis-Hastings chains and RMSE
//! - [`experiment`]: config-driven simulate / infer / gradcheck / evaluate

pub mod error;
pub mod network;
pub mod observation;
pub mod ssa;
pub mod lna;
pub mod posterior;
pub mod sampler;
pub mod experiment;

pub use error::{Error, Result};
pub use lna::{LikelihoodVariant, LnaState, Sensitivities, SolverConfig};
pub use network::{ParameterVector, Reaction, ReactionNetwork};
pub use observation::{Dataset, ObservationModel};
pub use posterior::{Posterior, Prior, Priors};
pub use sampler::{Algorithm, Chain, SamplerConfig};
pub use ssa::Trajectory;
