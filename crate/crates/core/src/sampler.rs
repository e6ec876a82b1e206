//! MALA and random-walk Metropolis-Hastings over log-transformed parameters.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lna::{LikelihoodVariant, LnaState, SolverConfig};
use crate::network::ReactionNetwork;
use crate::observation::Dataset;
use crate::posterior::{Posterior, Priors};
use crate::ssa::stream_rng;

/// Unnormalized log density on `ℝ^L`. `-∞` marks points outside the support.
pub trait LogTarget {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    fn log_density_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Filter failures at a point (non-finite moments, degenerate innovation
/// covariance) make that point unreachable.
impl LogTarget for Posterior<'_> {
    fn dim(&self) -> usize {
        Posterior::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_target(x).unwrap_or(f64::NEG_INFINITY)
    }

    fn log_density_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self.log_target_and_grad(x) {
            Ok((v, g)) => (v, g.iter().copied().collect()),
            Err(_) => (f64::NEG_INFINITY, vec![0.0; x.len()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPoint {
    pub x: Vec<f64>,
    pub log_density: f64,
    /// Present for MALA chains.
    pub grad: Option<Vec<f64>>,
}

impl ChainPoint {
    pub fn evaluate<T: LogTarget + ?Sized>(target: &T, x: Vec<f64>, with_grad: bool) -> Self {
        if with_grad {
            let (log_density, grad) = target.log_density_and_grad(&x);
            Self {
                x,
                log_density,
                grad: Some(grad),
            }
        } else {
            let log_density = target.log_density(&x);
            Self {
                x,
                log_density,
                grad: None,
            }
        }
    }
}

fn log_proposal(to: &[f64], from: &[f64], grad_from: &[f64], step: f64) -> f64 {
    let sq: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| (t - f - step * g).powi(2))
        .sum();
    -sq / (4.0 * step)
}

/// `log γ` before the `min{0, ·}` for a Langevin move `x → x̃`.
pub fn mala_log_acceptance(
    x: &[f64],
    log_p: f64,
    grad: &[f64],
    x_new: &[f64],
    log_p_new: f64,
    grad_new: &[f64],
    step: f64,
) -> f64 {
    if !log_p_new.is_finite() || grad_new.iter().any(|g| !g.is_finite()) {
        return f64::NEG_INFINITY;
    }
    log_p_new - log_p + log_proposal(x, x_new, grad_new, step) - log_proposal(x_new, x, grad, step)
}

fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() <= log_ratio
}

/// One MALA transition: `x̃ = x + Δτ ∇log p(x) + √(2Δτ) ζ`, accepted with the
/// Metropolis-Hastings ratio of the asymmetric Langevin proposal.
pub fn mala_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    current: &ChainPoint,
    target: &T,
    step: f64,
    rng: &mut R,
) -> Result<(ChainPoint, bool)> {
    let grad = current.grad.as_deref().ok_or(Error::NonFiniteGradient)?;
    if grad.iter().any(|g| !g.is_finite()) || !current.log_density.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let scale = (2.0 * step).sqrt();
    let proposal: Vec<f64> = current
        .x
        .iter()
        .zip(grad)
        .map(|(x, g)| {
            let z: f64 = StandardNormal.sample(rng);
            x + step * g + scale * z
        })
        .collect();
    let candidate = ChainPoint::evaluate(target, proposal, true);
    let log_ratio = mala_log_acceptance(
        &current.x,
        current.log_density,
        grad,
        &candidate.x,
        candidate.log_density,
        candidate.grad.as_deref().unwrap_or(&[]),
        step,
    );
    Ok(if accept(rng, log_ratio) {
        (candidate, true)
    } else {
        (current.clone(), false)
    })
}

/// One random-walk step with proposal `N(x, 2Δτ I)`.
pub fn mh_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    current: &ChainPoint,
    target: &T,
    step: f64,
    rng: &mut R,
) -> Result<(ChainPoint, bool)> {
    if !current.log_density.is_finite() {
        return Err(Error::Invalid("random-walk step from a point outside the support".into()));
    }
    let scale = (2.0 * step).sqrt();
    let proposal: Vec<f64> = current
        .x
        .iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            x + scale * z
        })
        .collect();
    let candidate = ChainPoint::evaluate(target, proposal, false);
    let log_ratio = if candidate.log_density.is_finite() {
        candidate.log_density - current.log_density
    } else {
        f64::NEG_INFINITY
    };
    Ok(if accept(rng, log_ratio) {
        (candidate, true)
    } else {
        (current.clone(), false)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mala,
    Mh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub step_size: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub likelihood_variant: LikelihoodVariant,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Invalid("step size must be positive".into()));
        }
        if self.samples == 0 || self.thin == 0 {
            return Err(Error::Invalid("samples and thin must be at least 1".into()));
        }
        Ok(())
    }

    /// `T₀ + (B − 1)δ + 1` transitions.
    pub fn total_iterations(&self) -> usize {
        self.burn_in + (self.samples - 1) * self.thin + 1
    }

    /// Iteration indices `T₀ + (b − 1)δ + 1`, `b = 1..=B`, of the retained states.
    pub fn retained_iterations(&self) -> Vec<usize> {
        (0..self.samples).map(|b| self.burn_in + b * self.thin + 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Log-scale state at every iteration `0..=T` (index 0 is the initial draw).
    pub log_trace: Vec<Vec<f64>>,
    pub log_density_trace: Vec<f64>,
    /// Whether the move into iteration `τ` was accepted (`false` at `τ = 0`).
    pub accepted: Vec<bool>,
    pub retained_iterations: Vec<usize>,
    pub log_samples: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
    pub accept_count: usize,
    pub total_proposals: usize,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.total_proposals == 0 {
            0.0
        } else {
            self.accept_count as f64 / self.total_proposals as f64
        }
    }

    /// CSV with columns `iter, <names...>, logpost, accepted`.
    pub fn to_csv(&self, names: &[String], header: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        out.push_str("iter");
        for n in names {
            let _ = write!(out, ",{n}");
        }
        out.push_str(",logpost,accepted\n");
        for (i, x) in self.log_trace.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in x {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", self.log_density_trace[i], u8::from(self.accepted[i]));
        }
        out
    }
}

/// Run one chain. `init` draws a log-scale starting point; draws outside the
/// support are retried up to 1000 times.
pub fn run_chain<T, F>(target: &T, mut init: F, cfg: &SamplerConfig) -> Result<Chain>
where
    T: LogTarget + ?Sized,
    F: FnMut(&mut rand_chacha::ChaCha8Rng) -> Vec<f64>,
{
    const MAX_INIT_TRIES: usize = 1000;
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let with_grad = cfg.algorithm == Algorithm::Mala;
    let mut current = None;
    for _ in 0..MAX_INIT_TRIES {
        let point = ChainPoint::evaluate(target, init(&mut rng), with_grad);
        let grad_ok = point.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
        if point.log_density.is_finite() && grad_ok {
            current = Some(point);
            break;
        }
    }
    let mut current = current.ok_or(Error::InitRetries(MAX_INIT_TRIES))?;

    let total = cfg.total_iterations();
    let mut chain = Chain {
        log_trace: Vec::with_capacity(total + 1),
        log_density_trace: Vec::with_capacity(total + 1),
        accepted: Vec::with_capacity(total + 1),
        retained_iterations: cfg.retained_iterations(),
        log_samples: Vec::with_capacity(cfg.samples),
        samples: Vec::with_capacity(cfg.samples),
        accept_count: 0,
        total_proposals: 0,
    };
    chain.log_trace.push(current.x.clone());
    chain.log_density_trace.push(current.log_density);
    chain.accepted.push(false);
    for _ in 0..total {
        let (next, accepted) = match cfg.algorithm {
            Algorithm::Mala => mala_step(&current, target, cfg.step_size, &mut rng)?,
            Algorithm::Mh => mh_step(&current, target, cfg.step_size, &mut rng)?,
        };
        current = next;
        chain.total_proposals += 1;
        chain.accept_count += usize::from(accepted);
        chain.log_trace.push(current.x.clone());
        chain.log_density_trace.push(current.log_density);
        chain.accepted.push(accepted);
    }
    for &it in &chain.retained_iterations {
        let x = chain.log_trace[it].clone();
        chain.samples.push(x.iter().map(|v| v.exp()).collect());
        chain.log_samples.push(x);
    }
    Ok(chain)
}

/// Posterior chain on `log η` with the starting point drawn from the priors.
pub fn run_posterior_chain(
    net: &ReactionNetwork,
    data: &Dataset,
    priors: &Priors,
    init_lna: &LnaState,
    solver: &SolverConfig,
    cfg: &SamplerConfig,
    include_jacobian: bool,
) -> Result<Chain> {
    let posterior = Posterior::new(net, data, priors, init_lna, solver)?
        .with_variant(cfg.likelihood_variant)
        .with_jacobian(include_jacobian);
    run_chain(&posterior, |rng| priors.sample(rng).into_iter().map(f64::ln).collect(), cfg)
}

/// Per-coordinate RMSE of the retained log-samples around `truth_log`.
pub fn rmse(chain: &Chain, truth_log: &[f64]) -> Vec<f64> {
    rmse_of_samples(&chain.log_samples, truth_log)
}

pub fn rmse_of_samples(log_samples: &[Vec<f64>], truth_log: &[f64]) -> Vec<f64> {
    let b = log_samples.len() as f64;
    truth_log
        .iter()
        .enumerate()
        .map(|(l, t)| (log_samples.iter().map(|x| (x[l] - t).powi(2)).sum::<f64>() / b).sqrt())
        .collect()
}
