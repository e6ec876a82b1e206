//! Config-driven experiments: simulate synthetic data, run samplers over a
//! replication × cell grid, check gradients, and summarise chains.
//!
//! Every random stream is derived from the master seed with
//! [`derive_seed`]`(master, rep, slot)`:
//!
//! | slot            | stream                                   |
//! |-----------------|------------------------------------------|
//! | `0`             | measurement noise of replication `rep`   |
//! | `1 + m`         | SSA path of batch element `m`            |
//! | `1000 + c`      | chain of sampler cell `c`                |
//! | `2000`          | prior draws of `gradcheck` (`rep = 0`)   |
//!
//! so any single cell of any replication can be re-run on its own.

mod evaluate;
mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lna::{LikelihoodVariant, LnaState, SolverConfig};
use crate::network::ReactionNetwork;
use crate::observation::ObservationModel;
use crate::posterior::Priors;
use crate::sampler::{Algorithm, SamplerConfig};

pub use evaluate::{evaluate, mean_ci, read_chain_csv, ChainFile, CoordinateSummary, EvaluateReport, Truth};
pub use run::{
    chain_file_name, dataset_file_name, gradcheck, infer, read_datasets, simulate, summary_file_name, GradcheckDraw,
    GradcheckReport, InferSummary, GRADCHECK_STEP,
};

/// Environment variable holding the worker-pool size for `infer`.
pub const WORKERS_ENV: &str = "SRN_LNA_WORKERS";

pub const SLOT_NOISE: u32 = 0;
pub const SLOT_SSA: u32 = 1;
pub const SLOT_CELL: u32 = 1000;
pub const SLOT_GRADCHECK: u32 = 2000;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `slot` in replication `rep`.
pub fn derive_seed(master: u64, rep: u32, slot: u32) -> u64 {
    splitmix64(splitmix64(master) ^ ((u64::from(rep) << 32) | u64::from(slot)))
}

/// Observed species: one set for every time, or one set per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservedSpec {
    All(Vec<usize>),
    PerTime(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    /// Explicit observation times; otherwise `t0 + h·dt`, `h = 0..=horizon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// 1-based species indices.
    pub observed: ObservedSpec,
    #[serde(default = "one")]
    pub batch: usize,
    /// Noise variance per observed species, keyed by 1-based index.
    pub sigma: BTreeMap<String, f64>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LnaInitSpec {
    pub mean: Vec<f64>,
    /// Row-major covariance; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

/// One sampler cell: an algorithm paired with a likelihood variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub name: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub likelihood_variant: LikelihoodVariant,
    pub step_size: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
}

impl CellSpec {
    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            step_size: self.step_size,
            burn_in: self.burn_in,
            samples: self.samples,
            thin: self.thin,
            algorithm: self.algorithm,
            likelihood_variant: self.likelihood_variant,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Network JSON, relative to the config file's directory.
    pub network: PathBuf,
    pub theta_true: Vec<f64>,
    /// Initial molecule counts of the simulated paths.
    pub initial_counts: Vec<i64>,
    pub t_end: f64,
    pub observation: ObservationSpec,
    pub lna_init: LnaInitSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub priors: Priors,
    pub samplers: Vec<CellSpec>,
    pub replications: usize,
    pub seed: u64,
    /// Used when no output directory is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Include the log-Jacobian in the log-space target.
    #[serde(default = "yes")]
    pub include_jacobian: bool,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("experiment config: {e}")))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        let o = &self.observation;
        let times = match (&o.times, o.dt, o.horizon) {
            (Some(t), None, None) => t.clone(),
            (None, Some(dt), Some(h)) => (0..=h).map(|i| o.t0 + i as f64 * dt).collect(),
            _ => {
                return Err(Error::Invalid(
                    "observation schedule needs either `times` or both `dt` and `horizon`".into(),
                ))
            }
        };
        let to_zero = |set: &[usize]| -> Result<Vec<usize>> {
            set.iter()
                .map(|&s| {
                    s.checked_sub(1)
                        .ok_or_else(|| Error::Invalid("species indices are 1-based".into()))
                })
                .collect()
        };
        let sets = match &o.observed {
            ObservedSpec::All(set) => vec![to_zero(set)?; times.len()],
            ObservedSpec::PerTime(sets) => sets.iter().map(|s| to_zero(s)).collect::<Result<_>>()?,
        };
        let mut noise = BTreeMap::new();
        for (k, v) in &o.sigma {
            let idx: usize = k
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| Error::Invalid(format!("sigma key `{k}` is not a 1-based species index")))?;
            noise.insert(idx - 1, *v);
        }
        ObservationModel::new(times, sets, o.batch, noise)
    }

    pub fn lna_state(&self, t0: f64) -> Result<LnaState> {
        let j = self.lna_init.mean.len();
        let cov = match &self.lna_init.cov {
            None => DMatrix::identity(j, j),
            Some(rows) => {
                if rows.len() != j || rows.iter().any(|r| r.len() != j) {
                    return Err(Error::Dimension(format!("LNA covariance must be {j}×{j}")));
                }
                DMatrix::from_fn(j, j, |a, b| rows[a][b])
            }
        };
        LnaState::new(DVector::from_vec(self.lna_init.mean.clone()), cov, t0)
    }

    /// Structural checks against the loaded network.
    pub fn validate(&self, net: &ReactionNetwork) -> Result<()> {
        let j = net.species_count();
        if self.samplers.is_empty() {
            return Err(Error::Invalid("at least one sampler cell is required".into()));
        }
        if self.replications == 0 {
            return Err(Error::Invalid("replications must be at least 1".into()));
        }
        let mut names: Vec<&str> = self.samplers.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.samplers.len() {
            return Err(Error::Invalid("sampler cell names must be unique".into()));
        }
        for cell in &self.samplers {
            if cell.name.is_empty() || !cell.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Invalid(format!("cell name `{}` must be [A-Za-z0-9_-]+", cell.name)));
            }
            cell.sampler_config(0).validate()?;
        }
        if self.theta_true.len() != net.param_count() {
            return Err(Error::Dimension(format!(
                "theta_true has {} entries, network has {} kinetic constants",
                self.theta_true.len(),
                net.param_count()
            )));
        }
        if self.initial_counts.len() != j || self.lna_init.mean.len() != j {
            return Err(Error::Dimension(format!("initial counts and LNA mean must have {j} entries")));
        }
        if self.initial_counts.iter().any(|&x| x < 0) {
            return Err(Error::Invalid("initial counts must be nonnegative".into()));
        }
        let model = self.observation_model()?;
        if model.observed_species().last().is_some_and(|&s| s >= j) {
            return Err(Error::Dimension(format!("observed species index exceeds the {j} species")));
        }
        if model.times.last().is_some_and(|&t| t > self.t_end) {
            return Err(Error::Invalid("observation times extend past t_end".into()));
        }
        if self.priors.theta.len() != net.param_count() || self.priors.sigma.len() != model.observed_species().len() {
            return Err(Error::Dimension("one prior per kinetic constant and per noise variance is required".into()));
        }
        self.lna_state(0.0)?;
        Ok(())
    }
}

/// A parsed config together with its network and derived objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub net: ReactionNetwork,
    pub model: ObservationModel,
    /// First 16 hex digits of SHA-256 over the config and the network.
    pub config_hash: String,
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = ExperimentConfig::from_json_str(&text).map_err(|e| Error::format(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(config, base)
    }

    /// `base` resolves a relative network path.
    pub fn from_config(config: ExperimentConfig, base: &Path) -> Result<Self> {
        let net_path = if config.network.is_absolute() { config.network.clone() } else { base.join(&config.network) };
        let net = ReactionNetwork::from_file(&net_path)?;
        Self::with_network(config, net)
    }

    pub fn with_network(config: ExperimentConfig, net: ReactionNetwork) -> Result<Self> {
        config.validate(&net)?;
        let model = config.observation_model()?;
        let config_hash = config_hash(&config, &net);
        Ok(Self {
            config,
            net,
            model,
            config_hash,
        })
    }

    pub fn lna_init(&self) -> LnaState {
        self.config.lna_state(self.model.times[0]).expect("validated")
    }

    /// Column names of `log η`: `log_<param>` then `log_sigma_<species>`.
    pub fn log_names(&self) -> Vec<String> {
        self.net
            .param_names()
            .iter()
            .map(|n| format!("log_{n}"))
            .chain(self.model.observed_species().iter().map(|j| format!("log_sigma_{}", j + 1)))
            .collect()
    }

    /// Header lines shared by every output file.
    pub fn provenance_lines(&self, seed: u64) -> String {
        format!("config_hash: {}\nseed: {seed}\nmaster_seed: {}", self.config_hash, self.config.seed)
    }
}

/// SHA-256 over the serialised config followed by the serialised network.
pub fn config_hash(config: &ExperimentConfig, net: &ReactionNetwork) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(config).expect("config serialises").as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(&net.to_file_spec()).expect("network serialises").as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_across_slots_and_reps() {
        let mut seen = std::collections::HashSet::new();
        for rep in 0..10 {
            for slot in [0, 1, 2, 1000, 1001, 1002, 2000] {
                assert!(seen.insert(derive_seed(42, rep, slot)));
            }
        }
        assert_eq!(derive_seed(42, 3, 1001), derive_seed(42, 3, 1001));
        assert_ne!(derive_seed(42, 0, 0), derive_seed(43, 0, 0));
    }
}
