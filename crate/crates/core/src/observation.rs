//! Partial, asynchronous, noisy observation of trajectories and the dataset
//! file format.
//!
//! At time `t_h` the observation is `y_h = G_h s(t_h) + ε_h`, where `G_h`
//! stacks `M` copies of the selection rows `e_jᵀ` (`j ∈ J_h`) and `ε_h` has
//! diagonal covariance built from the per-species noise variances. Rows are
//! laid out batch-major: all of `J_h` for batch 0, then batch 1, ...
//!
//! Species are 0-based in memory and 1-based in dataset files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssa::{stream_rng, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub times: Vec<f64>,
    /// `J_h`, 0-based species indices per observation time.
    pub observed_sets: Vec<Vec<usize>>,
    pub batch_size: usize,
    /// Noise variance `σ_jj` keyed by 0-based species index.
    pub noise_variances: BTreeMap<usize, f64>,
}

impl ObservationModel {
    pub fn new(
        times: Vec<f64>,
        observed_sets: Vec<Vec<usize>>,
        batch_size: usize,
        noise_variances: BTreeMap<usize, f64>,
    ) -> Result<Self> {
        let model = Self {
            times,
            observed_sets,
            batch_size,
            noise_variances,
        };
        model.validate()?;
        Ok(model)
    }

    /// Same species observed at every time of a regular grid `t_0 + h·Δt`, `h = 0..=H`.
    pub fn regular(
        t0: f64,
        dt: f64,
        horizon: usize,
        observed: Vec<usize>,
        batch_size: usize,
        noise_variances: BTreeMap<usize, f64>,
    ) -> Result<Self> {
        let times = (0..=horizon).map(|h| t0 + h as f64 * dt).collect();
        Self::new(times, vec![observed; horizon + 1], batch_size, noise_variances)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::Invalid("at least one observation time is required".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("observation times must be strictly increasing".into()));
        }
        if self.observed_sets.len() != self.times.len() {
            return Err(Error::Dimension(format!(
                "{} observed sets for {} times",
                self.observed_sets.len(),
                self.times.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        for set in &self.observed_sets {
            if set.is_empty() {
                return Err(Error::Invalid("every observed set must be nonempty".into()));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != set.len() {
                return Err(Error::Invalid("duplicate species in an observed set".into()));
            }
        }
        let jy = self.observed_species();
        let keys: Vec<usize> = self.noise_variances.keys().copied().collect();
        if jy != keys {
            return Err(Error::Invalid(format!(
                "noise variances given for species {keys:?} but observed species are {jy:?}"
            )));
        }
        if self.noise_variances.values().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Invalid("noise variances must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `J_y`, sorted. The `σ` block of `η` follows this order.
    pub fn observed_species(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.observed_sets.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }

    pub fn obs_dim(&self, h: usize) -> usize {
        self.batch_size * self.observed_sets[h].len()
    }

    /// Species observed by each row of `y_h`.
    pub fn row_species(&self, h: usize) -> Vec<usize> {
        let set = &self.observed_sets[h];
        (0..self.batch_size).flat_map(|_| set.iter().copied()).collect()
    }

    /// Position in `σ` (the noise block of `η`) of each row of `y_h`.
    pub fn row_sigma_index(&self, h: usize) -> Vec<usize> {
        let jy = self.observed_species();
        self.row_species(h)
            .into_iter()
            .map(|j| jy.binary_search(&j).expect("row species is observed"))
            .collect()
    }

    /// The 0/1 matrix `G_h` (`M|J_h| × J`).
    pub fn selection_matrix(&self, h: usize, species_count: usize) -> DMatrix<f64> {
        let rows = self.row_species(h);
        let mut g = DMatrix::zeros(rows.len(), species_count);
        for (r, j) in rows.into_iter().enumerate() {
            g[(r, j)] = 1.0;
        }
        g
    }

    /// `Σ_h` for the noise block `sigma` (ordered like [`Self::observed_species`]).
    pub fn noise_covariance(&self, h: usize, sigma: &[f64]) -> DMatrix<f64> {
        let idx = self.row_sigma_index(h);
        DMatrix::from_diagonal(&DVector::from_iterator(idx.len(), idx.iter().map(|&i| sigma[i])))
    }

    /// Noise variances in `σ`-block order.
    pub fn sigma_vector(&self) -> Vec<f64> {
        self.noise_variances.values().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Macro-replication index within an experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replication: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub model: ObservationModel,
    pub observations: Vec<DVector<f64>>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(model: ObservationModel, observations: Vec<DVector<f64>>) -> Result<Self> {
        let ds = Self {
            model,
            observations,
            provenance: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.observations.len() != self.model.times.len() {
            return Err(Error::Dimension(format!(
                "{} observation vectors for {} times",
                self.observations.len(),
                self.model.times.len()
            )));
        }
        for (h, y) in self.observations.iter().enumerate() {
            if y.len() != self.model.obs_dim(h) {
                return Err(Error::Dimension(format!(
                    "y_{h} has {} entries, expected M·|J_h| = {}",
                    y.len(),
                    self.model.obs_dim(h)
                )));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            times: self.model.times.clone(),
            observed: self
                .model
                .observed_sets
                .iter()
                .map(|s| s.iter().map(|j| j + 1).collect())
                .collect(),
            batch: self.model.batch_size,
            sigma: self.model.noise_variances.iter().map(|(j, v)| ((j + 1).to_string(), *v)).collect(),
            y: self.observations.iter().map(|y| y.iter().copied().collect()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dataset(self, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_dataset(path)
    }
}

/// On-disk dataset layout (1-based species indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub times: Vec<f64>,
    pub observed: Vec<Vec<usize>>,
    pub batch: usize,
    pub sigma: BTreeMap<String, f64>,
    pub y: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetFile {
    pub fn into_dataset(self) -> Result<Dataset> {
        let to_zero_based = |j: usize| {
            j.checked_sub(1)
                .ok_or_else(|| Error::Invalid("species indices in dataset files are 1-based".into()))
        };
        let observed_sets = self
            .observed
            .iter()
            .map(|set| set.iter().map(|&j| to_zero_based(j)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut noise = BTreeMap::new();
        for (key, v) in &self.sigma {
            let j: usize = key
                .parse()
                .map_err(|_| Error::Invalid(format!("sigma key '{key}' is not a species index")))?;
            noise.insert(to_zero_based(j)?, *v);
        }
        let model = ObservationModel::new(self.times, observed_sets, self.batch, noise)?;
        let mut ds = Dataset::new(model, self.y.into_iter().map(DVector::from_vec).collect())?;
        ds.provenance = self.provenance;
        Ok(ds)
    }
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ds.to_file()).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    file.into_dataset().map_err(|e| match e {
        Error::Dimension(msg) => Error::Dimension(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Turn `M` independent trajectories (one per batch element) into a dataset:
/// cadlag state at each `t_h`, converted to concentrations, selected, plus
/// Gaussian noise drawn from `stream_rng(seed, 0)`.
pub fn observe(trajs: &[Trajectory], model: &ObservationModel, system_size: f64, seed: u64) -> Result<Dataset> {
    model.validate()?;
    if trajs.len() != model.batch_size {
        return Err(Error::Dimension(format!(
            "{} trajectories supplied for batch size {}",
            trajs.len(),
            model.batch_size
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut observations = Vec::with_capacity(model.times.len());
    for (h, &t) in model.times.iter().enumerate() {
        let set = &model.observed_sets[h];
        let mut y = Vec::with_capacity(model.obs_dim(h));
        for traj in trajs {
            let x = traj.state_at(t)?;
            for &j in set {
                if j >= x.len() {
                    return Err(Error::Dimension(format!("species index {j} out of range")));
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                y.push(x[j] as f64 / system_size + model.noise_variances[&j].sqrt() * z);
            }
        }
        observations.push(DVector::from_vec(y));
    }
    Dataset::new(model.clone(), observations)
}
