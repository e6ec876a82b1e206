//! Python bindings: networks, simulation, datasets, the LNA posterior and
//! its gradient, chains, RMSE and the config-driven experiment pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use srn_lna::experiment::{self, derive_seed, Experiment, Truth, SLOT_NOISE, SLOT_SSA};
use srn_lna::lna::{filter, FilterOptions};
use srn_lna::observation::{observe, read_dataset, write_dataset};
use srn_lna::posterior::Posterior;
use srn_lna::sampler::{rmse_of_samples, run_chain};
use srn_lna::ssa::ssa_simulate;
use srn_lna::{
    Algorithm, Chain, Dataset, Error, LikelihoodVariant, LnaState, ObservationModel, ParameterVector, Prior, Priors,
    Reaction, ReactionNetwork, SamplerConfig, SolverConfig,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn variant(name: &str) -> PyResult<LikelihoodVariant> {
    match name {
        "bayesian_updating" => Ok(LikelihoodVariant::BayesianUpdating),
        "original_lna" => Ok(LikelihoodVariant::OriginalLna),
        _ => Err(PyValueError::new_err(format!("unknown likelihood variant `{name}`"))),
    }
}

fn algorithm(name: &str) -> PyResult<Algorithm> {
    match name {
        "mala" => Ok(Algorithm::Mala),
        "mh" => Ok(Algorithm::Mh),
        _ => Err(PyValueError::new_err(format!("unknown algorithm `{name}`"))),
    }
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> PyResult<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("{what} must be {n} x {n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[pyclass(name = "ReactionNetwork", frozen)]
struct PyNetwork {
    inner: ReactionNetwork,
}

impl PyNetwork {
    fn check(&self, s: &[f64], theta: &[f64]) -> PyResult<()> {
        if s.len() != self.inner.species_count() || theta.len() != self.inner.param_count() {
            return Err(PyValueError::new_err(format!(
                "expected {} species and {} parameters",
                self.inner.species_count(),
                self.inner.param_count()
            )));
        }
        Ok(())
    }
}

#[pymethods]
impl PyNetwork {
    /// Mass-action network from reactant and product coefficient rows and
    /// the rate-constant index of each reaction.
    #[new]
    #[pyo3(signature = (reactants, products, rate_params, species_count, system_size = 1.0))]
    fn new(
        reactants: Vec<Vec<u32>>,
        products: Vec<Vec<u32>>,
        rate_params: Vec<usize>,
        species_count: usize,
        system_size: f64,
    ) -> PyResult<Self> {
        if reactants.len() != products.len() || reactants.len() != rate_params.len() {
            return Err(PyValueError::new_err("reactants, products and rate_params differ in length"));
        }
        let reactions = reactants
            .into_iter()
            .zip(products)
            .zip(rate_params)
            .map(|((r, p), k)| Reaction::new(r, p, k))
            .collect();
        Ok(Self {
            inner: ReactionNetwork::new(reactions, species_count, system_size).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn michaelis_menten() -> Self {
        Self {
            inner: ReactionNetwork::michaelis_menten(),
        }
    }

    #[staticmethod]
    fn birth_death() -> Self {
        Self {
            inner: ReactionNetwork::birth_death(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ReactionNetwork::from_json_str(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ReactionNetwork::from_file(path).map_err(py_err)?,
        })
    }

    #[getter]
    fn species_count(&self) -> usize {
        self.inner.species_count()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn reaction_count(&self) -> usize {
        self.inner.reaction_count()
    }

    #[getter]
    fn species_names(&self) -> Vec<String> {
        self.inner.species_names().to_vec()
    }

    #[getter]
    fn stoichiometry(&self) -> Vec<Vec<f64>> {
        rows(self.inner.stoichiometry())
    }

    fn reaction_rates(&self, s: Vec<f64>, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&s, &theta)?;
        Ok(self.inner.reaction_rates(&s, &theta).iter().copied().collect())
    }

    fn drift(&self, s: Vec<f64>, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(&s, &theta)?;
        Ok(self.inner.drift(&s, &theta).iter().copied().collect())
    }

    fn diffusion(&self, s: Vec<f64>, theta: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.check(&s, &theta)?;
        Ok(rows(&self.inner.diffusion_matrix(&s, &theta)))
    }

    /// Exact SSA path: `(times, states)` with the initial state at time 0
    /// followed by one row per event.
    fn simulate(
        &self,
        py: Python<'_>,
        theta: Vec<f64>,
        x0: Vec<i64>,
        t_end: f64,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<Vec<i64>>)> {
        let traj = py.detach(|| ssa_simulate(&self.inner, &theta, &x0, t_end, seed)).map_err(py_err)?;
        let times = std::iter::once(0.0).chain(traj.jump_times.iter().copied()).collect();
        let states = std::iter::once(traj.initial_state).chain(traj.states).collect();
        Ok((times, states))
    }

    fn __repr__(&self) -> String {
        format!(
            "ReactionNetwork(species={}, reactions={}, params={})",
            self.inner.species_count(),
            self.inner.reaction_count(),
            self.inner.param_count()
        )
    }
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Simulate `batch` SSA paths and observe `observed` species (0-based)
    /// at `t0 + h dt`, `h = 0..=horizon`, with noise variances `sigma`.
    /// Seeds follow the experiment scheme for replication 0.
    #[staticmethod]
    #[pyo3(signature = (network, theta, x0, t0, dt, horizon, observed, sigma, seed, batch = 1))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        py: Python<'_>,
        network: PyRef<'_, PyNetwork>,
        theta: Vec<f64>,
        x0: Vec<i64>,
        t0: f64,
        dt: f64,
        horizon: usize,
        observed: Vec<usize>,
        sigma: BTreeMap<usize, f64>,
        seed: u64,
        batch: usize,
    ) -> PyResult<Self> {
        let net = &network.inner;
        let inner = py
            .detach(|| {
                let model = ObservationModel::regular(t0, dt, horizon, observed, batch, sigma)?;
                let t_end = model.times.last().copied().unwrap_or(t0).max(f64::MIN_POSITIVE);
                let trajs = (0..batch)
                    .map(|m| ssa_simulate(net, &theta, &x0, t_end, derive_seed(seed, 0, SLOT_SSA + m as u32)))
                    .collect::<srn_lna::Result<Vec<_>>>()?;
                observe(&trajs, &model, net.system_size(), derive_seed(seed, 0, SLOT_NOISE))
            })
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_dataset(path).map_err(py_err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.model.times.clone()
    }

    #[getter]
    fn observations(&self) -> Vec<Vec<f64>> {
        self.inner.observations.iter().map(|y| y.iter().copied().collect()).collect()
    }

    /// 0-based indices of every species observed at least once.
    #[getter]
    fn observed_species(&self) -> Vec<usize> {
        self.inner.model.observed_species()
    }

    fn __len__(&self) -> usize {
        self.inner.model.times.len()
    }
}

#[pyclass(name = "Chain", frozen)]
struct PyChain {
    inner: Chain,
}

#[pymethods]
impl PyChain {
    #[getter]
    fn acceptance_rate(&self) -> f64 {
        self.inner.acceptance_rate()
    }

    /// Retained log-scale samples, one row per retained iteration.
    #[getter]
    fn log_samples(&self) -> Vec<Vec<f64>> {
        self.inner.log_samples.clone()
    }

    #[getter]
    fn samples(&self) -> Vec<Vec<f64>> {
        self.inner.samples.clone()
    }

    #[getter]
    fn retained_iterations(&self) -> Vec<usize> {
        self.inner.retained_iterations.clone()
    }

    /// Every state, including the initial draw at index 0.
    #[getter]
    fn log_trace(&self) -> Vec<Vec<f64>> {
        self.inner.log_trace.clone()
    }

    #[getter]
    fn log_density_trace(&self) -> Vec<f64> {
        self.inner.log_density_trace.clone()
    }

    fn rmse(&self, truth_log: Vec<f64>) -> PyResult<Vec<f64>> {
        rmse(self.inner.log_samples.clone(), truth_log)
    }
}

/// Joint posterior of `(θ, σ)` under the LNA likelihood. Owns its inputs.
#[pyclass(name = "Posterior", frozen)]
struct PyPosterior {
    net: ReactionNetwork,
    data: Dataset,
    priors: Priors,
    init: LnaState,
    solver: SolverConfig,
    variant: LikelihoodVariant,
    include_jacobian: bool,
}

impl PyPosterior {
    fn posterior(&self) -> PyResult<Posterior<'_>> {
        Ok(Posterior::new(&self.net, &self.data, &self.priors, &self.init, &self.solver)
            .map_err(py_err)?
            .with_variant(self.variant)
            .with_jacobian(self.include_jacobian))
    }
}

#[pymethods]
impl PyPosterior {
    /// `priors` holds one `(lower, upper)` uniform bound pair per kinetic
    /// constant followed by one per observed species' noise variance.
    #[new]
    #[pyo3(signature = (network, dataset, priors, init_mean, init_cov = None, target_dz = 0.01, variant = "bayesian_updating", include_jacobian = true))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        network: PyRef<'_, PyNetwork>,
        dataset: PyRef<'_, PyDataset>,
        priors: Vec<(f64, f64)>,
        init_mean: Vec<f64>,
        init_cov: Option<Vec<Vec<f64>>>,
        target_dz: f64,
        variant: &str,
        include_jacobian: bool,
    ) -> PyResult<Self> {
        let net = network.inner.clone();
        let n = net.param_count();
        if priors.len() < n {
            return Err(PyValueError::new_err(format!("need at least {n} prior bounds")));
        }
        let to_prior = |&(lower, upper): &(f64, f64)| Prior::Uniform { lower, upper };
        let priors = Priors {
            theta: priors[..n].iter().map(to_prior).collect(),
            sigma: priors[n..].iter().map(to_prior).collect(),
        };
        let j = init_mean.len();
        let cov = match init_cov {
            Some(c) => matrix(&c, j, "init_cov")?,
            None => DMatrix::identity(j, j),
        };
        let data = dataset.inner.clone();
        let init = LnaState::new(DVector::from_vec(init_mean), cov, data.model.times[0]).map_err(py_err)?;
        let out = Self {
            net,
            data,
            priors,
            init,
            solver: SolverConfig::target_dz(target_dz),
            variant: self::variant(variant)?,
            include_jacobian,
        };
        out.posterior()?;
        Ok(out)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.priors.len()
    }

    /// LNA log-likelihood at `(θ, σ)`.
    fn log_likelihood(&self, py: Python<'_>, theta: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
        let params = ParameterVector::new(theta, sigma).map_err(py_err)?;
        let opts = FilterOptions {
            variant: self.variant,
            gradient: false,
            record: false,
        };
        py.detach(|| filter(&self.net, &self.data, &params, &self.init, &self.solver, opts))
            .map(|o| o.loglik)
            .map_err(py_err)
    }

    fn log_posterior(&self, py: Python<'_>, eta: Vec<f64>) -> PyResult<f64> {
        let post = self.posterior()?;
        py.detach(|| post.log_posterior(&eta)).map_err(py_err)
    }

    fn log_posterior_and_grad(&self, py: Python<'_>, eta: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let post = self.posterior()?;
        let (v, g) = py.detach(|| post.log_posterior_and_grad(&eta)).map_err(py_err)?;
        Ok((v, g.iter().copied().collect()))
    }

    /// Density of `x = log η` (with the log-Jacobian unless disabled).
    fn log_target(&self, py: Python<'_>, x: Vec<f64>) -> PyResult<f64> {
        let post = self.posterior()?;
        py.detach(|| post.log_target(&x)).map_err(py_err)
    }

    fn log_target_and_grad(&self, py: Python<'_>, x: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let post = self.posterior()?;
        let (v, g) = py.detach(|| post.log_target_and_grad(&x)).map_err(py_err)?;
        Ok((v, g.iter().copied().collect()))
    }

    /// One chain on `log η` started from a prior draw.
    #[pyo3(signature = (algorithm, step_size, burn_in, samples, thin, seed))]
    #[allow(clippy::too_many_arguments)]
    fn run_chain(
        &self,
        py: Python<'_>,
        algorithm: &str,
        step_size: f64,
        burn_in: usize,
        samples: usize,
        thin: usize,
        seed: u64,
    ) -> PyResult<PyChain> {
        let cfg = SamplerConfig {
            step_size,
            burn_in,
            samples,
            thin,
            algorithm: self::algorithm(algorithm)?,
            likelihood_variant: self.variant,
            seed,
        };
        let post = self.posterior()?;
        let priors = &self.priors;
        let inner = py
            .detach(|| run_chain(&post, |rng| priors.sample(rng).into_iter().map(f64::ln).collect(), &cfg))
            .map_err(py_err)?;
        Ok(PyChain { inner })
    }
}

/// Per-coordinate RMSE of log-samples around the true log-parameters.
#[pyfunction]
fn rmse(log_samples: Vec<Vec<f64>>, truth_log: Vec<f64>) -> PyResult<Vec<f64>> {
    if log_samples.is_empty() || log_samples.iter().any(|x| x.len() != truth_log.len()) {
        return Err(PyValueError::new_err("samples must be non-empty rows matching the truth's length"));
    }
    Ok(rmse_of_samples(&log_samples, &truth_log))
}

/// A config-driven experiment, as run by the command-line tool.
#[pyclass(name = "Experiment", frozen)]
struct PyExperiment {
    inner: Experiment,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Experiment::load(path).map_err(py_err)?,
        })
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.inner.config_hash.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config.seed
    }

    /// Chain column names: `log_theta1..`, `log_sigma_<species>`.
    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.log_names()
    }

    fn simulate(&self, py: Python<'_>, out: PathBuf) -> PyResult<Vec<PathBuf>> {
        py.detach(|| experiment::simulate(&self.inner, &out)).map_err(py_err)
    }

    /// Runs every cell on every dataset; returns `(cell, replication,
    /// acceptance_rate)` per chain.
    fn infer(&self, py: Python<'_>, data: PathBuf, out: PathBuf) -> PyResult<Vec<(String, usize, f64)>> {
        let summaries = py.detach(|| experiment::infer(&self.inner, &data, &out)).map_err(py_err)?;
        Ok(summaries.into_iter().map(|s| (s.cell, s.replication, s.acceptance_rate)).collect())
    }

    /// `(max_rel_error, passed)` over `draws` prior draws.
    #[pyo3(signature = (dataset, draws = 20, threshold = 1e-4))]
    fn gradcheck(&self, py: Python<'_>, dataset: PathBuf, draws: usize, threshold: f64) -> PyResult<(f64, bool)> {
        let ds = read_dataset(dataset).map_err(py_err)?;
        let report = py.detach(|| experiment::gradcheck(&self.inner, &ds, draws, threshold)).map_err(py_err)?;
        Ok((report.max_rel_error, report.passed()))
    }
}

type RmseRow = (String, String, f64, Option<f64>);

/// RMSE table from a directory of chains; returns `(cell, coordinate,
/// mean_rmse, ci_half_width)` rows and writes the CSV/JSON outputs.
#[pyfunction]
fn evaluate(py: Python<'_>, input: PathBuf, truth: PathBuf, out: PathBuf) -> PyResult<Vec<RmseRow>> {
    let truth = Truth::read(&truth).map_err(py_err)?;
    let report = py.detach(|| experiment::evaluate(&input, &truth, &out)).map_err(py_err)?;
    Ok(report.rows.into_iter().map(|r| (r.cell, r.coordinate, r.mean, r.half_width)).collect())
}

#[pymodule]
fn srn_lna_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
