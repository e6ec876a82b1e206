use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{derive_seed, worker_count, Experiment, ExperimentConfig, SLOT_CELL, SLOT_GRADCHECK, SLOT_NOISE, SLOT_SSA};
use crate::lna::LikelihoodVariant;
use crate::observation::{observe, read_dataset, write_dataset, Dataset, Provenance};
use crate::posterior::Posterior;
use crate::sampler::{rmse, run_posterior_chain, Algorithm};
use crate::ssa::{ssa_simulate, stream_rng};

/// Log-space step of the central differences in `gradcheck`.
pub const GRADCHECK_STEP: f64 = 1e-5;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn dataset_file_name(rep: usize) -> String {
    format!("dataset_rep{rep:03}.json")
}

/// One dataset per replication (plus the SSA paths and `truth.json`) in `out`.
pub fn simulate(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let cfg = &exp.config;
    let mut written = Vec::new();
    for rep in 0..cfg.replications {
        let r = rep as u32;
        let mut trajs = Vec::with_capacity(exp.model.batch_size);
        for m in 0..exp.model.batch_size {
            let seed = derive_seed(cfg.seed, r, SLOT_SSA + m as u32);
            let traj = ssa_simulate(&exp.net, &cfg.theta_true, &cfg.initial_counts, cfg.t_end, seed)?;
            let header = format!("{}\nreplication: {rep}\nbatch_element: {}", exp.provenance_lines(seed), m + 1);
            let path = out.join(format!("trajectory_rep{rep:03}_b{}.csv", m + 1));
            traj.write_csv(&path, Some(&header))?;
            written.push(path);
            trajs.push(traj);
        }
        let noise_seed = derive_seed(cfg.seed, r, SLOT_NOISE);
        let mut ds = observe(&trajs, &exp.model, exp.net.system_size(), noise_seed)?;
        ds.provenance = Some(Provenance {
            seed: noise_seed,
            theta: cfg.theta_true.clone(),
            config_hash: Some(exp.config_hash.clone()),
            replication: Some(rep),
        });
        let path = out.join(dataset_file_name(rep));
        write_dataset(&ds, &path)?;
        written.push(path);
    }
    let truth = super::Truth::from_experiment(exp);
    let path = out.join("truth.json");
    write_json(&path, &truth)?;
    written.push(path);
    Ok(written)
}

/// Datasets `dataset_repNNN.json` in `dir`, sorted by replication.
pub fn read_datasets(dir: &Path) -> Result<Vec<(usize, Dataset)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(rep) = name
            .strip_prefix("dataset_rep")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        found.push((rep, read_dataset(&path)?));
    }
    if found.is_empty() {
        return Err(Error::Invalid(format!("no dataset_repNNN.json files in {}", dir.display())));
    }
    found.sort_by_key(|(rep, _)| *rep);
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub config_hash: String,
    pub master_seed: u64,
    pub seed: u64,
    pub cell: String,
    pub replication: usize,
    pub algorithm: Algorithm,
    pub likelihood_variant: LikelihoodVariant,
    pub step_size: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub total_iterations: usize,
    pub acceptance_rate: f64,
    /// RMSE of the retained log-samples, when the dataset carries its truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<BTreeMap<String, f64>>,
    pub posterior_mean_log: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

/// `log η_true` from a dataset's provenance and noise variances.
fn dataset_log_truth(ds: &Dataset) -> Option<Vec<f64>> {
    let p = ds.provenance.as_ref()?;
    Some(p.theta.iter().chain(ds.model.noise_variances.values()).map(|v| v.ln()).collect())
}

pub fn chain_file_name(cell: &str, rep: usize) -> String {
    format!("chain_{cell}_rep{rep:03}.csv")
}

pub fn summary_file_name(cell: &str, rep: usize) -> String {
    format!("summary_{cell}_rep{rep:03}.json")
}

fn run_cell(exp: &Experiment, rep: usize, cell_idx: usize, ds: &Dataset, out: &Path) -> Result<InferSummary> {
    let cfg = &exp.config;
    let cell = &cfg.samplers[cell_idx];
    let seed = derive_seed(cfg.seed, rep as u32, SLOT_CELL + cell_idx as u32);
    let sampler = cell.sampler_config(seed);
    let init = cfg.lna_state(ds.model.times[0])?;
    let chain = run_posterior_chain(&exp.net, ds, &cfg.priors, &init, &cfg.solver, &sampler, cfg.include_jacobian)?;

    let names = exp.log_names();
    let mut header = exp.provenance_lines(seed);
    let _ = write!(
        header,
        "\ncell: {}\nreplication: {rep}\nalgorithm: {}\nlikelihood_variant: {}\nstep_size: {}\nburn_in: {}\nsamples: {}\nthin: {}",
        cell.name,
        serde_json::to_value(cell.algorithm).expect("enum").as_str().unwrap_or_default(),
        serde_json::to_value(cell.likelihood_variant).expect("enum").as_str().unwrap_or_default(),
        cell.step_size,
        cell.burn_in,
        cell.samples,
        cell.thin
    );
    write_text(&out.join(chain_file_name(&cell.name, rep)), &chain.to_csv(&names, Some(&header)))?;

    let b = chain.log_samples.len() as f64;
    let posterior_mean_log = names
        .iter()
        .enumerate()
        .map(|(l, n)| (n.clone(), chain.log_samples.iter().map(|x| x[l]).sum::<f64>() / b))
        .collect();
    let rmse = dataset_log_truth(ds)
        .filter(|t| t.len() == names.len())
        .map(|t| names.iter().cloned().zip(rmse(&chain, &t)).collect());
    let summary = InferSummary {
        config_hash: exp.config_hash.clone(),
        master_seed: cfg.seed,
        seed,
        cell: cell.name.clone(),
        replication: rep,
        algorithm: cell.algorithm,
        likelihood_variant: cell.likelihood_variant,
        step_size: cell.step_size,
        burn_in: cell.burn_in,
        samples: cell.samples,
        thin: cell.thin,
        total_iterations: sampler.total_iterations(),
        acceptance_rate: chain.acceptance_rate(),
        rmse,
        posterior_mean_log,
        config: cfg.clone(),
    };
    write_json(&out.join(summary_file_name(&cell.name, rep)), &summary)?;
    Ok(summary)
}

/// Run every sampler cell on every dataset in `data_dir`, in parallel over
/// the (replication, cell) grid. Results are ordered by replication, then cell.
pub fn infer(exp: &Experiment, data_dir: &Path, out: &Path) -> Result<Vec<InferSummary>> {
    create_dir(out)?;
    let datasets = read_datasets(data_dir)?;
    for (rep, ds) in &datasets {
        if ds.model.observed_species() != exp.model.observed_species() {
            return Err(Error::Dimension(format!(
                "dataset of replication {rep} observes different species than the config"
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..datasets.len())
        .flat_map(|d| (0..exp.config.samplers.len()).map(move |c| (d, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<InferSummary>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(d, c)| {
                let (rep, ds) = &datasets[d];
                run_cell(exp, *rep, c, ds, out).map_err(|e| {
                    Error::Invalid(format!("cell {} replication {rep}: {e}", exp.config.samplers[c].name))
                })
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckDraw {
    pub log_eta: Vec<f64>,
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config_hash: String,
    pub seed: u64,
    pub step: f64,
    pub threshold: f64,
    pub names: Vec<String>,
    pub draws: Vec<GradcheckDraw>,
    /// Prior draws redrawn because the filter failed or the density was not finite there.
    pub skipped: usize,
    /// Largest error over all draws; 0 for an empty report.
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.threshold
    }
}

/// Gradient comparison at `x`; `None` if any needed evaluation fails.
fn check_point(post: &Posterior<'_>, x: &[f64]) -> Option<GradcheckDraw> {
    let (value, grad) = post.log_target_and_grad(x).ok()?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    let mut fd = Vec::with_capacity(x.len());
    for l in 0..x.len() {
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[l] += GRADCHECK_STEP;
        dn[l] -= GRADCHECK_STEP;
        let (fu, fl) = (post.log_target(&up).ok()?, post.log_target(&dn).ok()?);
        if !(fu.is_finite() && fl.is_finite()) {
            return None;
        }
        fd.push((fu - fl) / (2.0 * GRADCHECK_STEP));
    }
    let analytic: Vec<f64> = grad.iter().copied().collect();
    let max_rel_error = analytic.iter().zip(&fd).map(|(&a, &f)| relative_error(a, f)).fold(0.0, f64::max);
    Some(GradcheckDraw {
        log_eta: x.to_vec(),
        analytic,
        finite_difference: fd,
        max_rel_error,
    })
}

/// Relative error of `a` against `f`, measured on the scale of the larger
/// of the two (components where both vanish count as exact).
fn relative_error(a: f64, f: f64) -> f64 {
    let scale = a.abs().max(f.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - f).abs() / scale
    }
}

/// Analytic vs central-difference gradient of the log-space posterior
/// target at `draws` prior samples. Draws where the posterior cannot be
/// evaluated (e.g. an unstable Euler recursion at extreme rates) are
/// redrawn, as when a chain is initialised, up to `1000 · draws` attempts.
pub fn gradcheck(exp: &Experiment, ds: &Dataset, draws: usize, threshold: f64) -> Result<GradcheckReport> {
    let cfg = &exp.config;
    let seed = derive_seed(cfg.seed, 0, SLOT_GRADCHECK);
    let init = cfg.lna_state(ds.model.times[0])?;
    let post = Posterior::new(&exp.net, ds, &cfg.priors, &init, &cfg.solver)?.with_jacobian(cfg.include_jacobian);
    let mut rng = stream_rng(seed, 0);
    let mut out = Vec::with_capacity(draws);
    let mut skipped = 0;
    let max_attempts = 1000 * draws;
    while out.len() < draws {
        if out.len() + skipped >= max_attempts {
            return Err(Error::InitRetries(max_attempts));
        }
        let x: Vec<f64> = cfg.priors.sample(&mut rng).into_iter().map(f64::ln).collect();
        match check_point(&post, &x) {
            Some(draw) => out.push(draw),
            None => skipped += 1,
        }
    }
    let max_rel_error = out.iter().map(|d| d.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        config_hash: exp.config_hash.clone(),
        seed,
        step: GRADCHECK_STEP,
        threshold,
        names: exp.log_names(),
        draws: out,
        skipped,
        max_rel_error,
    })
}
