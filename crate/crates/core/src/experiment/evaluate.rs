use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::sampler::rmse_of_samples;

/// True log-parameters keyed by chain column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub config_hash: String,
    pub seed: u64,
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    /// Noise variances keyed by 1-based species index.
    pub sigma: BTreeMap<String, f64>,
    pub log_truth: Vec<f64>,
}

impl Truth {
    pub fn from_experiment(exp: &Experiment) -> Self {
        let sigma: BTreeMap<String, f64> =
            exp.model.noise_variances.iter().map(|(j, v)| ((j + 1).to_string(), *v)).collect();
        let log_truth = exp
            .config
            .theta_true
            .iter()
            .chain(exp.model.noise_variances.values())
            .map(|v| v.ln())
            .collect();
        Self {
            config_hash: exp.config_hash.clone(),
            seed: exp.config.seed,
            names: exp.log_names(),
            theta: exp.config.theta_true.clone(),
            sigma,
            log_truth,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let truth: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if truth.names.len() != truth.log_truth.len() {
            return Err(Error::format(path, "names and log_truth differ in length"));
        }
        Ok(truth)
    }

    fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.log_truth[i])
    }
}

/// A chain CSV read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainFile {
    pub path: PathBuf,
    /// `key: value` pairs from the `# ` header lines.
    pub header: BTreeMap<String, String>,
    /// Log-parameter column names (without `iter`, `logpost`, `accepted`).
    pub names: Vec<String>,
    /// Log-parameter values, one row per iteration.
    pub rows: Vec<Vec<f64>>,
}

impl ChainFile {
    fn field<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.header
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(&self.path, format!("missing or malformed header field `{key}`")))
    }

    /// Rows kept after burn-in and thinning.
    pub fn retained(&self) -> Result<Vec<Vec<f64>>> {
        let (burn_in, samples, thin): (usize, usize, usize) =
            (self.field("burn_in")?, self.field("samples")?, self.field("thin")?);
        (0..samples)
            .map(|b| {
                self.rows
                    .get(burn_in + b * thin + 1)
                    .cloned()
                    .ok_or_else(|| Error::format(&self.path, "chain shorter than its burn-in and thinning imply"))
            })
            .collect()
    }
}

pub fn read_chain_csv(path: &Path) -> Result<ChainFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = BTreeMap::new();
    let mut lines = text.lines();
    let mut columns = None;
    for line in lines.by_ref() {
        if let Some(comment) = line.strip_prefix("# ") {
            if let Some((k, v)) = comment.split_once(": ") {
                header.insert(k.to_string(), v.to_string());
            }
        } else {
            columns = Some(line);
            break;
        }
    }
    let columns: Vec<&str> = columns.ok_or_else(|| Error::format(path, "no column header"))?.split(',').collect();
    let n = columns.len();
    if n < 4 || columns[0] != "iter" || columns[n - 2] != "logpost" || columns[n - 1] != "accepted" {
        return Err(Error::format(path, "expected columns iter, ..., logpost, accepted"));
    }
    let names: Vec<String> = columns[1..n - 2].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n {
            return Err(Error::format(path, format!("row {i} has {} fields, expected {n}", fields.len())));
        }
        let row = fields[1..n - 2]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {i}: {e}")))?;
        rows.push(row);
    }
    Ok(ChainFile {
        path: path.to_path_buf(),
        header,
        names,
        rows,
    })
}

/// Mean RMSE of one coordinate in one cell across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub cell: String,
    pub coordinate: String,
    pub replications: usize,
    pub mean: f64,
    /// 95% t-interval half-width; absent with fewer than two replications.
    pub half_width: Option<f64>,
    pub per_replication: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<CoordinateSummary>,
}

impl EvaluateReport {
    pub fn get(&self, cell: &str, coordinate: &str) -> Option<&CoordinateSummary> {
        self.rows.iter().find(|r| r.cell == cell && r.coordinate == coordinate)
    }
}

/// Mean and 95% t-interval half-width of `xs`.
pub fn mean_ci(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof ≥ 1").inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Summarise every `chain_*.csv` in `input` against `truth`; writes
/// `rmse_table.csv`, `rmse_table.json` and one `trace_<cell>.csv` per cell.
pub fn evaluate(input: &Path, truth: &Truth, out: &Path) -> Result<EvaluateReport> {
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("chain_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no chain_*.csv files in {}", input.display())));
    }

    let mut cells: BTreeMap<String, Vec<(usize, ChainFile)>> = BTreeMap::new();
    let mut config_hash: Option<String> = None;
    for path in &paths {
        let chain = read_chain_csv(path)?;
        let cell: String = chain.field("cell")?;
        let rep: usize = chain.field("replication")?;
        let hash: String = chain.field("config_hash")?;
        match &config_hash {
            None => config_hash = Some(hash),
            Some(h) if *h != hash => {
                return Err(Error::Invalid(format!("{} comes from a different config ({hash} vs {h})", path.display())))
            }
            Some(_) => {}
        }
        cells.entry(cell).or_default().push((rep, chain));
    }
    let config_hash = config_hash.expect("at least one chain");

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for (cell, chains) in &mut cells {
        chains.sort_by_key(|(rep, _)| *rep);
        let first = &chains[0].1;
        let names = first.names.clone();
        let shape = (first.rows.len(), first.header.get("burn_in"), first.header.get("samples"), first.header.get("thin"));
        for (_, c) in chains.iter() {
            if c.names != names || (c.rows.len(), c.header.get("burn_in"), c.header.get("samples"), c.header.get("thin")) != shape {
                return Err(Error::Dimension(format!(
                    "chain {} does not match the shape of {}",
                    c.path.display(),
                    first.path.display()
                )));
            }
        }
        let truth_log: Vec<f64> = names
            .iter()
            .map(|n| truth.value(n).ok_or_else(|| Error::Invalid(format!("truth has no value for `{n}`"))))
            .collect::<Result<_>>()?;
        let per_rep: Vec<Vec<f64>> =
            chains.iter().map(|(_, c)| Ok(rmse_of_samples(&c.retained()?, &truth_log))).collect::<Result<_>>()?;
        for (l, name) in names.iter().enumerate() {
            let xs: Vec<f64> = per_rep.iter().map(|r| r[l]).collect();
            let (mean, half_width) = mean_ci(&xs);
            rows.push(CoordinateSummary {
                cell: cell.clone(),
                coordinate: name.clone(),
                replications: xs.len(),
                mean,
                half_width,
                per_replication: xs,
            });
        }

        // per-iteration mean ± CI across replications
        let mut trace = format!("# config_hash: {config_hash}\n# seed: {}\n# cell: {cell}\niter", truth.seed);
        for n in &names {
            let _ = write!(trace, ",{n}_mean,{n}_lower,{n}_upper");
        }
        trace.push('\n');
        for it in 0..shape.0 {
            let _ = write!(trace, "{it}");
            for l in 0..names.len() {
                let xs: Vec<f64> = chains.iter().map(|(_, c)| c.rows[it][l]).collect();
                let (m, hw) = mean_ci(&xs);
                let (lo, hi) = hw.map_or((None, None), |h| (Some(m - h), Some(m + h)));
                let _ = write!(trace, ",{m},{},{}", fmt_opt(lo), fmt_opt(hi));
            }
            trace.push('\n');
        }
        let path = out.join(format!("trace_{cell}.csv"));
        std::fs::write(&path, trace).map_err(|e| Error::io(&path, e))?;
    }

    let report = EvaluateReport {
        config_hash: config_hash.clone(),
        seed: truth.seed,
        rows,
    };
    let mut table = format!("# config_hash: {config_hash}\n# seed: {}\ncell,coordinate,replications,mean_rmse,ci_half_width,ci_lower,ci_upper\n", truth.seed);
    for r in &report.rows {
        let (lo, hi) = r.half_width.map_or((None, None), |h| (Some(r.mean - h), Some(r.mean + h)));
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            r.cell,
            r.coordinate,
            r.replications,
            r.mean,
            fmt_opt(r.half_width),
            fmt_opt(lo),
            fmt_opt(hi)
        );
    }
    let path = out.join("rmse_table.csv");
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    let path = out.join("rmse_table.json");
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::format(&path, e))?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_interval_for_ten_replications() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (m, hw) = mean_ci(&xs);
        assert_eq!(m, 4.5);
        // t_{0.975, 9} = 2.262157..., sd = sqrt(55/6)
        let expect = 2.262_157_162_8 * (55.0f64 / 6.0 / 10.0).sqrt();
        assert!((hw.unwrap() - expect).abs() < 1e-8);
        assert_eq!(mean_ci(&[1.0; 10]).1, Some(0.0));
        assert_eq!(mean_ci(&[2.0]).1, None);
    }
}
