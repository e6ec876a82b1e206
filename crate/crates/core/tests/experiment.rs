mod common;

use std::path::Path;

use srn_lna::experiment::{self, evaluate, infer, simulate, Experiment, ExperimentConfig, Truth};
use srn_lna::Error;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn shipped_configs_round_trip() {
    let mut seen = 0;
    for entry in std::fs::read_dir(common::configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.ends_with(".json") || name.ends_with(".network.json") {
            continue;
        }
        let cfg = ExperimentConfig::from_json_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let again = ExperimentConfig::from_json_str(&cfg.to_json_string()).unwrap();
        assert_eq!(cfg, again, "{name}");
        Experiment::load(&path).unwrap();
        seen += 1;
    }
    assert!(seen >= 4);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let text = std::fs::read_to_string(common::configs_dir().join("birth_death.json")).unwrap();
    let bad = text.replacen("\"seed\"", "\"sead\"", 1);
    assert!(ExperimentConfig::from_json_str(&bad).is_err());
}

#[test]
fn pipeline_is_deterministic_and_declares_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_birth_death_config(dir.path());
    let exp = Experiment::load(&cfg).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let base = dir.path().join(run);
        simulate(&exp, &base.join("data")).unwrap();
        let summaries = infer(&exp, &base.join("data"), &base.join("chains")).unwrap();
        assert_eq!(summaries.len(), 4);
        let truth = Truth::read(&base.join("data/truth.json")).unwrap();
        let report = evaluate(&base.join("chains"), &truth, &base.join("eval")).unwrap();
        assert_eq!(report.rows.len(), 2 * 3);
        outputs.push([files(&base.join("data")), files(&base.join("chains")), files(&base.join("eval"))]);
    }
    assert_eq!(outputs[0], outputs[1]);

    let seed_line = format!("seed: {}", exp.config.seed);
    for group in &outputs[0] {
        for (name, bytes) in group {
            let text = String::from_utf8_lossy(bytes);
            assert!(text.contains(&exp.config_hash), "{name} lacks the config hash");
            assert!(text.contains("seed"), "{name} lacks a seed");
        }
    }
    let table = String::from_utf8_lossy(&outputs[0][2].iter().find(|(n, _)| n == "rmse_table.csv").unwrap().1).into_owned();
    assert!(table.contains(&seed_line));
}

#[test]
fn identical_chains_have_zero_half_width() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_birth_death_config(dir.path());
    let exp = Experiment::load(&cfg).unwrap();
    simulate(&exp, &dir.path().join("data")).unwrap();
    infer(&exp, &dir.path().join("data"), &dir.path().join("chains")).unwrap();

    let src = std::fs::read_to_string(dir.path().join("chains").join(experiment::chain_file_name("mh_updating", 0))).unwrap();
    let same = dir.path().join("same");
    std::fs::create_dir(&same).unwrap();
    for rep in 0..3 {
        let text = src.replace("# replication: 0", &format!("# replication: {rep}"));
        std::fs::write(same.join(experiment::chain_file_name("mh_updating", rep)), text).unwrap();
    }
    let truth = Truth::from_experiment(&exp);
    let report = evaluate(&same, &truth, &dir.path().join("eval")).unwrap();
    for row in &report.rows {
        assert_eq!(row.replications, 3);
        assert_eq!(row.half_width, Some(0.0), "{row:?}");
    }
}

#[test]
fn mismatched_chain_shapes_are_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_birth_death_config(dir.path());
    let exp = Experiment::load(&cfg).unwrap();
    simulate(&exp, &dir.path().join("data")).unwrap();
    let chains = dir.path().join("chains");
    infer(&exp, &dir.path().join("data"), &chains).unwrap();
    // drop the last row of one replication
    let path = chains.join(experiment::chain_file_name("mala_updating", 1));
    let text = std::fs::read_to_string(&path).unwrap();
    let trimmed: Vec<&str> = text.lines().collect();
    std::fs::write(&path, trimmed[..trimmed.len() - 1].join("\n") + "\n").unwrap();
    let err = evaluate(&chains, &Truth::from_experiment(&exp), &dir.path().join("eval")).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
}
