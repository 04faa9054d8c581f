//! Run manifests: enough to rerun an experiment and check its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::{
    failures_csv, rows_csv, run_experiment, summary_csv, timings_csv, DerivedSeed,
    ExperimentConfig, ExperimentOutcome, SEED_RULE,
};
use crate::io::{read_file, write_file};

pub const TOOL_NAME: &str = "starrec";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub seed_rule: String,
    pub derived_seeds: Vec<DerivedSeed>,
    /// File name to hex SHA-256, for outputs that must reproduce bitwise.
    pub digests: BTreeMap<String, String>,
    /// Written alongside but not expected to reproduce.
    pub volatile_outputs: Vec<String>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The reproducible files of a run, by name.
pub fn reproducible_outputs(
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
) -> Result<Vec<(String, String)>> {
    let c = config.stationary()?.c();
    Ok(vec![
        ("rows.csv".into(), rows_csv(&outcome.rows, c)),
        ("summary.csv".into(), summary_csv(&outcome.summary, c)),
        ("failures.csv".into(), failures_csv(&outcome.failures)),
    ])
}

pub fn build_manifest(config: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<Manifest> {
    let digests = reproducible_outputs(config, outcome)?
        .into_iter()
        .map(|(name, body)| (name, sha256_hex(body.as_bytes())))
        .collect();
    Ok(Manifest {
        tool: TOOL_NAME.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        master_seed: config.seed,
        seed_rule: SEED_RULE.into(),
        derived_seeds: outcome.seeds.clone(),
        digests,
        volatile_outputs: vec!["timings.csv".into()],
    })
}

/// Writes every output and the manifest into `config.output_dir`.
pub fn emit(config: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<Manifest> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    for (name, body) in reproducible_outputs(config, outcome)? {
        write_file(&dir.join(name), &body)?;
    }
    write_file(&dir.join("timings.csv"), &timings_csv(&outcome.rows))?;
    let manifest = build_manifest(config, outcome)?;
    write_file(&dir.join(MANIFEST_FILE), &manifest.to_json()?)?;
    Ok(manifest)
}

/// Runs the experiment and persists it.
pub fn run_and_emit(config: &ExperimentConfig) -> Result<(ExperimentOutcome, Manifest)> {
    let outcome = run_experiment(config)?;
    let manifest = emit(config, &outcome)?;
    Ok((outcome, manifest))
}

/// Names of digests that differ between two manifests.
pub fn digest_mismatches(expected: &Manifest, actual: &Manifest) -> Vec<String> {
    let mut names: Vec<String> = expected
        .digests
        .iter()
        .filter(|(name, digest)| actual.digests.get(*name) != Some(digest))
        .map(|(name, _)| name.clone())
        .collect();
    names.extend(
        actual
            .digests
            .keys()
            .filter(|name| !expected.digests.contains_key(*name))
            .cloned(),
    );
    names
}
