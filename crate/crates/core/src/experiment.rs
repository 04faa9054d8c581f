//! Monte Carlo studies: simulate at several leaf counts, run each
//! estimator, tabulate how often the truth comes back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, search_space, EstimateResult, Method, DEFAULT_SEARCH_CAP};
use crate::io::fmt_f64;
use crate::model::{AncestralSequence, StationaryDistribution};
use crate::simulate::{derive_seed, simulate, EdgeSource, SimulationConfig};

fn default_cap() -> u64 {
    DEFAULT_SEARCH_CAP as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pi: Vec<f64>,
    pub rho_true: AncestralSequence,
    pub edge: EdgeSource,
    pub n_grid: Vec<usize>,
    pub estimators: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Largest `c^N` the MLE may enumerate.
    #[serde(default = "default_cap")]
    pub search_cap: u64,
}

impl ExperimentConfig {
    pub fn stationary(&self) -> Result<StationaryDistribution> {
        StationaryDistribution::new(self.pi.clone())
    }

    pub fn validate(&self) -> Result<StationaryDistribution> {
        let pi = self.stationary()?;
        self.rho_true.check(&pi)?;
        if self.replicates == 0 {
            return Err(Error::domain("replicates must be at least 1"));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return Err(Error::domain(
                "n_grid must be non-empty with positive entries",
            ));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("n_grid must be strictly increasing"));
        }
        if self.estimators.is_empty() {
            return Err(Error::domain("no estimators selected"));
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(Error::domain("estimator listed twice"));
        }
        for &n in &self.n_grid {
            let probe = SimulationConfig {
                pi: pi.clone(),
                rho_true: self.rho_true.clone(),
                n_leaves: n,
                edge: self.edge.clone(),
                seed: self.seed,
            };
            probe.validate()?;
        }
        Ok(pi)
    }
}

/// Seed for replicate `replicate` at leaf count `n`.
pub fn replicate_seed(seed: u64, n: usize, replicate: usize) -> u64 {
    derive_seed(seed, &[n as u64, replicate as u64])
}

pub const SEED_RULE: &str =
    "replicate_seed = derive_seed(seed, [n, replicate]) with a splitmix64 fold; \
leaf edges and sites draw from ChaCha8 streams keyed by (replicate_seed, leaf)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub estimator: Method,
    pub replicate: usize,
    pub recovered_truth: bool,
    pub rho_hat: AncestralSequence,
    pub log_score: Option<f64>,
    pub tied: bool,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub estimator: Method,
    pub replicates: usize,
    pub recovered: usize,
    pub accuracy: f64,
    /// `sqrt(p (1 - p) / R)`.
    pub std_error: f64,
    pub modal_answer: AncestralSequence,
    pub modal_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFailure {
    pub estimator: Method,
    pub n: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedSeed {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    /// Ordered by `(n, estimator, replicate)`.
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<EstimatorFailure>,
    pub seeds: Vec<DerivedSeed>,
}

impl ExperimentOutcome {
    pub fn summary_for(&self, n: usize, estimator: Method) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.n == n && s.estimator == estimator)
    }
}

fn to_row(
    n: usize,
    replicate: usize,
    truth: &AncestralSequence,
    result: EstimateResult,
) -> ExperimentRow {
    ExperimentRow {
        n,
        estimator: result.method,
        replicate,
        recovered_truth: result.rho_hat == *truth,
        rho_hat: result.rho_hat,
        log_score: result.log_score,
        tied: result.tied,
        wall_ms: result.wall_time * 1e3,
    }
}

fn summarize(rows: &[ExperimentRow], n: usize, estimator: Method) -> Option<SummaryRow> {
    let picked: Vec<&ExperimentRow> = rows
        .iter()
        .filter(|r| r.n == n && r.estimator == estimator)
        .collect();
    if picked.is_empty() {
        return None;
    }
    let total = picked.len();
    let recovered = picked.iter().filter(|r| r.recovered_truth).count();
    let accuracy = recovered as f64 / total as f64;
    let mut counts: BTreeMap<&AncestralSequence, usize> = BTreeMap::new();
    for r in &picked {
        *counts.entry(&r.rho_hat).or_default() += 1;
    }
    // Most frequent; first in lexicographic order among equals.
    let (modal, modal_count) = counts
        .iter()
        .fold(
            None::<(&AncestralSequence, usize)>,
            |best, (&rho, &k)| match best {
                Some((_, b)) if b >= k => best,
                _ => Some((rho, k)),
            },
        )
        .expect("non-empty");
    Some(SummaryRow {
        n,
        estimator,
        replicates: total,
        recovered,
        accuracy,
        std_error: (accuracy * (1.0 - accuracy) / total as f64).sqrt(),
        modal_answer: modal.clone(),
        modal_count,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let pi = config.validate()?;
    let cap = config.search_cap as u128;

    let mut failures = Vec::new();
    let mut active: Vec<Method> = config.estimators.clone();
    active.sort();
    // Capacity depends only on c and N, so one check covers every n.
    if active.contains(&Method::Mle) {
        if let Err(e) = search_space(pi.c(), config.rho_true.len(), cap) {
            for &n in &config.n_grid {
                failures.push(EstimatorFailure {
                    estimator: Method::Mle,
                    n,
                    message: e.to_string(),
                });
            }
            active.retain(|&m| m != Method::Mle);
        }
    }
    if active.contains(&Method::Diff) && config.rho_true.len() < 2 {
        for &n in &config.n_grid {
            failures.push(EstimatorFailure {
                estimator: Method::Diff,
                n,
                message: "difference estimator needs at least two sites".into(),
            });
        }
        active.retain(|&m| m != Method::Diff);
    }

    let jobs: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect();
    let seeds: Vec<DerivedSeed> = jobs
        .iter()
        .map(|&(n, replicate)| DerivedSeed {
            n,
            replicate,
            seed: replicate_seed(config.seed, n, replicate),
        })
        .collect();

    let per_job: Vec<Vec<ExperimentRow>> = seeds
        .par_iter()
        .map(|job| -> Result<Vec<ExperimentRow>> {
            let sim = SimulationConfig {
                pi: pi.clone(),
                rho_true: config.rho_true.clone(),
                n_leaves: job.n,
                edge: config.edge.clone(),
                seed: job.seed,
            };
            let (_, alignment) = simulate(&sim)?;
            active
                .iter()
                .map(|&method| {
                    let result = estimate(method, &pi, &alignment, cap)?;
                    Ok(to_row(job.n, job.replicate, &config.rho_true, result))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<ExperimentRow> = per_job.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.n, r.estimator, r.replicate));

    let summary = config
        .n_grid
        .iter()
        .flat_map(|&n| active.iter().map(move |&m| (n, m)))
        .filter_map(|(n, m)| summarize(&rows, n, m))
        .collect();

    Ok(ExperimentOutcome {
        rows,
        summary,
        failures,
        seeds,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Deterministic per-replicate table; wall time lives in [`timings_csv`].
pub fn rows_csv(rows: &[ExperimentRow], c: usize) -> String {
    let mut out = String::from("n,estimator,replicate,recovered_truth,rho_hat,log_score,tied\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            r.estimator.name(),
            r.replicate,
            r.recovered_truth,
            r.rho_hat.label(c),
            opt(r.log_score),
            r.tied
        );
    }
    out
}

pub fn timings_csv(rows: &[ExperimentRow]) -> String {
    let mut out = String::from("n,estimator,replicate,wall_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3}",
            r.n,
            r.estimator.name(),
            r.replicate,
            r.wall_ms
        );
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow], c: usize) -> String {
    let mut out = String::from(
        "n,estimator,replicates,recovered,accuracy,std_error,modal_answer,modal_count\n",
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.n,
            s.estimator.name(),
            s.replicates,
            s.recovered,
            fmt_f64(s.accuracy),
            fmt_f64(s.std_error),
            s.modal_answer.label(c),
            s.modal_count
        );
    }
    out
}

pub fn failures_csv(failures: &[EstimatorFailure]) -> String {
    let mut out = String::from("estimator,n,message\n");
    for f in failures {
        let _ = writeln!(
            out,
            "{},{},\"{}\"",
            f.estimator.name(),
            f.n,
            f.message.replace('"', "'")
        );
    }
    out
}
