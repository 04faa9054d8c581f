//! Star-tree data generation.
//!
//! Every leaf gets its own ChaCha stream, keyed by `(seed, leaf)`, so the
//! output does not depend on how leaves are spread over worker threads.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Alignment, AncestralSequence, EdgeSpec, State, StationaryDistribution};

const EDGE_DOMAIN: u64 = 0x6564_6765;
const SITE_DOMAIN: u64 = 0x7369_7465;

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed`. Used for every derived seed in the crate.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

fn leaf_rng(seed: u64, domain: u64, leaf: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[domain]));
    rng.set_stream(leaf as u64);
    rng
}

/// Parametric law for iid edge lengths, in time units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EdgeLaw {
    PointMass { t: f64 },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl EdgeLaw {
    /// Builds a law from its name and parameters, e.g. `("exp", [1.0])`.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let law = match (name, params) {
            ("point" | "const", [t]) => EdgeLaw::PointMass { t: *t },
            ("exp" | "exponential", [rate]) => EdgeLaw::Exponential { rate: *rate },
            ("unif" | "uniform", [lo, hi]) => EdgeLaw::Uniform { lo: *lo, hi: *hi },
            _ => {
                return Err(Error::domain(format!(
                    "unsupported edge-length law {name:?} with {} parameter(s)",
                    params.len()
                )))
            }
        };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EdgeLaw::PointMass { t } => t.is_finite() && t >= 0.0,
            EdgeLaw::Exponential { rate } => rate.is_finite() && rate > 0.0,
            EdgeLaw::Uniform { lo, hi } => {
                lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid edge-length law {self:?}")))
        }
    }

    fn draw_time<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            EdgeLaw::PointMass { t } => t,
            EdgeLaw::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            EdgeLaw::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        }
    }
}

/// Where per-leaf edge lengths come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    /// A fixed `s`-space spec. Mixtures are sampled atom-by-atom per leaf;
    /// empirical specs are used as-is and must match the leaf count.
    Fixed(EdgeSpec),
    Iid(EdgeLaw),
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub pi: StationaryDistribution,
    pub rho_true: AncestralSequence,
    pub n_leaves: usize,
    pub edge: EdgeSource,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_leaves == 0 {
            return Err(Error::domain("need at least one leaf"));
        }
        self.rho_true.check(&self.pi)?;
        match &self.edge {
            EdgeSource::Iid(law) => law.validate(),
            EdgeSource::Fixed(EdgeSpec::Empirical { values }) if values.len() != self.n_leaves => {
                Err(Error::LengthMismatch {
                    expected: self.n_leaves,
                    found: values.len(),
                })
            }
            EdgeSource::Fixed(_) => Ok(()),
        }
    }
}

/// Per-leaf `s` values for the configured tree.
pub fn sample_edge_lengths(config: &SimulationConfig) -> Result<EdgeSpec> {
    config.validate()?;
    let n = config.n_leaves;
    let draw = |k: usize| -> f64 {
        let mut rng = leaf_rng(config.seed, EDGE_DOMAIN, k);
        match &config.edge {
            EdgeSource::Iid(law) => (-config.pi.mu() * law.draw_time(&mut rng)).exp(),
            EdgeSource::Fixed(EdgeSpec::Constant { s }) => *s,
            EdgeSource::Fixed(EdgeSpec::Empirical { values }) => values[k],
            EdgeSource::Fixed(EdgeSpec::Mixture { atoms }) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for &(w, s) in atoms {
                    acc += w;
                    if u < acc {
                        return s;
                    }
                }
                atoms.last().expect("non-empty mixture").1
            }
        }
    };
    // Realised draws may average to zero (e.g. a mixture atom at 0 with few
    // leaves), so the positive-mean check of `EdgeSpec::empirical` is skipped.
    let values: Vec<f64> = (0..n).into_par_iter().map(draw).collect();
    Ok(EdgeSpec::Empirical { values })
}

/// Evolves `rho_true` down each edge: per site, copy the root state with
/// probability `s_k`, otherwise redraw from `pi`.
pub fn simulate_alignment(
    pi: &StationaryDistribution,
    rho_true: &AncestralSequence,
    edges: &EdgeSpec,
    seed: u64,
) -> Result<Alignment> {
    rho_true.check(pi)?;
    let values = edges
        .values()
        .ok_or_else(|| Error::domain("simulation needs one edge value per leaf"))?;
    if let Some(bad) = values.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::domain(format!("edge value {bad} outside [0, 1]")));
    }
    let n_sites = rho_true.len();
    let redraw = WeightedIndex::new(pi.probs()).map_err(|e| Error::domain(e.to_string()))?;
    let mut data = vec![State::from_index(0); values.len() * n_sites];
    data.par_chunks_mut(n_sites)
        .zip(values.par_iter())
        .enumerate()
        .for_each(|(k, (row, &s))| {
            let mut rng = leaf_rng(seed, SITE_DOMAIN, k);
            for (slot, &root) in row.iter_mut().zip(rho_true.states()) {
                *slot = if rng.gen::<f64>() < s {
                    root
                } else {
                    State::from_index(redraw.sample(&mut rng))
                };
            }
        });
    Alignment::from_flat(pi.c(), n_sites, data)
}

/// Convenience: edge lengths then alignment, both from `config.seed`.
pub fn simulate(config: &SimulationConfig) -> Result<(EdgeSpec, Alignment)> {
    let edges = sample_edge_lengths(config)?;
    let alignment = simulate_alignment(&config.pi, &config.rho_true, &edges, config.seed)?;
    Ok((edges, alignment))
}

/// Site-pattern counts `n_y`.
pub fn pattern_counts(alignment: &Alignment) -> BTreeMap<Vec<State>, usize> {
    distinct_patterns(alignment)
        .into_iter()
        .map(|(y, n)| (y.to_vec(), n))
        .collect()
}

/// Distinct rows with multiplicities, sorted by pattern.
pub(crate) fn distinct_patterns(alignment: &Alignment) -> Vec<(&[State], usize)> {
    let mut counts: HashMap<&[State], usize> = HashMap::new();
    for row in alignment.rows() {
        *counts.entry(row).or_default() += 1;
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_unstable();
    out
}
