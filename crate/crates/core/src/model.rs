//! Probability kernel of the proportional substitution model on a star tree.
//!
//! Edge lengths are handled in the correlation parameterisation
//! `s = exp(-mu * t)`, under which the transition matrix is the mixture
//! `P_ij(s) = pi_j (1 - s) + [i = j] s`: with probability `s` the root state
//! is copied, otherwise a fresh state is drawn from `pi`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Absolute tolerance for every probability comparison in the crate.
pub const PROB_TOL: f64 = 1e-12;

const NUCLEOTIDES: [char; 4] = ['A', 'C', 'G', 'T'];

/// A character state. Stored zero-based; displayed and serialized one-based
/// (or as a nucleotide letter when asked to).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(transparent)]
pub struct State(u8);

impl State {
    /// Zero-based constructor used by the numerical code.
    pub fn from_index(index: usize) -> Self {
        assert!(index < 256, "state index {index} out of range");
        State(index as u8)
    }

    pub fn from_one_based(value: usize, c: usize) -> Result<Self> {
        if value == 0 || value > c {
            return Err(Error::domain(format!("state {value} outside 1..={c}")));
        }
        Ok(State::from_index(value - 1))
    }

    /// Accepts `1..=c`, or `A/C/G/T` (case-insensitive) when `c == 4`.
    pub fn parse(token: &str, c: usize) -> Result<Self> {
        let token = token.trim();
        if c == 4 && token.len() == 1 {
            let ch = token.chars().next().unwrap().to_ascii_uppercase();
            if let Some(pos) = NUCLEOTIDES.iter().position(|&l| l == ch) {
                return Ok(State::from_index(pos));
            }
        }
        let value: usize = token
            .parse()
            .map_err(|_| Error::Parse(format!("invalid state token {token:?}")))?;
        State::from_one_based(value, c)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn one_based(self) -> usize {
        self.0 as usize + 1
    }

    pub fn letter(self) -> Option<char> {
        NUCLEOTIDES.get(self.index()).copied()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.one_based())
    }
}

/// The known stationary (and root) distribution over `c >= 2` states.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    probs: Vec<f64>,
    ln_probs: Vec<f64>,
}

impl StationaryDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::domain("need at least two states"));
        }
        if probs.len() > 255 {
            return Err(Error::domain("at most 255 states are supported"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::domain(format!(
                "stationary probabilities must be strictly positive, found {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::domain(format!(
                "stationary probabilities sum to {total}, not 1"
            )));
        }
        let ln_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(StationaryDistribution { probs, ln_probs })
    }

    pub fn uniform(c: usize) -> Result<Self> {
        if c < 2 {
            return Err(Error::domain("need at least two states"));
        }
        StationaryDistribution::new(vec![1.0 / c as f64; c])
    }

    /// Number of states.
    pub fn c(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, state: State) -> f64 {
        self.probs[state.index()]
    }

    #[inline]
    pub fn ln_prob(&self, state: State) -> f64 {
        self.ln_probs[state.index()]
    }

    pub fn is_symmetric(&self) -> bool {
        let first = self.probs[0];
        self.probs.iter().all(|p| (p - first).abs() <= PROB_TOL)
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.c()).map(State::from_index)
    }

    pub(crate) fn check_state(&self, state: State) -> Result<()> {
        if state.index() >= self.c() {
            return Err(Error::domain(format!(
                "state {state} outside 1..={}",
                self.c()
            )));
        }
        Ok(())
    }

    /// Rate normalising edge lengths to expected substitutions per site:
    /// `mu = 1 / sum_j pi_j (1 - pi_j)`.
    pub fn mu(&self) -> f64 {
        1.0 / self.probs.iter().map(|p| p * (1.0 - p)).sum::<f64>()
    }
}

pub fn mu(pi: &StationaryDistribution) -> f64 {
    pi.mu()
}

fn check_unit(s: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::domain(format!("{what} = {s} outside [0, 1]")));
    }
    Ok(())
}

/// Unchecked kernel used in the hot loops.
#[inline]
pub(crate) fn p_ij(pi: &StationaryDistribution, i: State, j: State, s: f64) -> f64 {
    let stay = if i == j { s } else { 0.0 };
    pi.prob(j) * (1.0 - s) + stay
}

pub fn transition_prob(pi: &StationaryDistribution, i: State, j: State, s: f64) -> Result<f64> {
    pi.check_state(i)?;
    pi.check_state(j)?;
    check_unit(s, "s")?;
    Ok(p_ij(pi, i, j, s))
}

pub fn s_from_t(pi: &StationaryDistribution, t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::domain(format!("time {t} must be non-negative")));
    }
    Ok((-pi.mu() * t).exp())
}

/// Inverse of [`s_from_t`]. `s = 0` has no finite preimage and yields
/// [`Error::InfiniteTime`].
pub fn t_from_s(pi: &StationaryDistribution, s: f64) -> Result<f64> {
    check_unit(s, "s")?;
    if s == 0.0 {
        return Err(Error::InfiniteTime);
    }
    Ok(-s.ln() / pi.mu())
}

/// Edge-length configuration of the star tree, in `s`-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeSpec {
    /// Every edge shares one value.
    Constant { s: f64 },
    /// Limit law with finitely many atoms `(weight, s)`.
    Mixture { atoms: Vec<(f64, f64)> },
    /// One value per leaf.
    Empirical { values: Vec<f64> },
}

impl EdgeSpec {
    pub fn constant(s: f64) -> Result<Self> {
        check_unit(s, "s")?;
        if s <= 0.0 {
            return Err(Error::domain("mean edge correlation must be positive"));
        }
        Ok(EdgeSpec::Constant { s })
    }

    pub fn mixture(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::domain("mixture needs at least one atom"));
        }
        for &(w, s) in &atoms {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::domain(format!(
                    "mixture weight {w} must be positive"
                )));
            }
            check_unit(s, "s")?;
        }
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::domain(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let spec = EdgeSpec::Mixture { atoms };
        spec.check_mean()?;
        Ok(spec)
    }

    pub fn empirical(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain(
                "empirical edge spec needs at least one value",
            ));
        }
        for &s in &values {
            check_unit(s, "s")?;
        }
        let spec = EdgeSpec::Empirical { values };
        spec.check_mean()?;
        Ok(spec)
    }

    fn check_mean(&self) -> Result<()> {
        if self.mean() <= 0.0 {
            return Err(Error::domain("mean edge correlation must be positive"));
        }
        Ok(())
    }

    /// The law as weighted atoms; an empirical spec puts `1/n` on each value.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            EdgeSpec::Constant { s } => vec![(1.0, *s)],
            EdgeSpec::Mixture { atoms } => atoms.clone(),
            EdgeSpec::Empirical { values } => {
                let w = 1.0 / values.len() as f64;
                values.iter().map(|&s| (w, s)).collect()
            }
        }
    }

    pub fn moment(&self, k: i32) -> f64 {
        match self {
            EdgeSpec::Constant { s } => s.powi(k),
            EdgeSpec::Mixture { atoms } => atoms.iter().map(|(w, s)| w * s.powi(k)).sum(),
            EdgeSpec::Empirical { values } => {
                values.iter().map(|s| s.powi(k)).sum::<f64>() / values.len() as f64
            }
        }
    }

    /// First moment, written `s-bar` in the analysis.
    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2)
    }

    /// Per-leaf values, or `None` when the spec is a limit law.
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            EdgeSpec::Empirical { values } => Some(values),
            _ => None,
        }
    }
}

/// A candidate or true root sequence.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AncestralSequence {
    states: Vec<State>,
}

impl AncestralSequence {
    pub fn new(states: Vec<State>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::domain(
                "ancestral sequence must have at least one site",
            ));
        }
        Ok(AncestralSequence { states })
    }

    pub fn from_one_based(values: &[usize], c: usize) -> Result<Self> {
        let states = values
            .iter()
            .map(|&v| State::from_one_based(v, c))
            .collect::<Result<Vec<_>>>()?;
        AncestralSequence::new(states)
    }

    /// Parses `"AC"`, `"A,C"`, `"1,2"` or `"1 2"`.
    pub fn parse(text: &str, c: usize) -> Result<Self> {
        let text = text.trim();
        let compact = c == 4 && !text.is_empty() && text.chars().all(|ch| "ACGTacgt".contains(ch));
        let states = if compact {
            text.chars()
                .map(|ch| State::parse(&ch.to_string(), c))
                .collect::<Result<Vec<_>>>()?
        } else {
            text.split(|ch: char| ch == ',' || ch.is_whitespace())
                .filter(|tok| !tok.is_empty())
                .map(|tok| State::parse(tok, c))
                .collect::<Result<Vec<_>>>()?
        };
        AncestralSequence::new(states)
    }

    /// Decodes the `index`-th sequence in lexicographic order over `c^len`
    /// (first site most significant).
    pub fn from_rank(mut index: u64, c: usize, len: usize) -> Self {
        let mut states = vec![State::from_index(0); len];
        for slot in states.iter_mut().rev() {
            *slot = State::from_index((index % c as u64) as usize);
            index /= c as u64;
        }
        AncestralSequence { states }
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.states.iter().map(|s| s.one_based()).collect()
    }

    /// `"AC"` for nucleotide alphabets, `"1 2"` otherwise.
    pub fn label(&self, c: usize) -> String {
        if c == 4 {
            self.states.iter().filter_map(|s| s.letter()).collect()
        } else {
            self.states
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }

    pub(crate) fn check(&self, pi: &StationaryDistribution) -> Result<()> {
        self.states.iter().try_for_each(|&s| pi.check_state(s))
    }
}

impl fmt::Display for AncestralSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.states.iter().map(|s| s.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.one_based() as u64)
    }
}

impl Serialize for AncestralSequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.states.iter().map(|s| s.one_based()))
    }
}

impl<'de> Deserialize<'de> for AncestralSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<usize>::deserialize(deserializer)?;
        AncestralSequence::from_one_based(&values, 255).map_err(serde::de::Error::custom)
    }
}

/// Tip data: `n` leaves by `N` sites, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    c: usize,
    n_sites: usize,
    data: Vec<State>,
}

impl Alignment {
    pub fn new(c: usize, rows: Vec<Vec<State>>) -> Result<Self> {
        let n_sites = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || n_sites == 0 {
            return Err(Error::domain(
                "alignment needs at least one row and one site",
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * n_sites);
        for row in rows {
            if row.len() != n_sites {
                return Err(Error::LengthMismatch {
                    expected: n_sites,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        Alignment::from_flat(c, n_sites, data)
    }

    pub(crate) fn from_flat(c: usize, n_sites: usize, data: Vec<State>) -> Result<Self> {
        if c < 2 {
            return Err(Error::domain("need at least two states"));
        }
        if let Some(s) = data.iter().find(|s| s.index() >= c) {
            return Err(Error::domain(format!("state {s} outside 1..={c}")));
        }
        Ok(Alignment { c, n_sites, data })
    }

    pub fn c(&self) -> usize {
        self.c
    }

    /// Number of leaves, `n`.
    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_sites
    }

    /// Sequence length, `N`.
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn row(&self, k: usize) -> &[State] {
        &self.data[k * self.n_sites..(k + 1) * self.n_sites]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[State]> {
        self.data.chunks_exact(self.n_sites)
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> State {
        self.data[k * self.n_sites + l]
    }

    pub(crate) fn check_pi(&self, pi: &StationaryDistribution) -> Result<()> {
        if pi.c() != self.c {
            return Err(Error::domain(format!(
                "alignment has {} states but pi has {}",
                self.c,
                pi.c()
            )));
        }
        Ok(())
    }
}

/// Diagonal match counts `n(i,i)` between a root sequence and one tip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagCounts {
    pub per_state: Vec<usize>,
    pub total_sites: usize,
}

impl DiagCounts {
    pub fn matched(&self) -> usize {
        self.per_state.iter().sum()
    }

    /// `sum_i n(i,i) / pi_i`, the slope test of the edge-length solver.
    pub fn weighted(&self, pi: &StationaryDistribution) -> f64 {
        self.per_state
            .iter()
            .zip(pi.probs())
            .map(|(&n, p)| n as f64 / p)
            .sum()
    }
}

pub(crate) fn diag_counts_unchecked(rho: &[State], y: &[State], c: usize) -> DiagCounts {
    let mut per_state = vec![0usize; c];
    for (r, x) in rho.iter().zip(y) {
        if r == x {
            per_state[r.index()] += 1;
        }
    }
    DiagCounts {
        per_state,
        total_sites: rho.len(),
    }
}

pub fn diag_counts(rho: &AncestralSequence, y: &[State], c: usize) -> Result<DiagCounts> {
    if rho.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: rho.len(),
            found: y.len(),
        });
    }
    if let Some(s) = rho.states().iter().chain(y).find(|s| s.index() >= c) {
        return Err(Error::domain(format!("state {s} outside 1..={c}")));
    }
    Ok(diag_counts_unchecked(rho.states(), y, c))
}

/// `log P_{rho y}(s)`; `f64::NEG_INFINITY` when a factor is exactly zero.
pub fn seq_log_likelihood(
    pi: &StationaryDistribution,
    rho: &AncestralSequence,
    y: &[State],
    s: f64,
) -> Result<f64> {
    if rho.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: rho.len(),
            found: y.len(),
        });
    }
    check_unit(s, "s")?;
    rho.check(pi)?;
    y.iter().try_for_each(|&x| pi.check_state(x))?;
    Ok(rho
        .states()
        .iter()
        .zip(y)
        .map(|(&r, &x)| p_ij(pi, r, x, s).ln())
        .sum())
}

/// `C(y) = sum_l log pi_{y_l}`, the part of the likelihood that does not
/// depend on the root.
pub fn stationary_log_prob(pi: &StationaryDistribution, y: &[State]) -> f64 {
    y.iter().map(|&x| pi.ln_prob(x)).sum()
}

/// The same likelihood written through diagonal counts:
/// `sum_i n_ii log[pi_i + (1-pi_i)s] + (N - sum n_ii) log(1-s) - sum_i n_ii log pi_i + C(y)`.
pub fn log_likelihood_from_counts(
    pi: &StationaryDistribution,
    counts: &DiagCounts,
    stationary_term: f64,
    s: f64,
) -> f64 {
    let mut total = stationary_term;
    for (i, &n) in counts.per_state.iter().enumerate() {
        if n > 0 {
            let p = pi.probs()[i];
            total += n as f64 * ((p + (1.0 - p) * s).ln() - p.ln());
        }
    }
    let mismatched = counts.total_sites - counts.matched();
    if mismatched > 0 {
        total += mismatched as f64 * (1.0 - s).ln();
    }
    total
}
