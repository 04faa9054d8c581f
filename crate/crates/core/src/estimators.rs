//! Root-sequence estimators: joint maximum likelihood (profiling out one
//! edge length per leaf), empirical Bayes, the site-difference estimator and
//! majority rule.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    diag_counts_unchecked, p_ij, Alignment, AncestralSequence, DiagCounts, State,
    StationaryDistribution,
};
use crate::simulate::distinct_patterns;

/// Two scores closer than this are treated as tied.
pub const TIE_TOL: f64 = 1e-9;

/// Default bound on `c^N` for exhaustive searches.
pub const DEFAULT_SEARCH_CAP: u128 = 1 << 20;

pub const EB_DEFAULT_TOL: f64 = 1e-10;
pub const EB_DEFAULT_MAX_ITER: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MLE")]
    Mle,
    #[serde(rename = "EB")]
    Eb,
    #[serde(rename = "DIFF")]
    Diff,
    #[serde(rename = "MAJORITY")]
    Majority,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mle, Method::Eb, Method::Diff, Method::Majority];

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "mle" => Ok(Method::Mle),
            "eb" => Ok(Method::Eb),
            "diff" => Ok(Method::Diff),
            "majority" => Ok(Method::Majority),
            other => Err(Error::Parse(format!("unknown method {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mle => "MLE",
            Method::Eb => "EB",
            Method::Diff => "DIFF",
            Method::Majority => "MAJORITY",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub rho_hat: AncestralSequence,
    /// Profile log-likelihood for MLE, log-posterior of `rho_hat` for EB.
    pub log_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub edge_estimates: Option<Vec<f64>>,
    pub tied: bool,
    /// Seconds.
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Picks the lexicographically smallest index whose score is within
/// [`TIE_TOL`] of the maximum. Returns `(index, tied)`.
fn argmax_lex(scores: &[f64]) -> (usize, bool) {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut near = scores
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= best - TIE_TOL)
        .map(|(i, _)| i);
    let first = near.next().expect("non-empty score list");
    (first, near.next().is_some())
}

fn check_inputs(pi: &StationaryDistribution, rho: &AncestralSequence, y: &[State]) -> Result<()> {
    if rho.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: rho.len(),
            found: y.len(),
        });
    }
    rho.check(pi)?;
    y.iter().try_for_each(|&x| pi.check_state(x))
}

/// Edge-length MLE from diagonal counts. Zero when the likelihood is
/// non-increasing at `s = 0`, one on a perfect match, otherwise the root of
/// `sum_i n_ii / (pi_i + (1 - pi_i) s) = N`.
pub fn mle_edge_length_from_counts(pi: &StationaryDistribution, counts: &DiagCounts) -> f64 {
    let n_sites = counts.total_sites as f64;
    if counts.weighted(pi) <= n_sites {
        return 0.0;
    }
    if counts.matched() == counts.total_sites {
        return 1.0;
    }
    let terms: Vec<(f64, f64)> = counts
        .per_state
        .iter()
        .zip(pi.probs())
        .filter(|(&n, _)| n > 0)
        .map(|(&n, &p)| (n as f64, p))
        .collect();
    let excess = |s: f64| -> f64 {
        terms
            .iter()
            .map(|&(n, p)| n / (p + (1.0 - p) * s))
            .sum::<f64>()
            - n_sites
    };
    // excess is strictly decreasing, positive at 0 and negative at 1.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if excess(lo).abs() <= excess(hi).abs() {
        lo
    } else {
        hi
    }
}

pub fn mle_edge_length(
    pi: &StationaryDistribution,
    rho: &AncestralSequence,
    y: &[State],
) -> Result<f64> {
    check_inputs(pi, rho, y)?;
    let counts = diag_counts_unchecked(rho.states(), y, pi.c());
    Ok(mle_edge_length_from_counts(pi, &counts))
}

/// `max_s log P_{rho y}(s)` together with the maximiser.
pub(crate) fn profiled_term(pi: &StationaryDistribution, rho: &[State], y: &[State]) -> (f64, f64) {
    let counts = diag_counts_unchecked(rho, y, pi.c());
    let s_hat = mle_edge_length_from_counts(pi, &counts);
    let value = rho
        .iter()
        .zip(y)
        .map(|(&r, &x)| p_ij(pi, r, x, s_hat).ln())
        .sum();
    (value, s_hat)
}

fn profile_over_patterns(
    pi: &StationaryDistribution,
    rho: &[State],
    patterns: &[(&[State], usize)],
) -> f64 {
    patterns
        .iter()
        .map(|&(y, n)| n as f64 * profiled_term(pi, rho, y).0)
        .sum()
}

/// `l(rho) = sum_y n_y log P_{rho y}(s_hat(rho, y))`.
pub fn profile_log_likelihood(
    pi: &StationaryDistribution,
    rho: &AncestralSequence,
    alignment: &Alignment,
) -> Result<f64> {
    alignment.check_pi(pi)?;
    check_inputs(pi, rho, alignment.row(0))?;
    Ok(profile_over_patterns(
        pi,
        rho.states(),
        &distinct_patterns(alignment),
    ))
}

pub(crate) fn search_space(c: usize, n_sites: usize, cap: u128) -> Result<u64> {
    let required = (c as u128).checked_pow(n_sites as u32).unwrap_or(u128::MAX);
    if required > cap || required > u64::MAX as u128 {
        return Err(Error::Capacity { required, cap });
    }
    Ok(required as u64)
}

/// Exhaustive joint MLE over all `c^N` root sequences.
pub fn mle_ancestral(
    pi: &StationaryDistribution,
    alignment: &Alignment,
    search_cap: u128,
) -> Result<EstimateResult> {
    let start = Instant::now();
    alignment.check_pi(pi)?;
    let (c, n_sites) = (pi.c(), alignment.n_sites());
    let total = search_space(c, n_sites, search_cap)?;
    let patterns = distinct_patterns(alignment);
    let scores: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|rank| {
            let rho = AncestralSequence::from_rank(rank, c, n_sites);
            profile_over_patterns(pi, rho.states(), &patterns)
        })
        .collect();
    let (best, tied) = argmax_lex(&scores);
    let rho_hat = AncestralSequence::from_rank(best as u64, c, n_sites);
    let edges = alignment
        .rows()
        .map(|y| profiled_term(pi, rho_hat.states(), y).1)
        .collect();
    Ok(EstimateResult {
        method: Method::Mle,
        rho_hat,
        log_score: Some(scores[best]),
        edge_estimates: Some(edges),
        tied,
        wall_time: start.elapsed().as_secs_f64(),
        warnings: Vec::new(),
    })
}

/// Running per-site sums of `log P_{x, y_kl}(s_k)` over leaves, kept as a
/// finite part plus a count of exactly-zero factors.
struct SiteSums {
    c: usize,
    finite: Vec<f64>,
    zeros: Vec<u32>,
}

impl SiteSums {
    fn new(n_sites: usize, c: usize) -> Self {
        SiteSums {
            c,
            finite: vec![0.0; n_sites * c],
            zeros: vec![0; n_sites * c],
        }
    }

    fn reset(&mut self) {
        self.finite.iter_mut().for_each(|v| *v = 0.0);
        self.zeros.iter_mut().for_each(|v| *v = 0);
    }

    /// Adds (`sign = 1.0`) or removes (`sign = -1.0`) one leaf.
    fn apply(&mut self, pi: &StationaryDistribution, row: &[State], s: f64, sign: f64) {
        let zero_step: i64 = if sign > 0.0 { 1 } else { -1 };
        let off_diag = if s < 1.0 { Some((1.0 - s).ln()) } else { None };
        for (l, &y) in row.iter().enumerate() {
            let base = l * self.c;
            let p_y = pi.prob(y);
            let stay = (p_y + (1.0 - p_y) * s).ln();
            for x in 0..self.c {
                let idx = base + x;
                if x == y.index() {
                    self.finite[idx] += sign * stay;
                } else {
                    match off_diag {
                        Some(ln_keep) => self.finite[idx] += sign * (pi.ln_prob(y) + ln_keep),
                        None => self.zeros[idx] = (self.zeros[idx] as i64 + zero_step) as u32,
                    }
                }
            }
        }
    }

    /// `log pi_x + sum_k log P_{x, y_kl}(s_k)` for site `l`, state `x`.
    fn joint(&self, pi: &StationaryDistribution, l: usize, x: usize) -> f64 {
        let idx = l * self.c + x;
        if self.zeros[idx] > 0 {
            f64::NEG_INFINITY
        } else {
            pi.probs()[x].ln() + self.finite[idx]
        }
    }

    fn site_log_marginal(&self, pi: &StationaryDistribution, l: usize) -> f64 {
        let scores: Vec<f64> = (0..self.c).map(|x| self.joint(pi, l, x)).collect();
        log_sum_exp(&scores)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Result of the empirical-Bayes edge-length fit.
#[derive(Clone, Debug, PartialEq)]
pub struct EbFit {
    pub s: Vec<f64>,
    /// Root-marginalised log-likelihood at `s`.
    pub log_marginal: f64,
    /// Objective after initialisation and after each sweep.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Leaves whose coordinate objective was flat; their `s` is set to 0.
    pub unidentified: Vec<bool>,
}

/// Maximises `log sum_x pi_x prod_k P_{x, y_kl}(s_k)` summed over sites.
/// Each coordinate is a sum of logs of affine functions of `s_k`, so it is
/// concave and is solved by bisection on the sign of its derivative.
pub fn eb_edge_lengths(
    pi: &StationaryDistribution,
    alignment: &Alignment,
    tol: f64,
    max_iter: usize,
) -> Result<EbFit> {
    alignment.check_pi(pi)?;
    let (n, n_sites, c) = (alignment.n_rows(), alignment.n_sites(), pi.c());
    let mut s = vec![0.5; n];
    let mut unidentified = vec![false; n];
    let mut sums = SiteSums::new(n_sites, c);
    let rebuild = |sums: &mut SiteSums, s: &[f64]| {
        sums.reset();
        for (k, row) in alignment.rows().enumerate() {
            sums.apply(pi, row, s[k], 1.0);
        }
        (0..n_sites)
            .map(|l| sums.site_log_marginal(pi, l))
            .sum::<f64>()
    };
    let mut objective = rebuild(&mut sums, &s);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut sweeps = 0;
    let mut a = vec![0.0; n_sites];
    let mut b = vec![0.0; n_sites];
    let mut w = vec![0.0; c];

    while sweeps < max_iter {
        sweeps += 1;
        for k in 0..n {
            let row = alignment.row(k);
            sums.apply(pi, row, s[k], -1.0);
            for (l, &y) in row.iter().enumerate() {
                for (x, slot) in w.iter_mut().enumerate() {
                    *slot = sums.joint(pi, l, x);
                }
                let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = w.iter().map(|v| (v - m).exp()).sum();
                a[l] = pi.prob(y) * total;
                b[l] = (w[y.index()] - m).exp() - a[l];
            }
            let (value, flat) = solve_affine_log_sum(&a, &b);
            s[k] = value;
            unidentified[k] = flat;
            sums.apply(pi, row, s[k], 1.0);
        }
        let next = rebuild(&mut sums, &s);
        trace.push(next);
        let change = (next - objective).abs();
        objective = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(EbFit {
        s,
        log_marginal: objective,
        trace,
        sweeps,
        converged,
        unidentified,
    })
}

/// Maximiser over `[0, 1]` of `sum_l log(a_l + b_l s)` with every `a_l > 0`.
/// Returns `(s, flat)`; a flat objective yields `s = 0`.
fn solve_affine_log_sum(a: &[f64], b: &[f64]) -> (f64, bool) {
    let flat = a
        .iter()
        .zip(b)
        .all(|(&a, &b)| b.abs() <= 1e-12 * (a.abs() + b.abs()));
    if flat {
        return (0.0, true);
    }
    let slope = |s: f64| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&a, &b)| {
                let denom = a + b * s;
                if denom <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    b / denom
                }
            })
            .sum()
    };
    if slope(0.0) <= 0.0 {
        return (0.0, false);
    }
    if slope(1.0) >= 0.0 {
        return (1.0, false);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), false)
}

pub fn eb_ancestral(pi: &StationaryDistribution, alignment: &Alignment) -> Result<EstimateResult> {
    eb_ancestral_with(pi, alignment, EB_DEFAULT_TOL, EB_DEFAULT_MAX_ITER)
}

/// Per-site MAP root states given the empirical-Bayes edge lengths.
pub fn eb_ancestral_with(
    pi: &StationaryDistribution,
    alignment: &Alignment,
    tol: f64,
    max_iter: usize,
) -> Result<EstimateResult> {
    let start = Instant::now();
    let fit = eb_edge_lengths(pi, alignment, tol, max_iter)?;
    let (n_sites, c) = (alignment.n_sites(), pi.c());
    let mut sums = SiteSums::new(n_sites, c);
    for (k, row) in alignment.rows().enumerate() {
        sums.apply(pi, row, fit.s[k], 1.0);
    }
    let mut states = Vec::with_capacity(n_sites);
    let mut tied = fit.unidentified.iter().any(|&u| u);
    let mut log_posterior = 0.0;
    for l in 0..n_sites {
        let scores: Vec<f64> = (0..c).map(|x| sums.joint(pi, l, x)).collect();
        let (best, site_tied) = argmax_lex(&scores);
        tied |= site_tied;
        log_posterior += scores[best] - log_sum_exp(&scores);
        states.push(State::from_index(best));
    }
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push(format!(
            "edge-length fit did not converge within {max_iter} sweeps"
        ));
    }
    if fit.unidentified.iter().any(|&u| u) {
        warnings.push("some edge lengths are unidentifiable; set to 0".to_string());
    }
    Ok(EstimateResult {
        method: Method::Eb,
        rho_hat: AncestralSequence::new(states)?,
        log_score: Some(log_posterior),
        edge_estimates: Some(fit.s),
        tied,
        wall_time: start.elapsed().as_secs_f64(),
        warnings,
    })
}

/// Site-by-state table of `V(j, l)`: a site's state frequency minus the mean
/// frequency of that state over the other sites.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VStatistic {
    pub n_sites: usize,
    pub c: usize,
    /// Row-major, one row of `c` values per site.
    pub values: Vec<f64>,
}

impl VStatistic {
    pub fn get(&self, state: State, site: usize) -> f64 {
        self.values[site * self.c + state.index()]
    }

    pub fn site(&self, site: usize) -> &[f64] {
        &self.values[site * self.c..(site + 1) * self.c]
    }
}

fn site_frequencies(alignment: &Alignment) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; alignment.c()]; alignment.n_sites()];
    for row in alignment.rows() {
        for (l, &y) in row.iter().enumerate() {
            counts[l][y.index()] += 1;
        }
    }
    counts
}

pub fn v_statistic(alignment: &Alignment) -> Result<VStatistic> {
    let (n_sites, c) = (alignment.n_sites(), alignment.c());
    if n_sites < 2 {
        return Err(Error::domain(
            "the difference estimator needs at least two sites",
        ));
    }
    let n = alignment.n_rows() as f64;
    let freq = site_frequencies(alignment);
    let mut values = vec![0.0; n_sites * c];
    for j in 0..c {
        let total: usize = freq.iter().map(|site| site[j]).sum();
        for (l, site) in freq.iter().enumerate() {
            let own = site[j] as f64 / n;
            let others = (total - site[j]) as f64 / n / (n_sites - 1) as f64;
            values[l * c + j] = own - others;
        }
    }
    Ok(VStatistic { n_sites, c, values })
}

pub fn difference_estimator(alignment: &Alignment) -> Result<(EstimateResult, VStatistic)> {
    let start = Instant::now();
    let v = v_statistic(alignment)?;
    let mut tied = false;
    let states = (0..v.n_sites)
        .map(|l| {
            let (best, t) = argmax_lex(v.site(l));
            tied |= t;
            State::from_index(best)
        })
        .collect();
    let result = EstimateResult {
        method: Method::Diff,
        rho_hat: AncestralSequence::new(states)?,
        log_score: None,
        edge_estimates: None,
        tied,
        wall_time: start.elapsed().as_secs_f64(),
        warnings: Vec::new(),
    };
    Ok((result, v))
}

pub fn majority_rule(alignment: &Alignment) -> Result<EstimateResult> {
    let start = Instant::now();
    let mut tied = false;
    let states = site_frequencies(alignment)
        .iter()
        .map(|counts| {
            let scores: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
            let (best, t) = argmax_lex(&scores);
            tied |= t;
            State::from_index(best)
        })
        .collect();
    Ok(EstimateResult {
        method: Method::Majority,
        rho_hat: AncestralSequence::new(states)?,
        log_score: None,
        edge_estimates: None,
        tied,
        wall_time: start.elapsed().as_secs_f64(),
        warnings: Vec::new(),
    })
}

/// Dispatches on `method` with default tuning.
pub fn estimate(
    method: Method,
    pi: &StationaryDistribution,
    alignment: &Alignment,
    search_cap: u128,
) -> Result<EstimateResult> {
    alignment.check_pi(pi)?;
    match method {
        Method::Mle => mle_ancestral(pi, alignment, search_cap),
        Method::Eb => eb_ancestral(pi, alignment),
        Method::Diff => difference_estimator(alignment).map(|(r, _)| r),
        Method::Majority => majority_rule(alignment),
    }
}
