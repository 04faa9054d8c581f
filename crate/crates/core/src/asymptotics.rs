//! Large-`n` analysis of the joint MLE.
//!
//! `e(rho)` is the limit of `l(rho)/n`; its maximiser set is where the MLE
//! (and the empirical-Bayes estimator) end up. For one site there is a closed
//! threshold on `s-bar`, for a constant ancestor a sufficient condition via
//! `v(p)`, and for two sites the expected profile likelihood is an explicit
//! quadratic in the edge moments.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, Discrete};

use crate::error::{Error, Result};
use crate::estimators::profiled_term;
use crate::estimators::search_space;
use crate::model::{p_ij, AncestralSequence, EdgeSpec, State, StationaryDistribution, PROB_TOL};

/// Width of the band defining the maximiser set `H`.
pub const H_TOL: f64 = 1e-9;

fn xlogx_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// `E_F[P_{rho* y}(S)]`, exact over the atoms of the edge law.
pub fn expected_pattern_prob(
    pi: &StationaryDistribution,
    rho_true: &AncestralSequence,
    edge: &EdgeSpec,
    y: &[State],
) -> Result<f64> {
    if y.len() != rho_true.len() {
        return Err(Error::LengthMismatch {
            expected: rho_true.len(),
            found: y.len(),
        });
    }
    rho_true.check(pi)?;
    y.iter().try_for_each(|&x| pi.check_state(x))?;
    Ok(pattern_prob(pi, rho_true.states(), &edge.atoms(), y))
}

fn pattern_prob(
    pi: &StationaryDistribution,
    root: &[State],
    atoms: &[(f64, f64)],
    y: &[State],
) -> f64 {
    atoms
        .iter()
        .map(|&(w, s)| {
            w * root
                .iter()
                .zip(y)
                .map(|(&r, &x)| p_ij(pi, r, x, s))
                .product::<f64>()
        })
        .sum()
}

/// Every pattern with its limiting probability under the truth.
fn pattern_law(
    pi: &StationaryDistribution,
    rho_true: &AncestralSequence,
    edge: &EdgeSpec,
    cap: u128,
) -> Result<Vec<(AncestralSequence, f64)>> {
    rho_true.check(pi)?;
    let (c, n_sites) = (pi.c(), rho_true.len());
    let total = search_space(c, n_sites, cap)?;
    let atoms = edge.atoms();
    Ok((0..total)
        .into_par_iter()
        .map(|rank| {
            let y = AncestralSequence::from_rank(rank, c, n_sites);
            let p = pattern_prob(pi, rho_true.states(), &atoms, y.states());
            (y, p)
        })
        .collect())
}

fn e_from_law(pi: &StationaryDistribution, law: &[(AncestralSequence, f64)], rho: &[State]) -> f64 {
    law.iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(y, p)| p * profiled_term(pi, rho, y.states()).0)
        .sum()
}

/// `e(rho) = sum_y p_{rho* y} log P_{rho y}(s_hat(rho, y))`, summed over all
/// `c^N` patterns.
pub fn e_function(
    pi: &StationaryDistribution,
    rho_true: &AncestralSequence,
    edge: &EdgeSpec,
    rho: &AncestralSequence,
    cap: u128,
) -> Result<f64> {
    if rho.len() != rho_true.len() {
        return Err(Error::LengthMismatch {
            expected: rho_true.len(),
            found: rho.len(),
        });
    }
    rho.check(pi)?;
    let law = pattern_law(pi, rho_true, edge, cap)?;
    Ok(e_from_law(pi, &law, rho.states()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticReport {
    pub e_values: BTreeMap<AncestralSequence, f64>,
    /// Candidates within [`H_TOL`] of the maximum, in lexicographic order.
    pub maximizer_set: Vec<AncestralSequence>,
    pub contains_truth: bool,
    pub max_e: f64,
}

impl AsymptoticReport {
    pub fn contains(&self, rho: &AncestralSequence) -> bool {
        self.maximizer_set.binary_search(rho).is_ok()
    }
}

pub fn maximizer_set(
    pi: &StationaryDistribution,
    rho_true: &AncestralSequence,
    edge: &EdgeSpec,
    cap: u128,
) -> Result<AsymptoticReport> {
    let law = pattern_law(pi, rho_true, edge, cap)?;
    let (c, n_sites) = (pi.c(), rho_true.len());
    let values: Vec<(AncestralSequence, f64)> = (0..law.len() as u64)
        .into_par_iter()
        .map(|rank| {
            let rho = AncestralSequence::from_rank(rank, c, n_sites);
            let e = e_from_law(pi, &law, rho.states());
            (rho, e)
        })
        .collect();
    let max_e = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let maximizer_set: Vec<AncestralSequence> = values
        .iter()
        .filter(|(_, e)| *e >= max_e - H_TOL)
        .map(|(rho, _)| rho.clone())
        .collect();
    let contains_truth = maximizer_set.contains(rho_true);
    Ok(AsymptoticReport {
        e_values: values.into_iter().collect(),
        maximizer_set,
        contains_truth,
        max_e,
    })
}

/// Single-site bound: with truth `r` and alternative `a`, the MLE prefers
/// `a` exactly when `s-bar` is below
/// `(pi_r ln pi_r - pi_a ln pi_a) / (pi_r ln pi_r - pi_a ln pi_a - ln pi_r)`.
/// `None` when that ratio is not positive, i.e. no such zone exists.
pub fn single_site_threshold(
    pi: &StationaryDistribution,
    r: State,
    a: State,
) -> Result<Option<f64>> {
    pi.check_state(r)?;
    pi.check_state(a)?;
    Ok(threshold_from_probs(pi.prob(r), pi.prob(a)))
}

pub fn threshold_from_probs(pi_r: f64, pi_a: f64) -> Option<f64> {
    let numerator = pi_r * pi_r.ln() - pi_a * pi_a.ln();
    if numerator > 0.0 {
        Some(numerator / (numerator - pi_r.ln()))
    } else {
        None
    }
}

/// `v(p) = E[{p̂ ln(p̂/p) + (1-p̂) ln((1-p̂)/(1-p))} 1{p̂ > p}]` with
/// `N p̂ ~ Binomial(N, p)`.
pub fn v_function(p: f64, n_sites: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p = {p} outside [0, 1]")));
    }
    if n_sites == 0 {
        return Err(Error::domain("need at least one site"));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    let law = Binomial::new(p, n_sites).map_err(|e| Error::domain(e.to_string()))?;
    let n = n_sites as f64;
    Ok((0..=n_sites)
        .filter_map(|x| {
            let p_hat = x as f64 / n;
            (p_hat > p)
                .then(|| law.pmf(x) * (xlogx_ratio(p_hat, p) + xlogx_ratio(1.0 - p_hat, 1.0 - p)))
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZoneCell {
    pub pi_r: f64,
    pub pi_a: f64,
    pub in_zone: bool,
}

/// Boolean grid of `v(pi_a) > v(pi_r)` (a sufficient condition for the MLE
/// to prefer a constant alternative `a` over a constant truth `r`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZoneGrid {
    pub n_sites: u64,
    pub step: f64,
    pub axis: Vec<f64>,
    pub v: Vec<f64>,
    /// Row-major over `(pi_r, pi_a)` axis indices.
    pub cells: Vec<ZoneCell>,
    pub condition: &'static str,
}

impl ZoneGrid {
    pub fn cell(&self, r_index: usize, a_index: usize) -> &ZoneCell {
        &self.cells[r_index * self.axis.len() + a_index]
    }

    /// Fraction of cells where the zone coincides with `{pi_a > pi_r}`.
    pub fn agreement_with_frequency_order(&self) -> f64 {
        let hits = self
            .cells
            .iter()
            .filter(|cell| cell.in_zone == (cell.pi_a > cell.pi_r))
            .count();
        hits as f64 / self.cells.len() as f64
    }
}

/// Points `step, 2 step, ...` strictly inside `(0, 1)`.
pub fn open_unit_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::domain(format!("grid step {step} outside (0, 0.5)")));
    }
    let count = ((1.0 / step) - 1e-9).ceil() as usize - 1;
    Ok((1..=count)
        .map(|k| ((k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub fn zone_scan(n_sites: u64, step: f64) -> Result<ZoneGrid> {
    let axis = open_unit_grid(step)?;
    let v = axis
        .par_iter()
        .map(|&p| v_function(p, n_sites))
        .collect::<Result<Vec<_>>>()?;
    let cells = axis
        .iter()
        .zip(&v)
        .flat_map(|(&pi_r, &v_r)| {
            axis.iter().zip(&v).map(move |(&pi_a, &v_a)| ZoneCell {
                pi_r,
                pi_a,
                in_zone: v_a > v_r,
            })
        })
        .collect();
    Ok(ZoneGrid {
        n_sites,
        step,
        axis,
        v,
        cells,
        condition: "sufficient condition v(pi_a) > v(pi_r)",
    })
}

/// Raster of the zone: black cells are in the zone. `pi_r` runs left to
/// right, `pi_a` bottom to top.
pub fn zone_svg(grid: &ZoneGrid) -> String {
    let cell = 6usize;
    let margin = 40usize;
    let side = grid.axis.len() * cell;
    let size = side + 2 * margin;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{side}\" height=\"{side}\" fill=\"white\" stroke=\"black\"/>\n"
    ));
    let n = grid.axis.len();
    for r in 0..n {
        for a in 0..n {
            if grid.cell(r, a).in_zone {
                let x = margin + r * cell;
                let y = margin + (n - 1 - a) * cell;
                out.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"black\"/>\n"
                ));
            }
        }
    }
    let mid = margin + side / 2;
    out.push_str(&format!(
        "<text x=\"{mid}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">pi_r (true state)</text>\n",
        size - 12
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{mid}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {mid})\">pi_a (alternative)</text>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{mid}\" y=\"24\" text-anchor=\"middle\" font-size=\"12\">N = {}</text>\n",
        grid.n_sites
    ));
    out.push_str("</svg>\n");
    out
}

/// `f(p) = 1{p < 1/2} ln[4 p (1 - p)]`.
pub fn f_term(p: f64) -> f64 {
    if p < 0.5 {
        (4.0 * p * (1.0 - p)).ln()
    } else {
        0.0
    }
}

/// Coefficients of the two-site expected profile log-likelihood
/// `C_0 + A s2 + B s + C` for one candidate pair, and their differences
/// against the true pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoSiteCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_d: f64,
    pub b_d: f64,
    pub c_d: f64,
}

fn raw_coefficients(
    pi: &StationaryDistribution,
    truth: [State; 2],
    cand: [State; 2],
) -> (f64, f64, f64) {
    let (p1, p2) = (pi.prob(cand[0]), pi.prob(cand[1]));
    let d1 = if truth[0] == cand[0] { 1.0 } else { 0.0 } - p1;
    let d2 = if truth[1] == cand[1] { 1.0 } else { 0.0 } - p2;
    let (f1, f2) = (f_term(p1), f_term(p2));
    let joint = f1 + f2 - (p1 * p2).ln();
    let a = d1 * d2 * joint;
    let b = -d1 * f1 - d2 * f2 + d1 * p2 * joint + d2 * p1 * joint;
    let c = -p1 * f1 - p2 * f2 + p1 * p2 * joint;
    (a, b, c)
}

pub fn two_site_coefficients(
    pi: &StationaryDistribution,
    truth: [State; 2],
    cand: [State; 2],
) -> Result<TwoSiteCoefficients> {
    truth
        .iter()
        .chain(&cand)
        .try_for_each(|&s| pi.check_state(s))?;
    let (a, b, c) = raw_coefficients(pi, truth, cand);
    let (a0, b0, c0) = raw_coefficients(pi, truth, truth);
    Ok(TwoSiteCoefficients {
        a,
        b,
        c,
        a_d: a - a0,
        b_d: b - b0,
        c_d: c - c0,
    })
}

/// The candidate-free part `C_0 = sum_x [P-bar_{rho1* x} + P-bar_{rho2* x}] ln pi_x`,
/// which depends on the edges only through `s-bar`.
pub fn two_site_c0(pi: &StationaryDistribution, truth: [State; 2], s_bar: f64) -> f64 {
    pi.states()
        .map(|x| {
            let mean_p = |r: State| pi.prob(x) * (1.0 - s_bar) + if r == x { s_bar } else { 0.0 };
            (mean_p(truth[0]) + mean_p(truth[1])) * pi.ln_prob(x)
        })
        .sum()
}

/// `C_0 + A s2 + B s + C`: the limiting two-site `l(rho)/n`.
pub fn two_site_expected_profile(
    pi: &StationaryDistribution,
    truth: [State; 2],
    coeffs: &TwoSiteCoefficients,
    s_bar: f64,
    s2_bar: f64,
) -> f64 {
    two_site_c0(pi, truth, s_bar) + coeffs.a * s2_bar + coeffs.b * s_bar + coeffs.c
}

/// `Q(s) = A_D s^2 + B_D s + C_D`, the candidate-minus-truth gap for a
/// common edge value `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QPolynomial {
    pub a_d: f64,
    pub b_d: f64,
    pub c_d: f64,
    pub s_star: Option<f64>,
    pub t_star: Option<f64>,
}

impl QPolynomial {
    pub fn eval(&self, s: f64) -> f64 {
        (self.a_d * s + self.b_d) * s + self.c_d
    }
}

fn unit_root(a: f64, b: f64, c: f64) -> f64 {
    let q = |s: f64| (a * s + b) * s + c;
    let scale = a.abs() + b.abs() + c.abs();
    let candidates: Vec<f64> = if a.abs() <= 1e-14 * scale {
        vec![-c / b]
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            Vec::new()
        } else {
            let half = -0.5 * (b + b.signum() * disc.sqrt());
            let mut roots = vec![half / a];
            if half != 0.0 {
                roots.push(c / half);
            }
            roots
        }
    };
    let closed = candidates
        .into_iter()
        .filter(|r| (0.0..=1.0).contains(r) && r.is_finite())
        .find(|&r| q(r).abs() <= 1e-12 * scale.max(1.0));
    if let Some(root) = closed {
        return root;
    }
    // Q(0) > 0 > Q(1); bisect.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if q(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

pub fn q_polynomial(
    pi: &StationaryDistribution,
    truth: [State; 2],
    cand: [State; 2],
) -> Result<QPolynomial> {
    if truth == cand {
        return Err(Error::domain("candidate pair equals the true pair"));
    }
    let coeffs = two_site_coefficients(pi, truth, cand)?;
    q_from_coefficients(pi, &coeffs)
}

fn q_from_coefficients(
    pi: &StationaryDistribution,
    coeffs: &TwoSiteCoefficients,
) -> Result<QPolynomial> {
    let (a, b, c) = (coeffs.a_d, coeffs.b_d, coeffs.c_d);
    let at_one = a + b + c;
    if at_one >= 0.0 {
        return Err(Error::Consistency(format!(
            "Q(1) = {at_one} is not negative for a non-true candidate"
        )));
    }
    let (s_star, t_star) = if c > 0.0 {
        let s = unit_root(a, b, c);
        (Some(s), Some(-s.ln() / pi.mu()))
    } else {
        (None, None)
    };
    Ok(QPolynomial {
        a_d: a,
        b_d: b,
        c_d: c,
        s_star,
        t_star,
    })
}

/// `A_D s2 + B_D s + C_D` for edges with first moment `s_bar` and second
/// moment `s2_bar`.
pub fn q_with_moments(coeffs: &TwoSiteCoefficients, s_bar: f64, s2_bar: f64) -> Result<f64> {
    let valid = (0.0..=1.0).contains(&s_bar)
        && s_bar * s_bar <= s2_bar + PROB_TOL
        && s2_bar <= s_bar + PROB_TOL;
    if !valid {
        return Err(Error::domain(format!(
            "({s_bar}, {s2_bar}) are not the first two moments of a [0, 1] variable"
        )));
    }
    Ok(coeffs.a_d * s2_bar + coeffs.b_d * s_bar + coeffs.c_d)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Row {
    pub pi: Vec<f64>,
    pub best: [State; 2],
    pub a_d: f64,
    pub b_d: f64,
    pub c_d: f64,
    pub s_star: f64,
    pub t_star: f64,
    /// Representative of its class under the relabelings that fix the
    /// truth: ordered frequencies within the truth pair and among the rest.
    pub canonical: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Options {
    pub step: f64,
    pub truth: [State; 2],
    /// Also consider candidates `(x, x)`.
    pub include_repeated: bool,
}

impl Default for Table1Options {
    fn default() -> Self {
        Table1Options {
            step: 0.1,
            truth: [State::from_index(0), State::from_index(1)],
            include_repeated: false,
        }
    }
}

/// Frequencies on `{step, ..., 1 - step}^4` summing to one, as integer
/// multiples of `step`.
fn simplex_grid(step: f64) -> Result<Vec<[u32; 4]>> {
    let units = (1.0 / step).round();
    if !(step > 0.0 && step < 0.5) || (units * step - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "grid step {step} must divide 1 and lie in (0, 0.5)"
        )));
    }
    let k = units as u32;
    let mut out = Vec::new();
    for a in 1..k {
        for c in 1..k.saturating_sub(a) {
            for g in 1..k.saturating_sub(a + c) {
                let t = k - a - c - g;
                if t >= 1 {
                    out.push([a, c, g, t]);
                }
            }
        }
    }
    Ok(out)
}

fn is_canonical(pi: &[f64], truth: [State; 2]) -> bool {
    let others: Vec<f64> = (0..pi.len())
        .filter(|&x| x != truth[0].index() && x != truth[1].index())
        .map(|x| pi[x])
        .collect();
    let others_sorted = others.windows(2).all(|w| w[0] <= w[1] + PROB_TOL);
    let truth_sorted =
        truth[0] == truth[1] || pi[truth[0].index()] <= pi[truth[1].index()] + PROB_TOL;
    others_sorted && truth_sorted
}

/// For every frequency vector on the grid, the candidate pair with the
/// largest `Q(0) = C_D` (ties to the lexicographically smallest pair); rows
/// are emitted where that maximum is positive.
pub fn table1_scan(options: &Table1Options) -> Result<Vec<Table1Row>> {
    let grid = simplex_grid(options.step)?;
    let truth = options.truth;
    if truth.iter().any(|s| s.index() >= 4) {
        return Err(Error::domain("truth pair must use four-state labels"));
    }
    let candidates: Vec<[State; 2]> = (0..16)
        .map(|r| [State::from_index(r / 4), State::from_index(r % 4)])
        .filter(|pair| *pair != truth && (options.include_repeated || pair[0] != pair[1]))
        .collect();
    let rows = grid
        .par_iter()
        .map(|units| -> Result<Option<Table1Row>> {
            let probs: Vec<f64> = units.iter().map(|&u| u as f64 * options.step).collect();
            let total: f64 = probs.iter().sum();
            let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
            let pi = StationaryDistribution::new(probs.clone())?;
            let coeffs = candidates
                .iter()
                .map(|&cand| two_site_coefficients(&pi, truth, cand))
                .collect::<Result<Vec<_>>>()?;
            let best_cd = coeffs
                .iter()
                .map(|c| c.c_d)
                .fold(f64::NEG_INFINITY, f64::max);
            if best_cd <= PROB_TOL {
                return Ok(None);
            }
            let pick = coeffs
                .iter()
                .position(|c| c.c_d >= best_cd - PROB_TOL)
                .expect("maximum is attained");
            let q = q_from_coefficients(&pi, &coeffs[pick])?;
            Ok(Some(Table1Row {
                canonical: is_canonical(&probs, truth),
                pi: units.iter().map(|&u| u as f64 * options.step).collect(),
                best: candidates[pick],
                a_d: q.a_d,
                b_d: q.b_d,
                c_d: q.c_d,
                s_star: q.s_star.expect("positive C_D has a root"),
                t_star: q.t_star.expect("positive C_D has a root"),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Normalised profile log-likelihood of the constant root `(a, ..., a)`
/// against a tip whose fraction of `a` states is `p_hat`, with the
/// root-independent `C(y)/N` removed.
pub fn constant_ancestor_profile(pi: &StationaryDistribution, a: State, p_hat: f64) -> Result<f64> {
    pi.check_state(a)?;
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::domain(format!("p_hat = {p_hat} outside [0, 1]")));
    }
    let pa = pi.prob(a);
    if p_hat <= pa {
        return Ok(0.0);
    }
    Ok(xlogx_ratio(p_hat, pa) + xlogx_ratio(1.0 - p_hat, 1.0 - pa))
}
