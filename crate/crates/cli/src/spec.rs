//! Parsers for the compact flag syntaxes (`pi`, edge specs, lists).

use std::path::Path;

use starrec::io::{edges_from_csv, read_file};
use starrec::{
    s_from_t, EdgeLaw, EdgeSource, EdgeSpec, Error, Method, Result, StationaryDistribution,
};

const ACGT: [char; 4] = ['A', 'C', 'G', 'T'];

fn number(text: &str, what: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: {text:?} is not a number")))
}

/// `0.1,0.2,0.3,0.4` or `A=0.1,C=0.2,G=0.3,T=0.4` (any order, `:` also
/// accepted as separator).
pub fn parse_pi(text: &str) -> Result<StationaryDistribution> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let keyed = parts.iter().any(|p| p.contains('=') || p.contains(':'));
    if !keyed {
        let probs = parts
            .iter()
            .map(|p| number(p, "pi"))
            .collect::<Result<Vec<_>>>()?;
        return StationaryDistribution::new(probs);
    }
    let mut probs = [None; 4];
    for part in parts {
        let (key, value) = part
            .split_once(['=', ':'])
            .ok_or_else(|| Error::Parse(format!("pi entry {part:?} lacks a key")))?;
        let letter = key.trim().to_ascii_uppercase();
        let index = ACGT
            .iter()
            .position(|c| letter == c.to_string())
            .ok_or_else(|| Error::Parse(format!("pi key {key:?} is not one of A, C, G, T")))?;
        if probs[index].replace(number(value, "pi")?).is_some() {
            return Err(Error::Parse(format!("pi key {letter} given twice")));
        }
    }
    let probs = probs
        .iter()
        .zip(ACGT)
        .map(|(p, key)| p.ok_or_else(|| Error::Parse(format!("pi key {key} missing"))))
        .collect::<Result<Vec<_>>>()?;
    StationaryDistribution::new(probs)
}

/// `const:<s>`, `t:<time>`, `mix:w1@s1,w2@s2`, `iid:exp:<rate>`,
/// `iid:unif:<lo>:<hi>`, `iid:point:<time>` or `file:<path>`.
pub fn parse_edge(text: &str, pi: &StationaryDistribution) -> Result<EdgeSource> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("edge spec {text:?} has no kind prefix")))?;
    match kind {
        "const" => Ok(EdgeSource::Fixed(EdgeSpec::constant(number(
            rest, "edge s",
        )?)?)),
        "t" => {
            let s = s_from_t(pi, number(rest, "edge time")?)?;
            Ok(EdgeSource::Fixed(EdgeSpec::constant(s)?))
        }
        "mix" => {
            let atoms = rest
                .split(',')
                .map(|atom| {
                    let (w, s) = atom
                        .split_once('@')
                        .ok_or_else(|| Error::Parse(format!("mixture atom {atom:?} is not w@s")))?;
                    Ok((number(w, "mixture weight")?, number(s, "mixture s")?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EdgeSource::Fixed(EdgeSpec::mixture(atoms)?))
        }
        "iid" => {
            let mut fields = rest.split(':');
            let name = fields.next().unwrap_or_default();
            let params = fields
                .map(|f| number(f, "edge-law parameter"))
                .collect::<Result<Vec<_>>>()?;
            Ok(EdgeSource::Iid(EdgeLaw::from_name(name, &params)?))
        }
        "file" => Ok(EdgeSource::Fixed(edges_from_csv(&read_file(Path::new(
            rest,
        ))?)?)),
        other => Err(Error::Parse(format!("unknown edge spec kind {other:?}"))),
    }
}

/// Edge specs usable as a limit law (no sampling).
pub fn parse_limit_edge(text: &str, pi: &StationaryDistribution) -> Result<EdgeSpec> {
    match parse_edge(text, pi)? {
        EdgeSource::Fixed(spec) => Ok(spec),
        EdgeSource::Iid(EdgeLaw::PointMass { t }) => EdgeSpec::constant(s_from_t(pi, t)?),
        EdgeSource::Iid(_) => Err(Error::domain(
            "e(rho) needs an edge law with finitely many atoms (const, t, mix or file)",
        )),
    }
}

pub fn parse_methods(text: &str) -> Result<Vec<Method>> {
    text.split(',').map(Method::parse).collect()
}

pub fn parse_usizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("{p:?} is not a non-negative integer")))
        })
        .collect()
}
