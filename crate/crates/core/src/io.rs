//! Plain-text formats: alignment and edge CSVs in, result tables out.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::asymptotics::{Table1Row, ZoneGrid};
use crate::error::{Error, Result};
use crate::model::{Alignment, AncestralSequence, EdgeSpec, State};

/// How states are written to an alignment CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StateFormat {
    /// One-based integers.
    #[default]
    Integer,
    /// `A`, `C`, `G`, `T`; only valid for `c = 4`.
    Letters,
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn alignment_to_csv(alignment: &Alignment, format: StateFormat) -> Result<String> {
    if format == StateFormat::Letters && alignment.c() != 4 {
        return Err(Error::domain("letter output needs c = 4"));
    }
    let mut out = (1..=alignment.n_sites())
        .map(|l| format!("site_{l}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in alignment.rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|s| match format {
                StateFormat::Integer => s.one_based().to_string(),
                StateFormat::Letters => s.letter().expect("c = 4").to_string(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Accepts either integer or letter cells; `c` bounds the integers.
pub fn alignment_from_csv(text: &str, c: usize) -> Result<Alignment> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty alignment file".into()))?;
    let n_sites = header.split(',').count();
    for (l, name) in header.split(',').enumerate() {
        if name.trim() != format!("site_{}", l + 1) {
            return Err(Error::Parse(format!("bad header field {name:?}")));
        }
    }
    let rows = lines
        .enumerate()
        .map(|(k, line)| {
            let row = line
                .split(',')
                .map(|token| State::parse(token.trim(), c))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != n_sites {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, header has {n_sites}",
                    k + 1,
                    row.len()
                )));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Alignment::new(c, rows)
}

pub fn edges_to_csv(values: &[f64]) -> String {
    values.iter().map(|&s| fmt_f64(s) + "\n").collect()
}

pub fn edges_from_csv(text: &str) -> Result<EdgeSpec> {
    let values = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::Parse(format!("edge value {l:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    EdgeSpec::empirical(values)
}

pub fn zone_to_csv(grid: &ZoneGrid) -> String {
    let mut out = String::from("pi_r,pi_a,N,in_zone\n");
    for cell in &grid.cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(cell.pi_r),
            fmt_f64(cell.pi_a),
            grid.n_sites,
            cell.in_zone
        );
    }
    out
}

pub fn table1_to_csv(rows: &[Table1Row]) -> String {
    let mut out = String::from("pi_A,pi_C,pi_G,pi_T,rho1,rho2,t_star,c_d,a_d\n");
    for row in rows {
        let label = |s: State| {
            s.letter()
                .map(String::from)
                .unwrap_or_else(|| s.to_string())
        };
        let pi: Vec<String> = row.pi.iter().map(|&p| format!("{p:.1}")).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            pi.join(","),
            label(row.best[0]),
            label(row.best[1]),
            fmt_f64(row.t_star),
            fmt_f64(row.c_d),
            fmt_f64(row.a_d)
        );
    }
    out
}

pub fn efunc_to_csv<'a>(
    values: impl IntoIterator<Item = (&'a AncestralSequence, f64)>,
    c: usize,
) -> String {
    let mut out = String::from("rho,e\n");
    for (rho, e) in values {
        let _ = writeln!(out, "{},{}", rho.label(c), fmt_f64(e));
    }
    out
}

/// Writes `contents`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
