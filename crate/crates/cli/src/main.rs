use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use starrec::asymptotics::{maximizer_set, table1_scan, zone_scan, zone_svg, Table1Options};
use starrec::io::{
    alignment_from_csv, alignment_to_csv, edges_to_csv, efunc_to_csv, read_file, table1_to_csv,
    write_file, zone_to_csv, StateFormat,
};
use starrec::manifest::{digest_mismatches, run_and_emit, Manifest};
use starrec::{
    estimate, simulate, AncestralSequence, Error, ExperimentConfig, Method, SimulationConfig,
};

mod spec;

use spec::{parse_edge, parse_limit_edge, parse_methods, parse_pi, parse_usizes};

#[derive(Parser)]
#[command(
    name = "starrec",
    version,
    about = "Ancestral state reconstruction on star trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path; stdout when omitted (a directory for `experiment`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an alignment on a star tree.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Stationary distribution, e.g. `0.1,0.1,0.2,0.6` or `A=0.1,C=0.1,G=0.2,T=0.6`.
        #[arg(long)]
        pi: String,
        /// Root sequence, e.g. `AC` or `1,2`.
        #[arg(long)]
        rho: String,
        /// Number of leaves.
        #[arg(long)]
        n: usize,
        /// `const:s`, `t:time`, `mix:w@s,..`, `iid:exp:rate`, `iid:unif:lo:hi`, `file:path`.
        #[arg(long)]
        edge: String,
        /// Also write the realised per-leaf `s` values here.
        #[arg(long)]
        edges_out: Option<PathBuf>,
        /// Write A/C/G/T instead of integers (c = 4 only).
        #[arg(long)]
        letters: bool,
    },
    /// Reconstruct the root sequence from an alignment CSV.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pi: String,
        #[arg(long)]
        alignment: PathBuf,
        /// mle, eb, diff or majority.
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Largest c^N the MLE may enumerate.
        #[arg(long, default_value_t = 1 << 20)]
        cap: u64,
    },
    /// Tabulate the limiting criterion e(rho) and its maximiser set.
    Efunc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pi: String,
        #[arg(long)]
        rho_true: String,
        /// Edge law with finitely many atoms: `const:s`, `t:time`, `mix:..`, `file:path`.
        #[arg(long)]
        edge: String,
        #[arg(long, default_value_t = 1 << 20)]
        cap: u64,
    },
    /// Scan the single-alternative zone v(pi_a) > v(pi_r).
    Zone {
        #[command(flatten)]
        common: Common,
        /// Number of sites.
        #[arg(long = "N")]
        n_sites: u64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Also render the grid as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Frequency vectors where a wrong two-site root beats the truth.
    Table1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// True pair.
        #[arg(long, default_value = "AC")]
        truth: String,
        /// Also consider candidates with both sites equal.
        #[arg(long)]
        include_repeated: bool,
        /// Emit every row, not one per symmetry class.
        #[arg(long)]
        all: bool,
    },
    /// Monte Carlo accuracy study.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// JSON experiment config; flags below are ignored when given.
        #[arg(long, conflicts_with = "from_manifest")]
        config: Option<PathBuf>,
        /// Rerun the config stored in a manifest and compare digests.
        #[arg(long)]
        from_manifest: Option<PathBuf>,
        #[arg(long, required_unless_present_any = ["config", "from_manifest"])]
        pi: Option<String>,
        #[arg(long, required_unless_present_any = ["config", "from_manifest"])]
        rho: Option<String>,
        #[arg(long, required_unless_present_any = ["config", "from_manifest"])]
        edge: Option<String>,
        /// Leaf counts, e.g. `100,500,2000`.
        #[arg(long, required_unless_present_any = ["config", "from_manifest"])]
        n_grid: Option<String>,
        #[arg(long, default_value = "mle,eb,diff,majority")]
        estimators: String,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 1 << 20)]
        cap: u64,
    },
}

fn parse_method(text: &str) -> Result<Method, String> {
    Method::parse(text).map_err(|e| e.to_string())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Capacity { .. } => 3,
        Error::Io(_) | Error::Consistency(_) => 1,
        _ => 2,
    }
}

fn emit(out: Option<&Path>, body: &str) -> starrec::Result<()> {
    match out {
        Some(path) => write_file(path, body),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(Error::from),
    }
}

fn to_json(value: &serde_json::Value) -> starrec::Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse(e.to_string()))
}

fn run(command: Command) -> starrec::Result<()> {
    match command {
        Command::Simulate {
            common,
            pi,
            rho,
            n,
            edge,
            edges_out,
            letters,
        } => {
            let pi = parse_pi(&pi)?;
            let config = SimulationConfig {
                rho_true: AncestralSequence::parse(&rho, pi.c())?,
                edge: parse_edge(&edge, &pi)?,
                pi,
                n_leaves: n,
                seed: common.seed,
            };
            let (edges, alignment) = simulate(&config)?;
            let format = if letters {
                StateFormat::Letters
            } else {
                StateFormat::Integer
            };
            emit(
                common.out.as_deref(),
                &alignment_to_csv(&alignment, format)?,
            )?;
            if let Some(path) = edges_out {
                write_file(&path, &edges_to_csv(edges.values().unwrap_or_default()))?;
            }
            Ok(())
        }
        Command::Estimate {
            common,
            pi,
            alignment,
            method,
            cap,
        } => {
            let pi = parse_pi(&pi)?;
            let alignment = alignment_from_csv(&read_file(&alignment)?, pi.c())?;
            let result = estimate(method, &pi, &alignment, cap as u128)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let mut value =
                serde_json::to_value(&result).map_err(|e| Error::Parse(e.to_string()))?;
            value["rho_label"] = result.rho_hat.label(pi.c()).into();
            emit(common.out.as_deref(), &to_json(&value)?)
        }
        Command::Efunc {
            common,
            pi,
            rho_true,
            edge,
            cap,
        } => {
            let pi = parse_pi(&pi)?;
            let truth = AncestralSequence::parse(&rho_true, pi.c())?;
            let edge = parse_limit_edge(&edge, &pi)?;
            let report = maximizer_set(&pi, &truth, &edge, cap as u128)?;
            emit(
                common.out.as_deref(),
                &efunc_to_csv(report.e_values.iter().map(|(r, &e)| (r, e)), pi.c()),
            )?;
            let labels: Vec<String> = report
                .maximizer_set
                .iter()
                .map(|r| r.label(pi.c()))
                .collect();
            eprintln!("maximizer set: {}", labels.join(" "));
            eprintln!("contains truth: {}", report.contains_truth);
            Ok(())
        }
        Command::Zone {
            common,
            n_sites,
            step,
            svg,
        } => {
            let grid = zone_scan(n_sites, step)?;
            emit(common.out.as_deref(), &zone_to_csv(&grid))?;
            if let Some(path) = svg {
                write_file(&path, &zone_svg(&grid))?;
            }
            Ok(())
        }
        Command::Table1 {
            common,
            step,
            truth,
            include_repeated,
            all,
        } => {
            let truth = AncestralSequence::parse(&truth, 4)?;
            if truth.len() != 2 {
                return Err(Error::domain("truth must have two sites"));
            }
            let options = Table1Options {
                step,
                truth: [truth.states()[0], truth.states()[1]],
                include_repeated,
            };
            let rows: Vec<_> = table1_scan(&options)?
                .into_iter()
                .filter(|r| all || r.canonical)
                .collect();
            emit(common.out.as_deref(), &table1_to_csv(&rows))
        }
        Command::Experiment {
            common,
            config,
            from_manifest,
            pi,
            rho,
            edge,
            n_grid,
            estimators,
            replicates,
            cap,
        } => {
            let out_dir = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("experiment-out"));
            let (config, expected) = if let Some(path) = from_manifest {
                let manifest = Manifest::load(&path)?;
                let mut config = manifest.config.clone();
                if let Some(dir) = common.out.clone() {
                    config.output_dir = dir;
                }
                (config, Some(manifest))
            } else if let Some(path) = config {
                let mut config: ExperimentConfig = serde_json::from_str(&read_file(&path)?)
                    .map_err(|e| Error::Parse(format!("config: {e}")))?;
                if let Some(dir) = common.out.clone() {
                    config.output_dir = dir;
                }
                (config, None)
            } else {
                let pi_text = pi.expect("required by clap");
                let dist = parse_pi(&pi_text)?;
                let config = ExperimentConfig {
                    rho_true: AncestralSequence::parse(&rho.expect("required by clap"), dist.c())?,
                    edge: parse_edge(&edge.expect("required by clap"), &dist)?,
                    pi: dist.probs().to_vec(),
                    n_grid: parse_usizes(&n_grid.expect("required by clap"))?,
                    estimators: parse_methods(&estimators)?,
                    replicates,
                    seed: common.seed,
                    output_dir: out_dir,
                    search_cap: cap,
                };
                (config, None)
            };
            let (outcome, manifest) = run_and_emit(&config)?;
            let c = config.stationary()?.c();
            for failure in &outcome.failures {
                eprintln!(
                    "{} skipped at n={}: {}",
                    failure.estimator.name(),
                    failure.n,
                    failure.message
                );
            }
            for s in &outcome.summary {
                println!(
                    "n={:<7} {:<9} accuracy {:.3} (se {:.3})  modal {} x{}",
                    s.n,
                    s.estimator.name(),
                    s.accuracy,
                    s.std_error,
                    s.modal_answer.label(c),
                    s.modal_count
                );
            }
            if let Some(expected) = expected {
                let bad = digest_mismatches(&expected, &manifest);
                if !bad.is_empty() {
                    return Err(Error::Consistency(format!(
                        "digests differ for {}",
                        bad.join(", ")
                    )));
                }
                println!("all digests match the manifest");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
