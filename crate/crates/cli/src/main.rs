mod commands;
mod config;
mod gallery;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nqwilson::report::RunReport;

use commands::Sweep;
use config::{BuildError, ProblemConfig};

/// Batch checks for Q-structures, their representations, Wilson lines and
/// bar complexes. Reports are JSON; exit code 0 when every check passes,
/// 1 on a failed check, 2 on a configuration error.
#[derive(Parser)]
#[command(name = "nqwilson", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Problem file, or `gallery:NAME` for a bundled one.
    #[arg(long)]
    config: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of grid steps.
    #[arg(long)]
    grid: Option<usize>,
    /// Override the Grassmann rank of the test manifold.
    #[arg(long)]
    grassmann: Option<u32>,
    /// Override the invariance and homotopy tolerances.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Nilpotency, flatness, T0^2 and gauge consistency, all exact.
    Check(Common),
    /// Wilson line or loop along the configured curve, with invariance sweeps.
    Wilson {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "as_loop")]
        line: bool,
        #[arg(long = "loop")]
        as_loop: bool,
        /// Comma separated or repeated.
        #[arg(long, value_enum, value_delimiter = ',')]
        sweep: Vec<Sweep>,
    },
    /// Bar complex identities, Picard sum against the ODE, negative control.
    Bar(Common),
    /// List the bundled problems, or print one.
    Gallery {
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(spec: &str) -> Result<String, String> {
    if let Some(name) = spec.strip_prefix("gallery:") {
        return gallery::get(name).map(str::to_string).ok_or_else(|| format!("config: no bundled problem `{name}`"));
    }
    std::fs::read_to_string(spec).map_err(|e| format!("config: cannot read {spec}: {e}"))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("out: cannot write {}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let (verb, common) = match &cli.verb {
        Verb::Check(c) => ("check", c),
        Verb::Wilson { common, .. } => ("wilson", common),
        Verb::Bar(c) => ("bar", c),
        Verb::Gallery { name, out } => {
            let text = match name {
                Some(n) => gallery::get(n).ok_or_else(|| format!("gallery: no bundled problem `{n}`"))?.to_string(),
                None => serde_json::to_string_pretty(&gallery::listing()).expect("listing serializes"),
            };
            emit(&text, out.as_deref())?;
            return Ok(ExitCode::SUCCESS);
        }
    };

    let mut cfg = ProblemConfig::parse(&load(&common.config)?).map_err(describe)?;
    if let Some(n) = common.grid {
        cfg.grid = n;
    }
    if let Some(m) = common.grassmann {
        cfg.grassmann = m;
    }
    if let Some(t) = common.tol {
        cfg.tolerances.invariance = t;
        cfg.tolerances.homotopy = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    // re-validate the overridden values
    let cfg = ProblemConfig::parse(&serde_json::to_string(&cfg).expect("config serializes")).map_err(describe)?;

    let value = serde_json::to_value(&cfg).expect("config serializes");
    let mut report = RunReport::new(verb, &value, cfg.seed);
    match cfg.resolve() {
        Ok(p) => {
            let r = match &cli.verb {
                Verb::Check(_) => commands::cmd_check(&p, &mut report),
                Verb::Wilson { line, as_loop, sweep, .. } => {
                    let mode = if *line { Some(false) } else if *as_loop { Some(true) } else { None };
                    commands::cmd_wilson(&p, mode, sweep, &mut report)
                }
                Verb::Bar(_) => commands::cmd_bar(&p, &mut report),
                Verb::Gallery { .. } => unreachable!(),
            };
            r.map_err(describe)?;
        }
        Err(BuildError::Check(field, e)) => report.push(commands::failure("build", &field, &e)),
        Err(e) => return Err(describe(e)),
    }

    for c in &report.checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        let kind = if c.exact { "exact" } else { "numeric" };
        eprintln!("{tag} {:<32} {kind:<7} residual {:.3e} tol {:.1e}", c.check, c.residual, c.tolerance);
        if !c.pass && !c.detail.is_null() {
            eprintln!("     {}", c.detail);
        }
    }
    let text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
    emit(&text, common.out.as_deref())?;
    Ok(if report.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn describe(e: BuildError) -> String {
    match e {
        BuildError::Config(m) => m,
        BuildError::Check(field, e) => format!("{field}: {e}"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}
