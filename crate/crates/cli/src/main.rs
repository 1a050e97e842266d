//! `gaussflow` command-line driver.
//!
//! Exit status: 0 when every check passes, 1 when any check fails, 2 on
//! usage, configuration or runtime errors.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Output;
use crate::config::{Config, WeightProfile};

#[derive(Parser)]
#[command(name = "gaussflow", version, about = "Malliavin calculus and Gaussian flow experiments")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master and batch seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving report.json and the CSV tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format written to stdout when no --out is given.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite: duality, product-rule, spectral, operator,
    /// hodge, flow-basic, flow-density, pde or adapted.
    Verify { suite: String },
    /// Decompose a chaos field file into {v0, ve, psi, A}.
    Hodge { field_file: PathBuf },
    /// Integrate the configured field and track densities.
    Flow,
    /// Residual table of the transport equation.
    Pde,
    /// Numerical demos.
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Partial sums of E||∇a_m||² in the H norm and a weighted norm.
    Counterexample {
        #[arg(long)]
        m_max: Option<usize>,
        #[arg(long, value_enum)]
        weights: Option<WeightProfile>,
    },
}

fn run(cli: &Cli) -> Result<Output> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.resolve(cli.seed)?;
    match &cli.command {
        Command::Verify { suite } => commands::verify(suite, cfg),
        Command::Hodge { field_file } => commands::hodge(field_file, cfg),
        Command::Flow => commands::flow(cfg),
        Command::Pde => commands::pde(cfg),
        Command::Demo { demo: Demo::Counterexample { m_max, weights } } => {
            if let Some(m) = m_max {
                cfg.demo.m_max = *m;
            }
            if let Some(w) = weights {
                cfg.demo.weights = *w;
            }
            commands::demo_counterexample(cfg)
        }
    }
}

fn write_outputs(out: &Output, dir: Option<&Path>, format: Format) -> Result<()> {
    let Some(dir) = dir else {
        match format {
            Format::Json => println!("{}", serde_json::to_string_pretty(&out.report)?),
            Format::Csv => print!("{}", out.tables.first().map(|t| t.1.to_csv()).transpose()?.unwrap_or_default()),
        }
        return Ok(());
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write("report.json", serde_json::to_string_pretty(&out.report)?)?;
    for (name, table) in &out.tables {
        write(name, table.to_csv()?)?;
    }
    for (name, doc) in &out.documents {
        write(name, serde_json::to_string_pretty(doc)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match run(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_outputs(&out, cli.out.as_deref(), cli.format) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    for c in out.report.checks.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: {} > {}", c.name, c.value, c.tolerance);
    }
    if out.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
