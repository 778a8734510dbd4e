use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oseledets_harness::record::{read_records, write_records, write_stdout};
use oseledets_harness::{config, emit_plotdata, parse_grid_axis, run, sweep, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "oseledets", version, about = "Lyapunov spectra and Oseledets splittings of random cocycles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write one record.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configuration over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `KEY=V1,V2,...`, repeatable; the first axis varies slowest.
        #[arg(long)]
        grid: Vec<String>,
    },
    /// Tabulate selected fields of a record file.
    Plotdata {
        /// Record file (`--config` is accepted as an alias).
        #[arg(long, alias = "config")]
        records: PathBuf,
        /// Comma-separated field names.
        #[arg(long, value_delimiter = ',')]
        select: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized lemma corpora.
    LemmaSuite {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<toml::Table, HarnessError> {
    let mut table = config::read_table(path)?;
    if let Some(s) = seed {
        config::set_key(&mut table, "seed", toml::Value::Integer(s as i64))?;
    }
    Ok(table)
}

fn out_path(cli: Option<PathBuf>, cfg: &RunConfig) -> Option<PathBuf> {
    cli.or_else(|| cfg.output.path.as_ref().map(PathBuf::from))
}

fn single(cfg: RunConfig, out: Option<PathBuf>) -> Result<(), HarnessError> {
    let rec = run(&cfg)?;
    write_records(std::slice::from_ref(&rec), out_path(out, &cfg).as_deref())?;
    if rec.is_ok() {
        Ok(())
    } else {
        Err(HarnessError::Numeric(rec.error.unwrap_or_default()))
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, seed, out } => single(RunConfig::from_table(load(&config, seed)?)?, out),
        Command::LemmaSuite { config, seed, out } => {
            let table = match config {
                Some(p) => load(&p, seed)?,
                None => {
                    let mut t = config::parse_table("kind = \"lemma-suite\"")?;
                    if let Some(s) = seed {
                        config::set_key(&mut t, "seed", toml::Value::Integer(s as i64))?;
                    }
                    t
                }
            };
            single(RunConfig::from_table(table)?, out)
        }
        Command::Sweep { config, seed, out, grid } => {
            let table = load(&config, seed)?;
            let axes = grid.iter().map(|g| parse_grid_axis(g)).collect::<Result<Vec<_>, _>>()?;
            let out = out.or_else(|| {
                table
                    .get("output")
                    .and_then(|o| o.get("path"))
                    .and_then(|p| p.as_str())
                    .map(PathBuf::from)
            });
            let records = sweep(&table, &axes)?;
            write_records(&records, out.as_deref())?;
            if records.is_empty() || records.iter().any(|r| r.is_ok()) {
                Ok(())
            } else {
                Err(HarnessError::Numeric("every grid point failed".into()))
            }
        }
        Command::Plotdata { records, select, out } => {
            let records = read_records(&records)?;
            let table = emit_plotdata(&records, &select)?;
            match out {
                Some(p) => std::fs::write(&p, table).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display()))),
                None => write_stdout(&table),
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oseledets: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
