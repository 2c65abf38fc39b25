use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dropmix::batch::{self, BatchError};
use dropmix::config::{ConfigError, ScenarioConfig};
use dropmix::metrics::write_report;
use dropmix::sim::run_scenario;

#[derive(Parser)]
#[command(name = "dropmix", version, about = "Dead-drop mix network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.csv / report.txt.
    Run {
        /// Config file, or the name of a bundled scenario.
        #[arg(long)]
        config: String,
        /// Override World.seed.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Run every seed from A to B inclusive.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<std::ops::Range<u64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write trace.csv with the event log.
        #[arg(long)]
        trace: bool,
    },
    /// Per-metric deltas and ratios between two report directories.
    Compare { a: PathBuf, b: PathBuf },
    /// Print a bundled scenario file, or list them.
    Scenarios { name: Option<String> },
}

fn parse_seeds(s: &str) -> Result<std::ops::Range<u64>, String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    if b < a {
        return Err("empty seed range".into());
    }
    Ok(a..b + 1)
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<BatchError> for Failure {
    fn from(e: BatchError) -> Self {
        match e {
            BatchError::Sim(dropmix::sim::SimError::Config(c)) => Failure::Config(c.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn load(arg: &str) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        let name = arg.strip_suffix(".ini").unwrap_or(arg);
        if let Some((_, cfg)) = ScenarioConfig::bundled(name) {
            return Ok(cfg);
        }
    }
    let cfg = ScenarioConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(
    config: &str,
    seed: Option<u64>,
    seeds: Option<std::ops::Range<u64>>,
    out: &Path,
    trace: bool,
) -> Result<(), Failure> {
    let mut cfg = load(config)?;
    match seeds {
        Some(range) => {
            let outcomes = batch::run_seeds(&cfg, range, trace).map_err(BatchError::from)?;
            batch::write_batch(out, &outcomes)?;
            print!("{}", batch::aggregate(&outcomes));
        }
        None => {
            if let Some(s) = seed {
                cfg.world.seed = s;
            }
            let outcome = run_scenario(&cfg, trace).map_err(BatchError::from)?;
            write_report(&outcome.report, out)
                .map_err(|e| Failure::Runtime(format!("writing {}: {e}", out.display())))?;
            if let Some(t) = &outcome.trace {
                std::fs::write(out.join("trace.csv"), t)
                    .map_err(|e| Failure::Runtime(format!("writing trace: {e}")))?;
            }
            print!("{}", outcome.report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { config, seed, seeds, out, trace } => run(&config, seed, seeds, &out, trace),
        Command::Compare { a, b } => batch::compare(&a, &b).map(|t| print!("{t}")).map_err(|e| match e {
            BatchError::Schema(_) | BatchError::NoReport(_) => Failure::Config(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }),
        Command::Scenarios { name: None } => {
            println!("scenario1\nscenario2");
            Ok(())
        }
        Command::Scenarios { name: Some(n) } => match ScenarioConfig::bundled(n.trim_end_matches(".ini")) {
            Some((text, _)) => {
                print!("{text}");
                Ok(())
            }
            None => Err(Failure::Config(format!("no bundled scenario named {n:?}"))),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
