use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use lrusim::SimError;

mod commands;
mod config;
mod report;

/// Bad flags or config values. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "lrusim", version, about = "Replacement-state cache timing channel experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed; every trial, cell and actor derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write CSV here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads (0 = all cores). Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// key=value file of flag values; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Eviction probability of line 0 under PLRU (the two access sequences).
    PlruTable(commands::PlruTable),
    /// Covert channel runs and parameter sweeps.
    #[command(subcommand)]
    Channel(ChannelCmd),
    /// Attack on the partition-locked cache, original vs. LRU-locked design.
    Plcache(commands::Plcache),
    /// Recover a secret through a bounds-check-bypass gadget.
    Spectre(commands::Spectre),
    /// Miss rates of replacement policies on traces.
    Missrate(commands::Missrate),
}

#[derive(Subcommand, Debug)]
enum ChannelCmd {
    /// One message through one configuration.
    Run(commands::ChannelRunArgs),
    /// Error rate over a grid of protocols, d, Ts and Tr.
    Sweep(commands::ChannelSweepArgs),
}

/// What a successful invocation produced.
pub enum Status {
    Ok,
    /// The CSV was written but the experiment did not succeed.
    ExperimentFailed(String),
}

fn parse_cli(argv: Vec<String>) -> anyhow::Result<Cli> {
    let mut cmd = Cli::command();
    cmd.build();
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let common = Common::from_arg_matches(&matches)?;
    let Some(path) = common.config else {
        return Ok(Cli::from_arg_matches(&matches)?);
    };
    let entries = config::load(&path).map_err(|e| e.context(format!("config file {}", path.display())))?;
    let mut full = argv;
    full.extend(config::extra_args(&cmd, &matches, &entries)?);
    let matches = cmd.try_get_matches_from(&full)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let common = cli.common.clone();
    let (report, status) = lrusim::par::with_jobs(common.jobs, || match cli.command {
        Cmd::PlruTable(a) => commands::plru_table(&a, &common),
        Cmd::Channel(ChannelCmd::Run(a)) => commands::channel_run(&a, &common),
        Cmd::Channel(ChannelCmd::Sweep(a)) => commands::channel_sweep(&a, &common),
        Cmd::Plcache(a) => commands::plcache(&a, &common),
        Cmd::Spectre(a) => commands::spectre(&a, &common),
        Cmd::Missrate(a) => commands::missrate(&a, &common),
    })?;
    match &common.output {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            report.write_to(&mut w)?;
            w.flush().with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let stdout = io::stdout();
            report.write_to(stdout.lock())?;
        }
    }
    Ok(status)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return 1;
        }
        if cause.is::<io::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Io { .. } | SimError::TraceParse { .. } => 2,
                _ => 1,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match parse_cli(argv) {
        Ok(c) => c,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                // --help and --version land here too
                let _ = ce.print();
                return ExitCode::from(if ce.use_stderr() { 1 } else { 0 });
            }
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ExperimentFailed(why)) => {
            eprintln!("experiment failed: {why}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
