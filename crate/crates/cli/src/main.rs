use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use coresplit::msr::Query;
use coresplit_cli::{Format, MsrOptions, Output, PipelineConfig};

#[derive(Parser)]
#[command(name = "coresplit", version, about = "Checks programs split into a protocol core and an application")]
struct Cli {
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the whole pipeline and report every diagnostic.
    Check(Pipeline),
    /// Print the static facts: points-to, escape, pass-through, taint.
    Analyze(Pipeline),
    /// Print the program with its ghost code.
    Instrument(Pipeline),
    /// Explore all interleavings of the instrumented program.
    Explore(Pipeline),
    /// Check the observed Core traces against a role of a protocol model.
    Refine(Pipeline),
    /// Bounded trace search over a protocol model.
    Msr(MsrArgs),
}

#[derive(Args)]
struct Pipeline {
    /// Program file; may be omitted with --config.
    program: Option<PathBuf>,
    /// JSON pipeline config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    taint: Option<PathBuf>,
    #[arg(long)]
    contract: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    role: Option<String>,
    #[arg(long)]
    max_runs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    max_threads: Option<usize>,
    /// Comma-separated passes to leave out: taint, conditions, explore, refine.
    #[arg(long)]
    skip: Option<String>,
}

impl Pipeline {
    fn config(self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        match self.program {
            Some(p) => cfg.program = p,
            None if self.config.is_none() => anyhow::bail!("no program given"),
            None => {}
        }
        cfg.taint = self.taint.or(cfg.taint);
        cfg.contract = self.contract.or(cfg.contract);
        cfg.model = self.model.or(cfg.model);
        cfg.role = self.role.or(cfg.role);
        cfg.bounds.max_runs = self.max_runs.unwrap_or(cfg.bounds.max_runs);
        cfg.bounds.max_steps = self.max_steps.unwrap_or(cfg.bounds.max_steps);
        cfg.bounds.max_threads = self.max_threads.unwrap_or(cfg.bounds.max_threads);
        if let Some(s) = &self.skip {
            cfg.passes.skip(s)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct MsrArgs {
    model: PathBuf,
    #[arg(long, default_value = "secrecy")]
    query: Query,
    #[arg(long, default_value_t = 10)]
    bound: usize,
    /// Also replay this many random concrete traces against the attacker.
    #[arg(long, default_value_t = 0)]
    simulate: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    depth: usize,
}

fn run(cli: Cli) -> Result<(Output, Format)> {
    let pipeline = |p: Pipeline, f: fn(&PipelineConfig) -> Result<Output>| -> Result<(Output, Format)> {
        let cfg = p.config()?;
        Ok((f(&cfg)?, cli.format.unwrap_or(cfg.format)))
    };
    match cli.cmd {
        Cmd::Check(p) => pipeline(p, coresplit_cli::check),
        Cmd::Analyze(p) => pipeline(p, coresplit_cli::analyze),
        Cmd::Instrument(p) => pipeline(p, coresplit_cli::instrument_cmd),
        Cmd::Explore(p) => pipeline(p, coresplit_cli::explore_cmd),
        Cmd::Refine(p) => pipeline(p, coresplit_cli::refine_cmd),
        Cmd::Msr(a) => {
            let o = MsrOptions { query: a.query, bound: a.bound, simulate: a.simulate, seed: a.seed, depth: a.depth };
            Ok((coresplit_cli::msr(&a.model, &o)?, cli.format.unwrap_or_default()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((out, f)) => {
            print!("{}", out.render(f));
            ExitCode::from(out.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
