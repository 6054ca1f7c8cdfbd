mod commands;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossmatch::{Estimand, Format, MatchSpec};

use crate::pipeline::{RunConfig, Stage};

#[derive(Parser)]
#[command(name = "crossmatch", version, about = "Propensity score matching for binary actions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a data file and write descriptive statistics by arm.
    Describe {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fit the propensity model; writes coefficients and the overlap report.
    Fit(RunArgs),
    /// Fit and match; adds pre-match balance and the match result.
    Match(RunArgs),
    /// Fit, match and check balance; adds post-match balance and histograms.
    Balance(RunArgs),
    /// Run the full pipeline through the effect estimate.
    Estimate(RunArgs),
    /// Generate a synthetic table with its counterfactuals and true effects.
    Simulate {
        /// Suite scenario name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's number of units.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Render the artifacts of a completed run as a text report.
    Report {
        /// Directory holding a complete run.
        run: PathBuf,
    },
}

#[derive(Args)]
struct InputArgs {
    /// CSV data file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Schema file naming treatment, outcome and covariates.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "CROSSMATCH_OUT", default_value = "crossmatch-out")]
    out: PathBuf,
    /// Table format for written artifacts.
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "att", value_parser = parse_estimand)]
    estimand: Estimand,
    /// Match without replacement (greedy, ties disabled).
    #[arg(long)]
    no_replacement: bool,
    /// Keep a single nearest match per unit (lowest id on ties).
    #[arg(long)]
    no_ties: bool,
    /// Score distance within which candidates count as tied.
    #[arg(long, default_value_t = 1e-8)]
    tie_tol: f64,
    /// Maximum score distance for a match.
    #[arg(long)]
    caliper: Option<f64>,
    /// Number of bootstrap replicates (at least 2); omit for none.
    #[arg(long, value_name = "B")]
    bootstrap: Option<usize>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap worker threads; defaults to available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: crossmatch::Error| e.to_string())
}

fn parse_estimand(s: &str) -> Result<Estimand, String> {
    s.parse().map_err(|e: crossmatch::Error| e.to_string())
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        let with_replacement = !self.no_replacement;
        RunConfig {
            data: self.input.data,
            schema: self.input.schema,
            estimand: self.estimand,
            spec: MatchSpec {
                with_replacement,
                allow_ties: with_replacement && !self.no_ties,
                tie_tolerance: self.tie_tol,
                caliper: self.caliper,
            },
            bootstrap: self.bootstrap,
            seed: self.seed,
            workers: self.workers,
            out: self.output.out,
            format: self.output.format,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Describe { input, output } => {
            commands::describe(&input.data, &input.schema, &output.out, output.format)
        }
        Command::Fit(args) => pipeline::run_command(&args.into_config(), Stage::Fit),
        Command::Match(args) => pipeline::run_command(&args.into_config(), Stage::Match),
        Command::Balance(args) => pipeline::run_command(&args.into_config(), Stage::Balance),
        Command::Estimate(args) => pipeline::run_command(&args.into_config(), Stage::Estimate),
        Command::Simulate {
            scenario,
            seed,
            n,
            output,
        } => commands::simulate(&scenario, seed, n, &output.out, output.format),
        Command::Report { run } => report::render(&run).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
