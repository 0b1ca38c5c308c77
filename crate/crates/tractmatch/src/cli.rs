//! Batch command-line interface. Every command reads one JSON config file
//! (plus optional `--set key=value` overrides) and writes files under the
//! configured output directory.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use crate::charts::emit_charts;
use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "tractmatch",
    about = "Learned-metric matching and localized density analysis for urban structure / crime studies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Parser)]
pub struct StageArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path overrides, e.g. `--set matching.folds=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured synthetic dataset with ground truth.
    Synth(StageArgs),
    /// Parse and join the raw inputs into the analysis table.
    Ingest(StageArgs),
    /// Binarize structure counts into treatment labels.
    Treat(StageArgs),
    /// Learn metrics and build matched groups by repeated cross-validation.
    Match(StageArgs),
    /// Estimate CATEs, the ATE, and CATE variances from matched groups.
    Estimate(StageArgs),
    /// Compute localized density curves around structures and control points.
    Density(StageArgs),
    /// Scan covariates for treatment-effect heterogeneity.
    Heterogeneity(StageArgs),
    /// Run every stage and write report.json.
    Run(StageArgs),
    /// Render SVG charts from an existing report.json.
    Charts(StageArgs),
}

impl Command {
    fn stage_args(&self) -> &StageArgs {
        match self {
            Command::Synth(a)
            | Command::Ingest(a)
            | Command::Treat(a)
            | Command::Match(a)
            | Command::Estimate(a)
            | Command::Density(a)
            | Command::Heterogeneity(a)
            | Command::Run(a)
            | Command::Charts(a) => a,
        }
    }
}

/// Execute one parsed command. On failure a `FAILED` marker naming the cause
/// is left in the output directory beside any partial outputs.
pub fn execute(command: &Command) -> Result<()> {
    let args = command.stage_args();
    let config = RunConfig::load(&args.config, &args.set)?;
    let outcome = dispatch(command, &config);
    if let Err(err) = &outcome {
        let marker = config.out_dir.join("FAILED");
        if std::fs::create_dir_all(&config.out_dir).is_ok() {
            let _ = std::fs::write(&marker, format!("{err}\n"));
        }
    } else {
        let _ = std::fs::remove_file(config.out_dir.join("FAILED"));
    }
    outcome
}

fn dispatch(command: &Command, config: &RunConfig) -> Result<()> {
    match command {
        Command::Synth(_) => {
            let paths = pipeline::run_synth(config)?;
            eprintln!("synth: wrote {}", paths.tracts.parent().unwrap().display());
            Ok(())
        }
        Command::Ingest(_) => {
            let table = pipeline::run_ingest(config)?;
            eprintln!("ingest: {} tracts", table.tracts.len());
            Ok(())
        }
        Command::Treat(_) => pipeline::run_treat(config),
        Command::Match(_) => pipeline::run_match(config),
        Command::Estimate(_) => pipeline::run_estimate(config),
        Command::Density(_) => pipeline::run_density(config),
        Command::Heterogeneity(_) => pipeline::run_heterogeneity(config),
        Command::Run(_) => {
            let report = pipeline::run_pipeline(config)?;
            for entry in &report.ranking {
                eprintln!("run: {}: ATE {} (sd {})", entry.name, entry.ate, entry.sd);
            }
            Ok(())
        }
        Command::Charts(_) => {
            let report = pipeline::Report::load(&config.out_dir.join("report.json"))?;
            let written = emit_charts(&report, &config.out_dir)?;
            eprintln!("charts: wrote {} files", written.len());
            Ok(())
        }
    }
}

/// Entry point for the binary: parse, execute, map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Clap handles --help/--version as "errors" with exit code 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
