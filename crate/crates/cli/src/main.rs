//! `archplan`: budget planning, scaling-law fits, shape search, multilingual
//! sampling, kernel checks and evaluation reports from the command line.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod fit;
mod kernel;
mod output;
mod plan;
mod report;
mod sample;
mod search;

#[derive(Parser, Debug)]
#[command(name = "archplan", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a cluster grant into a compute budget and a model/data allocation.
    Plan(plan::PlanArgs),
    /// Fit power laws L = c_m * C^-alpha_c to (compute, loss) points per language.
    Fit(fit::FitArgs),
    /// Enumerate or ingest candidate shapes, estimate memory and pick a final one.
    Search(search::SearchArgs),
    /// Temperature-scaled multilingual sampling probabilities and token budgets.
    Sample(sample::SampleArgs),
    /// Run the kernel invariant suite or the length-extrapolation experiment.
    Kernel(kernel::KernelArgs),
    /// Average zero-shot accuracy per model and the grouped comparison table.
    Report(report::ReportArgs),
}

/// Whether every check a command ran passed. Errors are reported separately.
pub enum Status {
    Ok,
    ChecksFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(args) => plan::run(args),
        Command::Fit(args) => fit::run(args),
        Command::Search(args) => search::run(args),
        Command::Sample(args) => sample::run(args),
        Command::Kernel(args) => kernel::run(args),
        Command::Report(args) => report::run(args),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
