use std::path::PathBuf;

use anyhow::{Context, Result};
use archplan_core::sampler::{
    allocate_tokens, read_weights_csv, sample_table_csv, sampling_probs, DEFAULT_ALPHA,
};
use clap::Args;

use crate::output::{emit, read_input};
use crate::Status;

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// CSV with header `language,weight` (sizes or proportions).
    #[arg(long, short)]
    input: PathBuf,
    /// Sampling exponent: 1 keeps natural proportions, 0 is uniform.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Tokens to apportion across languages.
    #[arg(long, default_value_t = 341_000_000_000)]
    total_tokens: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: SampleArgs) -> Result<Status> {
    let text = read_input(&args.input)?;
    let weights = read_weights_csv(text.as_bytes())
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let shares = sampling_probs(&weights, args.alpha)?;
    let probs: Vec<(String, f64)> = shares
        .iter()
        .map(|s| (s.language.clone(), s.sampled_prob))
        .collect();
    let tokens = allocate_tokens(args.total_tokens, &probs)?;
    emit(args.output.as_deref(), &sample_table_csv(&shares, &tokens))?;
    Ok(Status::Ok)
}
