use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use archplan_core::kernel::train::extrapolation_plot_points;
use archplan_core::kernel::{
    extrapolation_csv, extrapolation_curve, run_checks, InductionTask, KernelConfig, Positional,
    TrainConfig,
};
use archplan_core::plot::emit_plot_csv;
use clap::Args;

use crate::output::emit;
use crate::Status;

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("mode").required(true).multiple(true))]
pub struct KernelArgs {
    /// Run the invariant and gradient-check suite; exits 1 if any check fails.
    #[arg(long, group = "mode")]
    check: bool,
    /// Train a tiny model per positional scheme and evaluate at longer lengths,
    /// writing `positional,eval_len,loss` CSV.
    #[arg(long, group = "mode")]
    extrapolate: bool,
    /// Seed for the check suite and training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positional schemes to train: none, learned, rotary, alibi.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "alibi,rotary,learned,none"
    )]
    positional: Vec<Positional>,
    /// Training sequence length.
    #[arg(long, default_value_t = 64)]
    train_len: usize,
    /// Evaluation lengths.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
    eval_lens: Vec<usize>,
    #[arg(long, default_value_t = 1200)]
    steps: usize,
    /// Vocabulary of the synthetic repeated-sequence task.
    #[arg(long, default_value_t = 32)]
    vocab: usize,
    /// Period after which the task sequence repeats.
    #[arg(long, default_value_t = 8)]
    period: usize,
    /// Sequences averaged per evaluation length.
    #[arg(long, default_value_t = 32)]
    eval_seqs: usize,
    /// Apply layer norm directly after the embedding.
    #[arg(long)]
    embed_norm: bool,
    /// Write the extrapolation CSV here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write the extrapolation curves as `series,x,y` plot data.
    #[arg(long)]
    plot: Option<PathBuf>,
}

pub fn run(args: KernelArgs) -> Result<Status> {
    let mut status = Status::Ok;
    if args.check {
        let start = Instant::now();
        let outcomes = run_checks(args.seed);
        let mut n_failed = 0;
        for o in &outcomes {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            if !o.passed {
                n_failed += 1;
            }
            eprintln!("{tag} {}: {}", o.name, o.detail);
        }
        eprintln!(
            "{} of {} checks passed in {:.2?}",
            outcomes.len() - n_failed,
            outcomes.len(),
            start.elapsed()
        );
        if n_failed > 0 {
            status = Status::ChecksFailed;
        }
    }
    if args.extrapolate {
        let task = InductionTask {
            vocab: args.vocab,
            period: args.period,
        };
        let train_cfg = TrainConfig {
            steps: args.steps,
            seq_len: args.train_len,
            seed: args.seed,
            ..TrainConfig::default()
        };
        let mut rows = Vec::new();
        for &p in &args.positional {
            let mut config = KernelConfig::tiny(args.vocab, args.train_len).with_positional(p);
            config.embed_norm = args.embed_norm;
            let start = Instant::now();
            let run =
                extrapolation_curve(&config, &train_cfg, &args.eval_lens, &task, args.eval_seqs)?;
            eprintln!(
                "{p}: final train loss {:.4} after {} steps ({:.1?})",
                run.train_report.tail_mean(50),
                args.steps,
                start.elapsed()
            );
            rows.extend(run.rows);
        }
        emit(args.output.as_deref(), &extrapolation_csv(&rows))?;
        if let Some(path) = &args.plot {
            emit_plot_csv(&extrapolation_plot_points(&rows), path)?;
        }
    }
    Ok(status)
}
