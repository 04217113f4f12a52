use std::path::PathBuf;

use anyhow::{Context, Result};
use archplan_core::eval::{
    average_accuracy, comparison_markdown, comparison_table, models, read_comparison_csv,
    read_eval_csv,
};
use archplan_core::{fixtures, Grouping, Metric};
use clap::{Args, ValueEnum};

use crate::output::{emit, read_input, text_table, Format};
use crate::Status;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GroupBy {
    /// One group per token budget.
    Tokens,
    /// One group per (model size, token budget).
    SizeTokens,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Results CSV with header `model,task,metric,value`. Defaults to the
    /// bundled zero-shot results table.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Models to report (repeatable or comma separated). Defaults to all.
    #[arg(long, value_delimiter = ',')]
    model: Vec<String>,
    /// Metrics in preference order; each task contributes its first available
    /// one. `acc,f1` also counts tasks that only report F1.
    #[arg(long, value_delimiter = ',', default_value = "acc")]
    metrics: Vec<Metric>,
    /// Render the grouped comparison table (markdown) from a
    /// `model,params_b,dataset,tokens_b,avg_acc` CSV instead; `bundled` uses
    /// the shipped pretraining-data table.
    #[arg(long, value_name = "CSV|bundled")]
    comparison: Option<String>,
    #[arg(long, value_enum, default_value_t = GroupBy::SizeTokens)]
    group_by: GroupBy,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: ReportArgs) -> Result<Status> {
    if let Some(source) = &args.comparison {
        let text = if source == "bundled" {
            fixtures::DATASET_AVERAGES.to_string()
        } else {
            read_input(source.as_ref())?
        };
        let entries = read_comparison_csv(text.as_bytes()).context("reading comparison table")?;
        let grouping = match args.group_by {
            GroupBy::Tokens => Grouping::Tokens,
            GroupBy::SizeTokens => Grouping::ParamsAndTokens,
        };
        emit(
            args.output.as_deref(),
            &comparison_markdown(&comparison_table(&entries, grouping)),
        )?;
        return Ok(Status::Ok);
    }

    let (text, source) = match &args.input {
        Some(path) => (read_input(path)?, path.display().to_string()),
        None => (
            fixtures::ZERO_SHOT_RESULTS.to_string(),
            "bundled results".to_string(),
        ),
    };
    let records = read_eval_csv(text.as_bytes(), &source)?;
    let selected = if args.model.is_empty() {
        models(&records)
    } else {
        args.model.clone()
    };

    let mut rows = Vec::with_capacity(selected.len());
    for m in &selected {
        rows.push(average_accuracy(&records, m, &args.metrics)?);
    }
    let out = match args.format {
        Format::Csv => {
            let mut s = String::from("model,average_acc,n_tasks\n");
            for r in &rows {
                s.push_str(&format!("{},{:.2},{}\n", r.model, r.average_acc, r.n_tasks));
            }
            s
        }
        Format::Text => {
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.model.clone(),
                        format!("{:.2}", r.average_acc),
                        r.n_tasks.to_string(),
                    ]
                })
                .collect();
            text_table(&["model", "avg acc", "tasks"], &cells)
        }
    };
    emit(args.output.as_deref(), &out)?;
    Ok(Status::Ok)
}
