use std::path::PathBuf;

use anyhow::Result;
use archplan_core::budget::{pf_days_to_flop, HOURS_PER_WEEK};
use archplan_core::{AllocationCalibration, BudgetReport, ClusterGrant, ScheduleConfig};
use clap::Args;

use crate::output::{emit, text_table, thousands, Format};
use crate::Status;

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Nodes in the allocation.
    #[arg(long)]
    nodes: u64,
    /// GPUs per node.
    #[arg(long)]
    gpus: u64,
    /// Duration of the allocation in weeks.
    #[arg(long)]
    weeks: f64,
    /// Nodes held back as spares.
    #[arg(long, default_value_t = 0)]
    spare: u64,
    /// Assumed sustained throughput per GPU, in TFLOP/s.
    #[arg(long)]
    tflops: f64,
    /// Fraction of the compute held back for contingencies, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// The kept budget is rounded down to a multiple of this many PF-days.
    #[arg(long, default_value_t = 1.0)]
    granularity: f64,
    /// Exponent of the compute-optimal model-size power law.
    #[arg(long, default_value_t = 0.73)]
    alloc_exponent: f64,
    /// Report the model size affordable at these token counts (billions).
    #[arg(long = "tokens-b", value_delimiter = ',')]
    tokens_b: Vec<f64>,
    /// Schedule config (TOML); prints learning rate and batch size at milestones.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: PlanArgs) -> Result<Status> {
    let grant = ClusterGrant {
        nodes: args.nodes,
        gpus_per_node: args.gpus,
        duration_hours: args.weeks * HOURS_PER_WEEK,
        spare_nodes: args.spare,
        flops_per_gpu: args.tflops * 1e12,
    };
    let calib = AllocationCalibration {
        exponent: args.alloc_exponent,
        ..AllocationCalibration::default()
    };
    let tokens: Vec<f64> = args.tokens_b.iter().map(|t| t * 1e9).collect();
    let report = BudgetReport::build(&grant, 1.0 - args.margin, args.granularity, &calib, &tokens)?;
    let schedule = args
        .schedule
        .as_deref()
        .map(ScheduleConfig::from_path)
        .transpose()?;

    let mut rows = report.rows();
    if let Some(s) = &schedule {
        for t in milestones(s) {
            rows.push((format!("lr_at_{t:.0}_tokens"), s.lr_at(t), "1/step"));
            rows.push((
                format!("batch_at_{t:.0}_tokens"),
                s.batch_at(t) as f64,
                "tokens",
            ));
        }
    }

    let text = match args.format {
        Format::Csv => {
            let mut out = String::from("quantity,value,unit\n");
            for (q, v, u) in &rows {
                out.push_str(&format!("{q},{v},{u}\n"));
            }
            out
        }
        Format::Text => {
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|(q, v, u)| vec![q.clone(), display_value(*v, u), u.to_string()])
                .collect();
            let mut out = text_table(&["quantity", "value", "unit"], &cells);
            out.push_str(&format!(
                "\n{} GPU-hours at {} TFLOP/s give {} PF-days ({} kept); optimal model {:.1}B params on {:.1}B tokens ({:.3e} FLOP).\n",
                thousands(report.gpu_hours, 0),
                args.tflops,
                thousands(report.raw_pf_days.round(), 0),
                thousands(report.budget_pf_days, 0),
                report.optimum.n_params / 1e9,
                report.optimum.n_tokens / 1e9,
                pf_days_to_flop(report.budget_pf_days),
            ));
            out
        }
    };
    emit(args.output.as_deref(), &text)?;
    Ok(Status::Ok)
}

fn display_value(v: f64, unit: &str) -> String {
    match unit {
        "params" | "tokens" if v >= 1e9 => format!("{:.2}B", v / 1e9),
        "h" | "tokens" => thousands(v, 0),
        "PF-days" => thousands(v, 1),
        _ => format!("{v:.3e}"),
    }
}

fn milestones(s: &ScheduleConfig) -> Vec<f64> {
    let mut m = vec![
        0.0,
        s.warmup_tokens,
        s.batch_ramp_tokens,
        s.total_tokens / 2.0,
        s.total_tokens,
    ];
    m.sort_by(f64::total_cmp);
    m.dedup();
    m
}
