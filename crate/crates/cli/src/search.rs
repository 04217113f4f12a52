use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use archplan_core::search::{
    candidates_to_csv, consistency_check, enumerate_candidates, quantization_flags,
    read_benchmark_csv, select_final, Preference, A100_SM_COUNT, WARP_SIZE,
};
use archplan_core::{
    fixtures, CandidateRow, MemoryModel, ParallelismPlan, SearchConstraints, SelectionRules,
};
use clap::{Args, ValueEnum};

use crate::output::{emit, read_input};
use crate::Status;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BenchmarkFixture {
    /// The three short-listed final configurations.
    Final,
    /// The full benchmarked throughput/memory table.
    Throughput,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Benchmark CSV (`config,size_bparams,layers,hidden,heads,head_dim,dp,tp,pp,mbs,mem_gb,step_time_s,tflops`)
    /// to evaluate instead of enumerating shapes.
    #[arg(long, short, conflicts_with = "fixture")]
    input: Option<PathBuf>,
    /// Evaluate a bundled benchmark table instead of enumerating shapes.
    #[arg(long, value_enum)]
    fixture: Option<BenchmarkFixture>,

    /// Smallest model to enumerate, in billions of parameters.
    #[arg(long, default_value_t = 160.0)]
    params_min_b: f64,
    #[arg(long, default_value_t = 200.0)]
    params_max_b: f64,
    #[arg(long, default_value_t = 70)]
    layers_min: u64,
    #[arg(long, default_value_t = 82)]
    layers_max: u64,
    /// Allowed head dimensions (comma separated). Defaults to 96..=224 in steps of 8.
    #[arg(long, value_delimiter = ',')]
    head_dims: Vec<u64>,
    /// Hidden size must be a multiple of this.
    #[arg(long, default_value_t = 128)]
    hidden_multiple: u64,
    #[arg(long, default_value_t = 250_880)]
    vocab: u64,

    /// GPUs for enumerated candidates; data parallelism fills the rest.
    #[arg(long, default_value_t = 384)]
    gpus: u64,
    #[arg(long, default_value_t = 4)]
    tp: u64,
    #[arg(long, default_value_t = 12)]
    pp: u64,
    /// Sequences per micro-batch.
    #[arg(long, default_value_t = 2)]
    mbs: u64,

    /// Per-GPU memory capacity in GB.
    #[arg(long, default_value_t = 80.0)]
    capacity_gb: f64,
    /// Fixed per-GPU overhead in GB.
    #[arg(long, default_value_t = 8.0)]
    overhead_gb: f64,
    /// Candidates with a larger head dimension are rejected.
    #[arg(long, default_value_t = 200)]
    max_head_dim: u64,

    /// Write the candidate CSV here; the selection report then goes to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn run(args: SearchArgs) -> Result<Status> {
    let memory = MemoryModel {
        capacity_gb: args.capacity_gb,
        overhead_gb: args.overhead_gb,
        ..MemoryModel::default()
    };
    let benchmark = match (&args.input, args.fixture) {
        (Some(path), _) => Some(read_input(path)?),
        (None, Some(BenchmarkFixture::Final)) => Some(fixtures::FINAL_CONFIGS.to_string()),
        (None, Some(BenchmarkFixture::Throughput)) => Some(fixtures::THROUGHPUT_BENCHMARKS.to_string()),
        (None, None) => None,
    };

    let measured = benchmark.is_some();
    let rows: Vec<CandidateRow> = match benchmark {
        Some(text) => read_benchmark_csv(text.as_bytes())
            .context("reading benchmark table")?
            .iter()
            .map(|r| r.to_candidate(&memory))
            .collect::<Result<_, _>>()?,
        None => {
            let mut constraints = SearchConstraints {
                params_min: args.params_min_b * 1e9,
                params_max: args.params_max_b * 1e9,
                layers_min: args.layers_min,
                layers_max: args.layers_max,
                hidden_multiple: args.hidden_multiple,
                vocab: args.vocab,
                ..SearchConstraints::default()
            };
            if !args.head_dims.is_empty() {
                constraints.head_dims = args.head_dims.clone();
            }
            let plan = ParallelismPlan::for_gpus(args.gpus, args.tp, args.pp, args.mbs)?;
            enumerate_candidates(&constraints)?
                .into_iter()
                .enumerate()
                .map(|(i, shape)| {
                    CandidateRow::estimate(format!("c{i}"), shape, plan.clone(), &memory)
                })
                .collect()
        }
    };
    if rows.is_empty() {
        bail!("no candidates satisfy the constraints");
    }

    let rules = SelectionRules {
        max_head_dim: args.max_head_dim,
        // Without measured throughput the shallowest fitting shape wins.
        prefer: if measured {
            Preference::Throughput
        } else {
            Preference::Shallow
        },
        drop_oom: true,
    };

    let mut report = String::new();
    let n_oom = rows.iter().filter(|r| r.memory.oom).count();
    writeln!(
        report,
        "{} candidates, {} estimated above {} GB",
        rows.len(),
        n_oom,
        memory.capacity_gb
    )?;
    let mut status = Status::Ok;
    match select_final(&rows, &rules) {
        Ok(best) => {
            let s = &best.shape;
            let q = quantization_flags(s.d_model, WARP_SIZE, A100_SM_COUNT);
            writeln!(
                report,
                "selected {}: {:.1}B params, {} layers, hidden {}, {} heads of {}, dp {} tp {} pp {} mbs {}, {:.1} GB/GPU",
                best.label,
                best.size_bparams(),
                s.n_layer,
                s.d_model,
                s.n_heads,
                s.head_dim,
                best.plan.dp,
                best.plan.tp,
                best.plan.pp,
                best.plan.micro_batch,
                best.memory.total
            )?;
            writeln!(
                report,
                "hidden size {} warp-aligned: {}, SM-aligned: {}",
                s.d_model, q.warp_aligned, q.sm_aligned
            )?;
            if let Some(t) = best.tflops {
                writeln!(report, "measured throughput {t:.1} TFLOP/s per GPU")?;
            }
        }
        Err(e) => {
            writeln!(report, "{e}")?;
            status = Status::ChecksFailed;
        }
    }
    if measured {
        let c = consistency_check(&rows);
        writeln!(
            report,
            "consistency: {} rows in {} groups, max step x TFLOPs spread {:.2}%, max estimate gap {:.2}%",
            c.rows_checked,
            c.groups_checked,
            c.max_product_spread * 100.0,
            c.max_tflops_gap * 100.0
        )?;
        for v in &c.violations {
            writeln!(report, "  violation: {v}")?;
        }
        if !c.passed() {
            status = Status::ChecksFailed;
        }
    }

    let csv = candidates_to_csv(&rows);
    match &args.output {
        Some(path) => {
            emit(Some(path), &csv)?;
            print!("{report}");
        }
        None => {
            print!("{csv}");
            eprint!("{report}");
        }
    }
    Ok(status)
}
