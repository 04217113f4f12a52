//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits nonzero if any criterion fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use archplan_core::budget::{
    self, achieved_tflops, grant_gpu_hours, hardware_flop_per_iteration, optimal_allocation,
    pf_days_to_flop, BENCHMARK_BATCH_SEQUENCES,
};
use archplan_core::eval::{self, average_accuracy, comparison_table, DEFAULT_METRICS};
use archplan_core::fixtures;
use archplan_core::kernel::{
    self, extrapolation_curve, run_checks, swiglu_hidden_size, EvalOutcome, InductionTask,
    KernelConfig, Positional, TinyLm, TrainConfig,
};
use archplan_core::sampler::{allocate_tokens, sampling_probs};
use archplan_core::scaling::{
    exponent_dispersion, fit_per_language, fit_power_law, read_fit_table, read_points_csv,
};
use archplan_core::search::{
    param_count, quantization_flags, read_benchmark_csv, select_final, BenchmarkRecord,
    A100_SM_COUNT, WARP_SIZE,
};
use archplan_core::{
    stats, AllocationCalibration, ClusterGrant, Error, Grouping, MemoryModel, ScalingPoint,
    SelectionRules,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(actual: f64, expected: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((actual - expected).abs() <= tol, || {
        format!("{what}: got {actual}, expected {expected} ± {tol}")
    })
}

fn rel_within(actual: f64, expected: f64, rel: f64, what: &str) -> Result<(), String> {
    ensure((actual - expected).abs() <= rel * expected.abs(), || {
        format!(
            "{what}: got {actual}, expected {expected} within {:.2}% (off by {:.3}%)",
            rel * 100.0,
            100.0 * (actual - expected).abs() / expected.abs()
        )
    })
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn benchmark(text: &str) -> Result<Vec<BenchmarkRecord>, String> {
    read_benchmark_csv(text.as_bytes()).map_err(e)
}

fn budget_pipeline() -> Outcome {
    let grant = ClusterGrant {
        nodes: 52,
        gpus_per_node: 8,
        duration_hours: 18.0 * budget::HOURS_PER_WEEK,
        spare_nodes: 4,
        flops_per_gpu: 100e12,
    };
    let hours = grant_gpu_hours(&grant).map_err(e)?;
    ensure(hours == 1_161_216.0, || {
        format!("GPU-hours {hours}, expected 1161216")
    })?;
    let pf = budget::pf_days(hours, grant.flops_per_gpu).map_err(e)?;
    // 1,161,216 h * 3600 s * 1e14 FLOP/s / 8.64e19 FLOP per PF-day.
    within(pf, 4_838.4, 0.5, "PF-days")?;
    Ok(format!("{hours} GPU-hours, {pf:.1} PF-days"))
}

fn allocation() -> Outcome {
    let compute = pf_days_to_flop(4_500.0);
    let plan = optimal_allocation(compute, &AllocationCalibration::default()).map_err(e)?;
    rel_within(plan.n_params, 392e9, 1e-9, "N")?;
    // 3.888e23 / (6 * 392e9) = 165.3e9; the published figure is rounded.
    rel_within(plan.n_tokens, 165e9, 0.005, "D")?;
    let err = (6.0 * plan.n_params * plan.n_tokens - compute).abs() / compute;
    ensure(err <= 1e-9, || format!("6ND vs C relative error {err:e}"))?;
    Ok(format!(
        "N = {:.1}B, D = {:.1}B, 6ND error {err:.1e}",
        plan.n_params / 1e9,
        plan.n_tokens / 1e9
    ))
}

fn throughput() -> Outcome {
    let rows = benchmark(fixtures::FINAL_CONFIGS)?;
    let expected = [
        (70, 14_336, 105.0, 150.0),
        (82, 13_312, 104.0, 152.0),
        (82, 13_312, 109.0, 146.0),
    ];
    let mut detail = Vec::new();
    for (layers, hidden, step, target) in expected {
        let rec = rows
            .iter()
            .find(|r| r.layers == layers && r.hidden == hidden && r.step_time_s == Some(step))
            .ok_or_else(|| format!("no row ({layers}, {hidden}) @ {step} s"))?;
        let flop = hardware_flop_per_iteration(&rec.shape(), BENCHMARK_BATCH_SEQUENCES);
        let tflops = achieved_tflops(flop, step, rec.dp * rec.tp * rec.pp).map_err(e)?;
        within(
            tflops,
            target,
            3.0,
            &format!("({layers}, {hidden}) @ {step} s TFLOPs"),
        )?;
        detail.push(format!("{tflops:.1}"));
    }
    Ok(format!("TFLOPs {}", detail.join(" / ")))
}

fn parameter_counts() -> Outcome {
    let mut worst5: f64 = 0.0;
    for rec in benchmark(fixtures::FINAL_CONFIGS)? {
        let n = param_count(&rec.shape()) as f64 / 1e9;
        rel_within(
            n,
            rec.size_bparams,
            0.01,
            &format!("config {} size", rec.config),
        )?;
        worst5 = worst5.max((n - rec.size_bparams).abs() / rec.size_bparams);
    }
    let mut worst8: f64 = 0.0;
    for rec in benchmark(fixtures::THROUGHPUT_BENCHMARKS)? {
        let n = param_count(&rec.shape()) as f64 / 1e9;
        rel_within(
            n,
            rec.size_bparams,
            0.015,
            &format!("row {} size", rec.config),
        )?;
        worst8 = worst8.max((n - rec.size_bparams).abs() / rec.size_bparams);
    }
    Ok(format!(
        "worst deviation {:.2}% (final configs), {:.2}% (throughput table)",
        worst5 * 100.0,
        worst8 * 100.0
    ))
}

fn scaling_fits() -> Outcome {
    let (c_m, alpha) = (1.08, 0.051);
    let exact: Vec<ScalingPoint> = [1.0, 10.0, 100.0, 1_000.0, 10_000.0]
        .iter()
        .map(|&c: &f64| ScalingPoint::new(c, c_m * c.powf(-alpha)))
        .collect();
    let fit = fit_power_law(&exact).map_err(e)?;
    rel_within(fit.c_m, c_m, 1e-9, "exact c_m")?;
    rel_within(fit.alpha_c, alpha, 1e-9, "exact alpha_c")?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0f64, 0.01).map_err(e)?;
    let noisy: Vec<ScalingPoint> = (0..50)
        .map(|i| {
            let c = 10f64.powf(-2.0 + 5.0 * i as f64 / 49.0);
            ScalingPoint::new(c, c_m * c.powf(-alpha) * noise.sample(&mut rng).exp())
        })
        .collect();
    let noisy_fit = fit_power_law(&noisy).map_err(e)?;
    within(noisy_fit.alpha_c, alpha, 0.005, "noisy alpha_c")?;

    let points = read_points_csv(fixtures::MULTILINGUAL_POINTS.as_bytes()).map_err(e)?;
    let table = read_fit_table(fixtures::LANGUAGE_FITS.as_bytes()).map_err(e)?;
    let proportions: HashMap<String, f64> = table
        .iter()
        .filter_map(|r| r.proportion.map(|p| (r.language.clone(), p)))
        .collect();
    let fits = fit_per_language(&points, Default::default(), &proportions);
    let ok = fits.iter().filter(|f| f.result.is_ok()).count();
    ensure(fits.len() == 26 && ok == 26, || {
        format!(
            "{ok} of {} language fits succeeded, expected 26",
            fits.len()
        )
    })?;
    Ok(format!(
        "noisy alpha_c {:.4} (true {alpha}), {ok} language rows",
        noisy_fit.alpha_c
    ))
}

fn exponent_spread() -> Outcome {
    let rows = read_fit_table(fixtures::LANGUAGE_FITS.as_bytes()).map_err(e)?;
    let d = exponent_dispersion(&rows, 1.0).map_err(e)?;
    ensure(d.std_dev <= 0.004, || {
        format!("stddev {:.5} over {} rows", d.std_dev, d.n_rows)
    })?;
    Ok(format!(
        "stddev {:.5} over {} rows (mean {:.4})",
        d.std_dev, d.n_rows, d.mean
    ))
}

fn swiglu_sizing() -> Outcome {
    let h = swiglu_hidden_size(2_048, 16).map_err(e)?;
    ensure(h == 5_456, || format!("hidden size {h}, expected 5456"))?;
    let flags = quantization_flags(h, WARP_SIZE, A100_SM_COUNT);
    ensure(!flags.warp_aligned && !flags.sm_aligned, || {
        format!("flags {flags:?}")
    })?;
    let mut worst: f64 = 0.0;
    for d in [1_024u64, 2_048, 14_336] {
        let h = swiglu_hidden_size(d, 16).map_err(e)? as f64;
        let d = d as f64;
        // Three d x h matrices against two d x 4d matrices.
        let parity = (3.0 * d * h) / (8.0 * d * d) - 1.0;
        ensure(parity.abs() < 0.005, || {
            format!("d = {d}: parity off by {:.3}%", parity * 100.0)
        })?;
        worst = worst.max(parity.abs());
    }
    Ok(format!(
        "5456, unaligned, worst parity {:.3}%",
        worst * 100.0
    ))
}

fn kernel_invariants() -> Outcome {
    let outcomes = run_checks(0);
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    Ok(format!("{} checks passed", outcomes.len()))
}

fn extrapolation() -> Outcome {
    let task = InductionTask {
        vocab: 32,
        period: 8,
    };
    let config = KernelConfig::tiny(32, 64);
    let run =
        extrapolation_curve(&config, &TrainConfig::default(), &[64, 128], &task, 32).map_err(e)?;
    let l64 = run.loss_at(64).ok_or("no loss at length 64")?;
    let l128 = run.loss_at(128).ok_or("no loss at length 128")?;
    ensure(l64.is_finite() && l128.is_finite(), || {
        format!("non-finite loss {l64} / {l128}")
    })?;
    let ratio = l128 / l64;
    ensure(ratio <= 1.5, || format!("loss@128 / loss@64 = {ratio:.3}"))?;

    let learned = config.with_positional(Positional::Learned);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = TinyLm::new(learned.clone(), &mut rng).map_err(e)?;
    kernel::evaluate(&model, &task, 64, 2, 0).map_err(e)?;
    match kernel::evaluate(&model, &task, 128, 2, 0) {
        Err(Error::ExtrapolationUnsupported { .. }) => {}
        other => return Err(format!("learned positional at 128 gave {other:?}")),
    }
    let learned_row = extrapolation_curve(
        &learned,
        &TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        },
        &[128],
        &task,
        1,
    )
    .map_err(e)?;
    ensure(
        learned_row.rows[0].outcome == EvalOutcome::Unsupported,
        || "learned curve did not mark length 128 unsupported".into(),
    )?;
    Ok(format!(
        "ALiBi loss {l64:.3} -> {l128:.3} (ratio {ratio:.2}); learned unsupported"
    ))
}

fn memory_ordering() -> Outcome {
    let model = MemoryModel::default();
    let rows = benchmark(fixtures::THROUGHPUT_BENCHMARKS)?;
    let (mut est, mut reported) = (Vec::new(), Vec::new());
    let mut n_oom = 0;
    for rec in &rows {
        let cand = rec.to_candidate(&model).map_err(e)?;
        if rec.reported_oom() {
            n_oom += 1;
            ensure(cand.memory.total > model.capacity_gb, || {
                format!(
                    "OOM row {} estimated at {:.1} GB",
                    rec.config, cand.memory.total
                )
            })?;
            continue;
        }
        let reference = 16.0 * rec.size_bparams * 1e9 / (rec.tp * rec.pp) as f64 / 1e9;
        rel_within(
            cand.memory.weights_and_states,
            reference,
            0.15,
            &format!("row {} weights", rec.config),
        )?;
        est.push(cand.memory.total);
        reported.push(rec.reported_memory_gb().ok_or("missing memory")?);
    }
    let rho = stats::spearman(&est, &reported).ok_or("Spearman undefined")?;
    ensure(rho >= 0.8, || format!("Spearman {rho:.3}"))?;
    Ok(format!(
        "{n_oom} OOM rows above capacity, Spearman {rho:.3}"
    ))
}

fn selection() -> Outcome {
    let model = MemoryModel::default();
    let rows = benchmark(fixtures::FINAL_CONFIGS)?
        .iter()
        .map(|r| r.to_candidate(&model))
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let chosen = select_final(&rows, &SelectionRules::default()).map_err(e)?;
    ensure(chosen.label == "(3)", || {
        format!("selected {}", chosen.label)
    })?;
    Ok(format!("selected {}", chosen.label))
}

fn eval_aggregation() -> Outcome {
    let records =
        eval::read_eval_csv(fixtures::ZERO_SHOT_RESULTS.as_bytes(), "zero-shot results").map_err(e)?;
    let mut detail = Vec::new();
    for (model, target, tol) in [
        ("babbage", 45.31, 0.05),
        ("curie", 49.3, 0.1),
        ("gpt-neo-1.3b", 42.9, 0.1),
    ] {
        let row = average_accuracy(&records, model, DEFAULT_METRICS).map_err(e)?;
        within(row.average_acc, target, tol, model)?;
        detail.push(format!("{model} {:.2}", row.average_acc));
    }
    let entries = eval::read_comparison_csv(fixtures::DATASET_AVERAGES.as_bytes()).map_err(e)?;
    let table = comparison_table(&entries, Grouping::default());
    let bold: Vec<f64> = table
        .iter()
        .filter(|r| r.best_in_group && r.entry.tokens_b == 112.0)
        .map(|r| r.entry.avg_acc)
        .collect();
    ensure(bold == [42.79], || format!("bold in 112B group: {bold:?}"))?;
    Ok(format!("{}; 42.79 bold", detail.join(", ")))
}

fn sampler() -> Outcome {
    let sizes = vec![("a".to_string(), 0.9), ("b".to_string(), 0.1)];
    let p = sampling_probs(&sizes, 0.3).map_err(e)?;
    within(p[0].sampled_prob, 0.659, 1e-3, "p(a)")?;
    within(p[1].sampled_prob, 0.341, 1e-3, "p(b)")?;

    let uneven = vec![
        ("en".to_string(), 30.0),
        ("zh".to_string(), 16.0),
        ("fr".to_string(), 12.9),
        ("yo".to_string(), 0.0006),
    ];
    let total: f64 = uneven.iter().map(|(_, s)| s).sum();
    let identity = sampling_probs(&uneven, 1.0).map_err(e)?;
    for (share, (_, s)) in identity.iter().zip(&uneven) {
        ensure(share.sampled_prob == s / total, || {
            format!("alpha=1 gave {} for {}", share.sampled_prob, share.language)
        })?;
    }
    let uniform = sampling_probs(&uneven, 0.0).map_err(e)?;
    ensure(uniform.iter().all(|s| s.sampled_prob == 0.25), || {
        "alpha=0 not exactly uniform".into()
    })?;

    let probs: Vec<(String, f64)> = sampling_probs(&uneven, 0.3)
        .map_err(e)?
        .into_iter()
        .map(|s| (s.language, s.sampled_prob))
        .collect();
    for total_tokens in [0u64, 1, 7, 999_983, 341_000_000_000] {
        let alloc = allocate_tokens(total_tokens, &probs).map_err(e)?;
        let sum: u64 = alloc.iter().map(|(_, t)| t).sum();
        ensure(sum == total_tokens, || {
            format!("allocated {sum} of {total_tokens}")
        })?;
    }
    Ok(format!(
        "({:.4}, {:.4}), limits exact, totals conserved",
        p[0].sampled_prob, p[1].sampled_prob
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "budget pipeline",
            budget: Duration::from_secs(1),
            run: budget_pipeline,
        },
        Criterion {
            id: 2,
            name: "allocation",
            budget: Duration::from_secs(1),
            run: allocation,
        },
        Criterion {
            id: 3,
            name: "throughput consistency",
            budget: Duration::from_secs(1),
            run: throughput,
        },
        Criterion {
            id: 4,
            name: "parameter counts",
            budget: Duration::from_secs(1),
            run: parameter_counts,
        },
        Criterion {
            id: 5,
            name: "scaling-law fits",
            budget: Duration::from_secs(10),
            run: scaling_fits,
        },
        Criterion {
            id: 6,
            name: "exponent dispersion",
            budget: Duration::from_secs(1),
            run: exponent_spread,
        },
        Criterion {
            id: 7,
            name: "SwiGLU sizing",
            budget: Duration::from_secs(1),
            run: swiglu_sizing,
        },
        Criterion {
            id: 8,
            name: "kernel invariants",
            budget: Duration::from_secs(60),
            run: kernel_invariants,
        },
        Criterion {
            id: 9,
            name: "length extrapolation",
            budget: Duration::from_secs(600),
            run: extrapolation,
        },
        Criterion {
            id: 10,
            name: "memory and OOM ordering",
            budget: Duration::from_secs(1),
            run: memory_ordering,
        },
        Criterion {
            id: 11,
            name: "selection rule",
            budget: Duration::from_secs(1),
            run: selection,
        },
        Criterion {
            id: 12,
            name: "eval aggregation",
            budget: Duration::from_secs(1),
            run: eval_aggregation,
        },
        Criterion {
            id: 13,
            name: "sampler",
            budget: Duration::from_secs(1),
            run: sampler,
        },
    ];

    let mut failures = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= c.budget {
                Ok(detail)
            } else {
                Err(format!(
                    "{detail}; took {elapsed:.2?}, limit {:?}",
                    c.budget
                ))
            }
        });
        match result {
            Ok(detail) => println!("PASS [{:>2}] {}: {detail} ({elapsed:.2?})", c.id, c.name),
            Err(why) => {
                failures += 1;
                println!("FAIL [{:>2}] {}: {why} ({elapsed:.2?})", c.id, c.name);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
