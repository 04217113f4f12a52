use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use archplan_core::fixtures;
use archplan_core::plot::load_plot_csv;

fn archplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_archplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn plan_reports_grant_hours_and_pf_days() {
    let out = archplan(&[
        "plan", "--nodes", "52", "--gpus", "8", "--weeks", "18", "--spare", "4", "--tflops", "100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("1,161,216"), "{text}");
    assert!(text.contains("4,838 PF-days"), "{text}");
}

#[test]
fn plan_csv_has_one_row_per_quantity() {
    let out = archplan(&[
        "plan",
        "--nodes",
        "52",
        "--gpus",
        "8",
        "--weeks",
        "18",
        "--spare",
        "4",
        "--tflops",
        "100",
        "--format",
        "csv",
        "--tokens-b",
        "350",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("quantity,value,unit"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let value = |q: &str| -> f64 { rows.iter().find(|r| r[0] == q).unwrap()[1].parse().unwrap() };
    assert_eq!(value("gpu_hours"), 1_161_216.0);
    assert!((value("compute_raw") - 4_838.4).abs() < 1e-6);
    assert_eq!(value("compute_budget"), 4_838.0);
    // 6 N D = C at 350B tokens.
    let n = value("params_at_350B_tokens");
    assert!((6.0 * n * 350e9 / 8.64e19 - 4_838.0).abs() < 1e-6);
}

#[test]
fn plan_reads_schedule_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(
        &good,
        "lr_max = 6e-5\nlr_min = 6e-6\ntotal_tokens = 350e9\n",
    )
    .unwrap();
    let out = archplan(&[
        "plan",
        "--nodes",
        "4",
        "--gpus",
        "8",
        "--weeks",
        "1",
        "--tflops",
        "100",
        "--format",
        "csv",
        "--schedule",
        path_str(&good),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("lr_at_350000000000_tokens,0.000006,1/step"),
        "{}",
        stdout(&out)
    );

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "lr_peak = 1e-4\n").unwrap();
    let out = archplan(&[
        "plan",
        "--nodes",
        "4",
        "--gpus",
        "8",
        "--weeks",
        "1",
        "--tflops",
        "100",
        "--schedule",
        path_str(&bad),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lr_peak"), "{}", stderr(&out));
}

#[test]
fn plan_rejects_spares_covering_the_cluster() {
    let out = archplan(&[
        "plan", "--nodes", "4", "--gpus", "8", "--weeks", "1", "--spare", "4", "--tflops", "100",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("spare_nodes"));
}

#[test]
fn report_averages_babbage_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("results.csv");
    fs::write(&input, fixtures::ZERO_SHOT_RESULTS).unwrap();
    let out = archplan(&["report", "--input", path_str(&input), "--model", "babbage"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("45.31"), "{text}");
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn report_f1_mode_counts_more_tasks() {
    let out = archplan(&[
        "report",
        "--model",
        "babbage",
        "--metrics",
        "acc,f1",
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        stdout(&out).lines().nth(1).unwrap().split(',').nth(2),
        Some("26")
    );
}

#[test]
fn report_parse_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(
        &input,
        "model,task,metric,value\nm,t,acc,0.5\nm,u,acc,zero\n",
    )
    .unwrap();
    let out = archplan(&["report", "--input", path_str(&input)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(":3:"), "{}", stderr(&out));
}

#[test]
fn report_unknown_model_is_an_error() {
    let out = archplan(&["report", "--model", "no-such-model"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn comparison_table_bolds_best_in_group() {
    let out = archplan(&["report", "--comparison", "bundled"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("**42.79**"), "{text}");
    assert!(text.contains("<u>**49.28**</u>"), "{text}");
    assert!(!text.contains("**42.77**"));
}

#[test]
fn kernel_check_passes() {
    let out = archplan(&["kernel", "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(!stderr(&out).contains("FAIL"));
}

#[test]
fn kernel_extrapolate_marks_learned_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("plot.csv");
    let out = archplan(&[
        "kernel",
        "--extrapolate",
        "--steps",
        "5",
        "--train-len",
        "16",
        "--eval-lens",
        "16,32",
        "--positional",
        "alibi,learned",
        "--eval-seqs",
        "2",
        "--plot",
        path_str(&plot),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "positional,eval_len,loss");
    assert_eq!(lines.len(), 5);
    assert!(lines.contains(&"learned,32,unsupported"), "{text}");
    let points = load_plot_csv(&plot).unwrap();
    assert_eq!(points.len(), 3);
}

#[test]
fn sample_writes_probabilities_and_conserves_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("weights.csv");
    fs::write(&input, "language,weight\nen,0.9\nfr,0.1\n").unwrap();
    let out = archplan(&[
        "sample",
        "--input",
        path_str(&input),
        "--alpha",
        "0.3",
        "--total-tokens",
        "1001",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("language,natural_prop,sampled_prob,tokens")
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    let p: f64 = rows[0][2].parse().unwrap();
    assert!((p - 0.659).abs() < 1e-3);
    let total: u64 = rows.iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 1001);
}

#[test]
fn sample_rejects_negative_weights() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("weights.csv");
    fs::write(&input, "language,weight\nen,-1\n").unwrap();
    let out = archplan(&["sample", "--input", path_str(&input)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_emits_every_language_and_a_frontier_plot() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("fits.csv");
    let plot = dir.path().join("frontier.csv");
    let out = archplan(&[
        "fit",
        "--fixture",
        "multilingual",
        "--output",
        path_str(&table),
        "--frontier",
        path_str(&plot),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("language,proportion,alpha_c,c_m,rss,n_points")
    );
    assert_eq!(text.lines().count(), 27);
    let points = load_plot_csv(&plot).unwrap();
    let series: std::collections::BTreeSet<_> = points.iter().map(|p| p.series.clone()).collect();
    assert_eq!(series.len(), 26);
}

#[test]
fn fit_reports_degenerate_languages_but_keeps_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("points.csv");
    fs::write(
        &input,
        "language,compute_pf_days,loss\nen,1,1.0\nen,10,0.9\nen,100,0.81\nxx,5,2.0\n",
    )
    .unwrap();
    let out = archplan(&["fit", "--input", path_str(&input)]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("en,")), "{text}");
    assert!(!text.contains("xx,"));
    assert!(stderr(&out).contains("xx"));
}

#[test]
fn search_on_final_configs_selects_the_third() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("candidates.csv");
    let out = archplan(&["search", "--fixture", "final", "--output", path_str(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("selected (3)"), "{}", stdout(&out));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("size_bparams,layers,hidden,heads,head_dim,dp,tp,pp,mbs,mem_gb,oom")
    );
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn search_enumerates_within_constraints() {
    let out = archplan(&[
        "search",
        "--params-min-b",
        "170",
        "--params-max-b",
        "180",
        "--layers-min",
        "70",
        "--layers-max",
        "72",
        "--head-dims",
        "128",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let size: f64 = cells[0].parse().unwrap();
        assert!((170.0..=180.0).contains(&size), "{line}");
        assert_eq!(cells[4], "128");
    }
    assert!(stderr(&out).contains("selected"));
}

#[test]
fn search_with_no_survivors_fails() {
    let out = archplan(&["search", "--fixture", "final", "--capacity-gb", "10"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(archplan(&["bogus"]).status.code(), Some(2));
    assert_eq!(
        archplan(&["plan", "--nodes", "1", "--frobnicate"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(archplan(&["kernel"]).status.code(), Some(2));
    assert_eq!(archplan(&["fit"]).status.code(), Some(2));
    assert_eq!(archplan(&[]).status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_one() {
    let out = archplan(&["sample", "--input", "/nonexistent/weights.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/weights.csv"));
}

#[test]
fn help_documents_every_subcommand() {
    let out = archplan(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for cmd in ["plan", "fit", "search", "sample", "kernel", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
