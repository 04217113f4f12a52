//! Published tables bundled as CSV text so tests and the CLI need no data
//! directory.

/// Per-language power-law fits and corpus proportions (26 languages).
pub const LANGUAGE_FITS: &str = include_str!("../fixtures/language_fits.csv");

/// Long-format zero-shot results: `model,task,metric,value`.
pub const ZERO_SHOT_RESULTS: &str = include_str!("../fixtures/zero_shot_results.csv");

/// The three short-listed 176B-scale configurations.
pub const FINAL_CONFIGS: &str = include_str!("../fixtures/final_configs.csv");

/// Benchmarked candidate configurations with memory and throughput.
pub const THROUGHPUT_BENCHMARKS: &str = include_str!("../fixtures/throughput_benchmarks.csv");

/// Average accuracy per pretraining dataset and token budget.
pub const DATASET_AVERAGES: &str = include_str!("../fixtures/dataset_averages.csv");

/// Ablation averages. Reference only.
pub const ABLATION_AVERAGES: &str = include_str!("../fixtures/ablation_averages.csv");

/// Synthetic English training curves around `1.08·C^-0.046`.
pub const ENGLISH_FRONTIER_POINTS: &str = include_str!("../fixtures/english_frontier_points.csv");

/// Synthetic training curves for each of the 26 languages, one envelope per
/// published per-language fit.
pub const MULTILINGUAL_POINTS: &str = include_str!("../fixtures/multilingual_points.csv");
