//! Planning and analysis toolkit for large-language-model pretraining runs:
//! compute budgets, scaling-law fits, architecture and parallelism search,
//! multilingual sampling, a small double-precision transformer kernel and
//! evaluation reporting.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod kernel;
pub mod plot;
pub mod sampler;
pub mod scaling;
pub mod search;
pub mod shape;
pub mod stats;

pub use budget::{
    AllocationCalibration, BudgetReport, ClusterGrant, FlopBreakdown, ScheduleConfig, TrainingPlan,
    PF_DAY_FLOP,
};
pub use error::{Error, Result};
pub use eval::{ComparisonEntry, ComparisonRow, EvalRecord, Grouping, Metric, ReportRow};
pub use plot::PlotPoint;
pub use sampler::LanguageShare;
pub use scaling::{FitMode, LanguageFitRow, PowerLawFit, ScalingPoint};
pub use search::{
    CandidateRow, ConsistencyReport, MemoryEstimate, MemoryModel, ParallelismPlan,
    SearchConstraints, SelectionRules,
};
pub use shape::{Activation, ModelShape};
