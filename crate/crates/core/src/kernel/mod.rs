//! Double-precision decoder kernel: the four positional schemes, GELU and
//! SwiGLU feed-forward blocks, optional embedding norm, a reverse-mode tape
//! for gradient checks and a small trainer for length-extrapolation runs.

pub mod check;
pub mod model;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod train;

pub use check::{grad_check, grad_check_fn, run_checks, CheckOutcome, GradCheckReport, KernelOp};
pub use model::{
    attention_forward, attention_forward_with_probs, embedding_forward, AttentionParams,
    KernelConfig, LmParams, Positional, Precision, TinyLm,
};
pub use ops::{
    alibi_bias, alibi_slopes, gelu, rotary_apply, swiglu_ffn, swiglu_hidden_size, swish,
};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{
    evaluate, extrapolation_csv, extrapolation_curve, train, EvalOutcome, ExtrapolationRow,
    ExtrapolationRun, InductionTask, TrainConfig, TrainReport,
};
