//! Model-shape search under hardware constraints: exact parameter counts,
//! depth guideline, GPU-friendly dimensions, per-GPU memory estimates under
//! 3D parallelism, and the rules used to pick the final configuration.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::budget::{achieved_tflops, hardware_flop_per_iteration, BENCHMARK_BATCH_SEQUENCES};
use crate::error::{Error, Result};
use crate::shape::{Activation, ModelShape, DEFAULT_SEQ_LEN, DEFAULT_VOCAB};

/// Exact trainable parameter count.
///
/// Attention carries biases on all four projections; each block has two
/// layer norms and the stack ends with a final norm. The gated (SwiGLU) FFN
/// uses three matrices.
pub fn param_count(shape: &ModelShape) -> u64 {
    let h = shape.d_model;
    let ff = shape.d_ff;
    let embeddings = shape.vocab * h * if shape.tied_embeddings { 1 } else { 2 };
    let attention = 4 * h * h + 4 * h;
    let ffn = if shape.activation.is_gated() {
        3 * h * ff + ff
    } else {
        2 * h * ff + h + ff
    };
    let norms = 4 * h;
    embeddings + shape.n_layer * (attention + ffn + norms) + 2 * h
}

/// Logarithmic depth guideline anchored at a reference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRule {
    /// Layers gained per natural-log unit of parameters.
    pub slope: f64,
    pub anchor_params: f64,
    pub anchor_depth: f64,
}

impl Default for DepthRule {
    fn default() -> Self {
        Self {
            slope: 5.037,
            anchor_params: 175e9,
            anchor_depth: 80.0,
        }
    }
}

pub fn depth_recommendation(n_params: f64, rule: &DepthRule) -> Result<u64> {
    if !(n_params > 0.0) {
        return Err(Error::Domain(format!(
            "n_params must be positive, got {n_params}"
        )));
    }
    let depth = rule.anchor_depth + rule.slope * (n_params / rule.anchor_params).ln();
    Ok(depth.round().max(1.0) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct QuantizationFlags {
    pub warp_aligned: bool,
    pub sm_aligned: bool,
}

pub const WARP_SIZE: u64 = 32;
/// Streaming multiprocessors on an A100.
pub const A100_SM_COUNT: u64 = 108;

pub fn quantization_flags(dim: u64, warp_size: u64, n_sm: u64) -> QuantizationFlags {
    QuantizationFlags {
        warp_aligned: warp_size > 0 && dim % warp_size == 0,
        sm_aligned: n_sm > 0 && dim % n_sm == 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConstraints {
    pub params_min: f64,
    pub params_max: f64,
    pub layers_min: u64,
    pub layers_max: u64,
    pub head_dims: Vec<u64>,
    /// `d_model` must be a multiple of this.
    pub hidden_multiple: u64,
    pub vocab: u64,
    pub n_ctx: u64,
}

impl Default for SearchConstraints {
    /// 160-200B parameters, 70-82 layers, head dims 96..=224 in steps of 8.
    fn default() -> Self {
        Self {
            params_min: 160e9,
            params_max: 200e9,
            layers_min: 70,
            layers_max: 82,
            head_dims: (96..=224).step_by(8).collect(),
            hidden_multiple: 128,
            vocab: DEFAULT_VOCAB,
            n_ctx: DEFAULT_SEQ_LEN,
        }
    }
}

/// All GELU shapes satisfying the constraints, ordered by layers, then
/// hidden size, then head count.
pub fn enumerate_candidates(c: &SearchConstraints) -> Result<Vec<ModelShape>> {
    if c.layers_min > c.layers_max || c.params_min > c.params_max {
        return Err(Error::Config("empty layer or parameter range".into()));
    }
    if c.hidden_multiple == 0 || c.head_dims.is_empty() || c.head_dims.contains(&0) {
        return Err(Error::Config(
            "hidden_multiple and head dims must be positive".into(),
        ));
    }
    let mut head_dims = c.head_dims.clone();
    head_dims.sort_unstable();
    head_dims.dedup();

    let mut out = Vec::new();
    for n_layer in c.layers_min.max(1)..=c.layers_max {
        let mut hidden = c.hidden_multiple;
        loop {
            let probe = ModelShape::gpt(n_layer, hidden, 1)
                .with_vocab(c.vocab)
                .with_ctx(c.n_ctx);
            let n = param_count(&probe) as f64;
            if n > c.params_max {
                break;
            }
            if n >= c.params_min {
                // Descending head dim gives ascending head count.
                for &hd in head_dims.iter().rev() {
                    if hidden % hd == 0 {
                        let mut shape = probe.clone();
                        shape.n_heads = hidden / hd;
                        shape.head_dim = hd;
                        out.push(shape);
                    }
                }
            }
            hidden += c.hidden_multiple;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelismPlan {
    pub dp: u64,
    pub tp: u64,
    pub pp: u64,
    /// Sequences per micro-batch.
    pub micro_batch: u64,
    pub n_gpus: u64,
}

impl ParallelismPlan {
    pub fn new(dp: u64, tp: u64, pp: u64, micro_batch: u64) -> Result<Self> {
        let plan = Self {
            dp,
            tp,
            pp,
            micro_batch,
            n_gpus: dp * tp * pp,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Fills data parallelism from the GPU count.
    pub fn for_gpus(n_gpus: u64, tp: u64, pp: u64, micro_batch: u64) -> Result<Self> {
        if tp == 0 || pp == 0 || n_gpus % (tp * pp) != 0 {
            return Err(Error::Config(format!(
                "{n_gpus} GPUs cannot be split into tp={tp} x pp={pp}"
            )));
        }
        Self::new(n_gpus / (tp * pp), tp, pp, micro_batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dp == 0 || self.tp == 0 || self.pp == 0 || self.micro_batch == 0 {
            return Err(Error::Config(
                "parallel degrees and micro-batch must be >= 1".into(),
            ));
        }
        if self.dp * self.tp * self.pp != self.n_gpus {
            return Err(Error::Config(format!(
                "dp*tp*pp = {} != n_gpus = {}",
                self.dp * self.tp * self.pp,
                self.n_gpus
            )));
        }
        Ok(())
    }
}

/// How many micro-batches of activations the worst pipeline stage holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InflightFactor {
    /// One per pipeline stage (1F1B warm-up on the first stage).
    PipelineDepth,
    Fixed(f64),
}

/// Knobs of the per-GPU memory estimate. Sizes in bytes, totals in GB (1e9).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    /// Weights, gradients and Adam states per parameter.
    pub bytes_per_param: f64,
    /// Bytes per retained activation element.
    pub activation_bytes: f64,
    pub inflight: InflightFactor,
    /// Runtime context, communication buffers and fragmentation.
    pub overhead_gb: f64,
    pub capacity_gb: f64,
    /// Count one extra embedding-sized pipeline slot when `pp > 1`.
    pub embedding_slot: bool,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self {
            bytes_per_param: 16.0,
            activation_bytes: 2.0,
            inflight: InflightFactor::PipelineDepth,
            overhead_gb: 8.0,
            capacity_gb: 80.0,
            embedding_slot: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub weights_and_states: f64,
    pub activations: f64,
    pub overhead: f64,
    pub total: f64,
    pub oom: bool,
}

pub fn memory_per_gpu(
    shape: &ModelShape,
    plan: &ParallelismPlan,
    model: &MemoryModel,
) -> MemoryEstimate {
    let tp = plan.tp as f64;
    let pp = plan.pp as f64;
    let mut stored_params = param_count(shape) as f64;
    if model.embedding_slot && plan.pp > 1 {
        stored_params += (shape.vocab * shape.d_model) as f64;
    }
    let weights_and_states = model.bytes_per_param * stored_params / (tp * pp) / 1e9;

    let inflight = match model.inflight {
        InflightFactor::PipelineDepth => pp,
        InflightFactor::Fixed(f) => f,
    };
    let layers_per_stage = shape.n_layer as f64 / pp;
    let activations = model.activation_bytes
        * plan.micro_batch as f64
        * shape.n_ctx as f64
        * shape.d_model as f64
        * layers_per_stage
        * inflight
        / tp
        / 1e9;

    let overhead = model.overhead_gb;
    let total = weights_and_states + activations + overhead;
    MemoryEstimate {
        weights_and_states,
        activations,
        overhead,
        total,
        oom: total > model.capacity_gb,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRow {
    pub label: String,
    pub shape: ModelShape,
    pub plan: ParallelismPlan,
    pub memory: MemoryEstimate,
    pub step_time: Option<f64>,
    pub tflops: Option<f64>,
}

impl CandidateRow {
    pub fn estimate(
        label: impl Into<String>,
        shape: ModelShape,
        plan: ParallelismPlan,
        model: &MemoryModel,
    ) -> Self {
        let memory = memory_per_gpu(&shape, &plan, model);
        Self {
            label: label.into(),
            shape,
            plan,
            memory,
            step_time: None,
            tflops: None,
        }
    }

    pub fn size_bparams(&self) -> f64 {
        param_count(&self.shape) as f64 / 1e9
    }

    /// TFLOP/s per GPU implied by the hardware-FLOP estimate and the step time.
    pub fn estimated_tflops(&self) -> Option<f64> {
        let flop = hardware_flop_per_iteration(&self.shape, BENCHMARK_BATCH_SEQUENCES);
        achieved_tflops(flop, self.step_time?, self.plan.n_gpus).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Preference {
    /// Highest throughput, ties broken by fewer layers.
    #[default]
    Throughput,
    /// Fewest layers, ties broken by throughput.
    Shallow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRules {
    pub max_head_dim: u64,
    pub prefer: Preference,
    pub drop_oom: bool,
}

impl Default for SelectionRules {
    fn default() -> Self {
        Self {
            max_head_dim: 200,
            prefer: Preference::Throughput,
            drop_oom: true,
        }
    }
}

pub fn select_final<'a>(
    rows: &'a [CandidateRow],
    rules: &SelectionRules,
) -> Result<&'a CandidateRow> {
    let survivors = rows
        .iter()
        .filter(|r| r.shape.head_dim <= rules.max_head_dim)
        .filter(|r| !(rules.drop_oom && r.memory.oom));
    let tflops = |r: &CandidateRow| r.tflops.unwrap_or(f64::NEG_INFINITY);
    let best = match rules.prefer {
        Preference::Throughput => survivors.min_by(|a, b| {
            tflops(b)
                .total_cmp(&tflops(a))
                .then(a.shape.n_layer.cmp(&b.shape.n_layer))
        }),
        Preference::Shallow => survivors.min_by(|a, b| {
            a.shape
                .n_layer
                .cmp(&b.shape.n_layer)
                .then(tflops(b).total_cmp(&tflops(a)))
        }),
    };
    best.ok_or_else(|| {
        Error::NoCandidate(format!(
            "all {} rows rejected (max head dim {}, drop OOM {})",
            rows.len(),
            rules.max_head_dim,
            rules.drop_oom
        ))
    })
}

pub const STEP_PRODUCT_TOLERANCE: f64 = 0.02;
pub const THROUGHPUT_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub rows_checked: usize,
    pub groups_checked: usize,
    /// Largest relative spread of `step_time·tflops` within a size group.
    pub max_product_spread: f64,
    /// Largest relative gap between measured and estimated TFLOP/s.
    pub max_tflops_gap: f64,
    pub violations: Vec<String>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Cross-checks measured throughput rows. Violations are collected rather
/// than returned as errors.
pub fn consistency_check(rows: &[CandidateRow]) -> ConsistencyReport {
    let mut report = ConsistencyReport::default();
    // Rows sharing (layers, hidden, ffn, vocab), each with step_time * tflops.
    type Groups<'a> = BTreeMap<(u64, u64, u64, u64), Vec<(&'a CandidateRow, f64)>>;
    let mut groups: Groups = BTreeMap::new();

    for row in rows {
        let (Some(step), Some(tflops)) = (row.step_time, row.tflops) else {
            continue;
        };
        report.rows_checked += 1;
        if let Some(est) = row.estimated_tflops() {
            let gap = (tflops - est).abs() / est;
            report.max_tflops_gap = report.max_tflops_gap.max(gap);
            if gap > THROUGHPUT_TOLERANCE {
                report.violations.push(format!(
                    "{}: measured {tflops:.1} TFLOPs vs estimated {est:.1} ({:.1}% apart)",
                    row.label,
                    gap * 100.0
                ));
            }
        }
        let s = &row.shape;
        groups
            .entry((s.n_layer, s.d_model, s.d_ff, s.vocab))
            .or_default()
            .push((row, step * tflops));
    }

    for members in groups.values() {
        report.groups_checked += 1;
        let lo = members.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        let hi = members
            .iter()
            .map(|m| m.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let spread = (hi - lo) / lo;
        report.max_product_spread = report.max_product_spread.max(spread);
        if spread > STEP_PRODUCT_TOLERANCE {
            let labels: Vec<_> = members.iter().map(|m| m.0.label.as_str()).collect();
            report.violations.push(format!(
                "step_time x tflops spread {:.2}% across [{}]",
                spread * 100.0,
                labels.join(", ")
            ));
        }
    }
    report
}

/// One ingested benchmark row (final-configuration or throughput table).
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct BenchmarkRecord {
    pub config: String,
    pub size_bparams: f64,
    pub layers: u64,
    pub hidden: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub dp: u64,
    pub tp: u64,
    pub pp: u64,
    pub mbs: u64,
    /// Reported memory, `OOM` when the run did not fit.
    pub mem_gb: String,
    pub step_time_s: Option<f64>,
    pub tflops: Option<f64>,
}

impl BenchmarkRecord {
    pub fn reported_oom(&self) -> bool {
        self.mem_gb.trim().eq_ignore_ascii_case("oom")
    }

    pub fn reported_memory_gb(&self) -> Option<f64> {
        self.mem_gb.trim().parse().ok()
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            n_layer: self.layers,
            d_model: self.hidden,
            n_heads: self.heads,
            head_dim: self.head_dim,
            d_ff: 4 * self.hidden,
            n_ctx: DEFAULT_SEQ_LEN,
            vocab: DEFAULT_VOCAB,
            tied_embeddings: true,
            activation: Activation::Gelu,
        }
    }

    pub fn to_candidate(&self, model: &MemoryModel) -> Result<CandidateRow> {
        let shape = self.shape();
        shape.validate()?;
        let plan = ParallelismPlan::new(self.dp, self.tp, self.pp, self.mbs)?;
        let mut row = CandidateRow::estimate(self.config.clone(), shape, plan, model);
        row.step_time = self.step_time_s;
        row.tflops = self.tflops;
        Ok(row)
    }
}

pub fn read_benchmark_csv(reader: impl Read) -> Result<Vec<BenchmarkRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub const CANDIDATE_CSV_HEADER: &str =
    "size_bparams,layers,hidden,heads,head_dim,dp,tp,pp,mbs,mem_gb,oom";

/// Candidate table with the throughput-table column layout.
pub fn candidates_to_csv(rows: &[CandidateRow]) -> String {
    let mut out = String::from(CANDIDATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.2},{},{},{},{},{},{},{},{},{:.2},{}\n",
            r.size_bparams(),
            r.shape.n_layer,
            r.shape.d_model,
            r.shape.n_heads,
            r.shape.head_dim,
            r.plan.dp,
            r.plan.tp,
            r.plan.pp,
            r.plan.micro_batch,
            r.memory.total,
            r.memory.oom
        ));
    }
    out
}
