//! Compute budgets: from a cluster grant to PF-days, FLOP accounting,
//! compute-optimal (N, D) allocation and the LR / batch-size schedules.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shape::ModelShape;

/// FLOP in one PF-day: 1e15 FLOP/s sustained for 86,400 s.
pub const PF_DAY_FLOP: f64 = 8.64e19;
pub const HOURS_PER_WEEK: f64 = 168.0;

/// Sequences per iteration used when reproducing the published throughput
/// rows (2,048 x 2,048 tokens).
pub const BENCHMARK_BATCH_SEQUENCES: u64 = 2_048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterGrant {
    pub nodes: u64,
    pub gpus_per_node: u64,
    /// Wall-clock duration of the allocation in hours.
    pub duration_hours: f64,
    pub spare_nodes: u64,
    /// Assumed sustained FLOP/s per GPU.
    pub flops_per_gpu: f64,
}

impl ClusterGrant {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.gpus_per_node == 0 {
            return Err(Error::InvalidGrant(
                "nodes and gpus_per_node must be positive".into(),
            ));
        }
        if self.spare_nodes >= self.nodes {
            return Err(Error::InvalidGrant(format!(
                "spare_nodes ({}) must be below nodes ({})",
                self.spare_nodes, self.nodes
            )));
        }
        if !(self.duration_hours > 0.0) || !(self.flops_per_gpu > 0.0) {
            return Err(Error::InvalidGrant(
                "duration and flops_per_gpu must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// GPU-hours available once spare nodes are set aside.
pub fn grant_gpu_hours(grant: &ClusterGrant) -> Result<f64> {
    grant.validate()?;
    let active = (grant.nodes - grant.spare_nodes) * grant.gpus_per_node;
    Ok(active as f64 * grant.duration_hours)
}

pub fn pf_days(gpu_hours: f64, flops_per_gpu: f64) -> Result<f64> {
    if !(gpu_hours > 0.0) || !(flops_per_gpu > 0.0) {
        return Err(Error::Domain(format!(
            "pf_days needs positive inputs, got gpu_hours={gpu_hours}, flops_per_gpu={flops_per_gpu}"
        )));
    }
    Ok(gpu_hours * 3600.0 * flops_per_gpu / PF_DAY_FLOP)
}

/// Keeps `keep_fraction` of a budget and rounds down to a multiple of
/// `granularity` PF-days.
pub fn apply_margin(pf: f64, keep_fraction: f64, granularity: f64) -> Result<f64> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    if !(granularity > 0.0) {
        return Err(Error::Domain(format!(
            "granularity must be positive, got {granularity}"
        )));
    }
    Ok((pf * keep_fraction / granularity).floor() * granularity)
}

pub fn pf_days_to_flop(pf: f64) -> f64 {
    pf * PF_DAY_FLOP
}

pub fn flop_to_pf_days(flop: f64) -> f64 {
    flop / PF_DAY_FLOP
}

/// Model FLOP `C = 6ND`.
pub fn model_flop(n_params: f64, n_tokens: f64) -> f64 {
    6.0 * n_params * n_tokens
}

/// Tokens affordable for a model of `n_params` under `compute` FLOP.
pub fn tokens_for_budget(compute: f64, n_params: f64) -> f64 {
    compute / (6.0 * n_params)
}

/// Parameters affordable when training on `n_tokens` under `compute` FLOP.
pub fn params_for_budget(compute: f64, n_tokens: f64) -> f64 {
    compute / (6.0 * n_tokens)
}

/// (N, D, C) triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub n_params: f64,
    pub n_tokens: f64,
    pub compute: f64,
    pub compute_pf_days: f64,
}

impl TrainingPlan {
    pub fn from_params_tokens(n_params: f64, n_tokens: f64) -> Self {
        let compute = model_flop(n_params, n_tokens);
        Self {
            n_params,
            n_tokens,
            compute,
            compute_pf_days: flop_to_pf_days(compute),
        }
    }

    /// Relative deviation of `6ND` from the recorded compute.
    pub fn accounting_error(&self) -> f64 {
        (model_flop(self.n_params, self.n_tokens) - self.compute).abs() / self.compute
    }
}

/// Power-law anchor for compute-optimal model size: `N = n_ref·(C/C_ref)^exponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationCalibration {
    /// Reference compute in FLOP.
    pub compute_ref: f64,
    pub n_ref: f64,
    pub exponent: f64,
}

impl Default for AllocationCalibration {
    /// 4,500 PF-days maps to a 392B-parameter model; exponent 0.73.
    fn default() -> Self {
        Self {
            compute_ref: pf_days_to_flop(4_500.0),
            n_ref: 392e9,
            exponent: 0.73,
        }
    }
}

pub fn optimal_allocation(compute: f64, calib: &AllocationCalibration) -> Result<TrainingPlan> {
    if !(compute > 0.0) {
        return Err(Error::Domain(format!(
            "compute must be positive, got {compute}"
        )));
    }
    if !(calib.compute_ref > 0.0 && calib.n_ref > 0.0) {
        return Err(Error::Domain("calibration anchor must be positive".into()));
    }
    if !(calib.exponent > 0.0 && calib.exponent < 1.0) {
        return Err(Error::Domain(format!(
            "allocation exponent must be in (0, 1), got {}",
            calib.exponent
        )));
    }
    let n_params = calib.n_ref * (compute / calib.compute_ref).powf(calib.exponent);
    let n_tokens = tokens_for_budget(compute, n_params);
    Ok(TrainingPlan {
        n_params,
        n_tokens,
        compute,
        compute_pf_days: flop_to_pf_days(compute),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    /// Forward-pass FLOP per token, `2·(12·l·d² + l·n_ctx·d)`.
    pub model_flop_per_token: f64,
    /// Hardware FLOP per iteration, when a batch was supplied.
    pub hardware_flop_per_iteration: Option<f64>,
    /// Share of the forward cost spent on the context-dependent attention term.
    pub attention_share: f64,
}

pub fn forward_flop_per_token(shape: &ModelShape) -> FlopBreakdown {
    let l = shape.n_layer as f64;
    let d = shape.d_model as f64;
    let ctx = shape.n_ctx as f64;
    let dense = 12.0 * l * d * d;
    let attention = l * ctx * d;
    let total = dense + attention;
    FlopBreakdown {
        model_flop_per_token: 2.0 * total,
        hardware_flop_per_iteration: None,
        attention_share: if total > 0.0 { attention / total } else { 0.0 },
    }
}

pub fn flop_breakdown(shape: &ModelShape, batch_sequences: u64) -> FlopBreakdown {
    FlopBreakdown {
        hardware_flop_per_iteration: Some(hardware_flop_per_iteration(shape, batch_sequences)),
        ..forward_flop_per_token(shape)
    }
}

/// Hardware FLOP per iteration with full activation recomputation:
/// `96·B·s·l·h²·(1 + s/(6h) + V/(16·l·h))`.
pub fn hardware_flop_per_iteration(shape: &ModelShape, batch_sequences: u64) -> f64 {
    let b = batch_sequences as f64;
    let s = shape.n_ctx as f64;
    let l = shape.n_layer as f64;
    let h = shape.d_model as f64;
    let v = shape.vocab as f64;
    if b == 0.0 {
        return 0.0;
    }
    96.0 * b * s * l * h * h * (1.0 + s / (6.0 * h) + v / (16.0 * l * h))
}

/// Ratio of hardware FLOP to `6·N·tokens` with `N ≈ 12·l·h² + V·h`.
pub fn recompute_overhead_ratio(shape: &ModelShape, batch_sequences: u64) -> f64 {
    let l = shape.n_layer as f64;
    let h = shape.d_model as f64;
    let approx_params = 12.0 * l * h * h + shape.vocab as f64 * h;
    let tokens = (batch_sequences * shape.n_ctx) as f64;
    hardware_flop_per_iteration(shape, batch_sequences) / model_flop(approx_params, tokens)
}

/// Achieved TFLOP/s per GPU.
pub fn achieved_tflops(flop_per_iteration: f64, step_time_s: f64, n_gpus: u64) -> Result<f64> {
    if !(step_time_s > 0.0) || n_gpus == 0 {
        return Err(Error::Domain(format!(
            "step time and GPU count must be positive, got {step_time_s} s on {n_gpus} GPUs"
        )));
    }
    Ok(flop_per_iteration / (step_time_s * n_gpus as f64) / 1e12)
}

/// Learning-rate and batch-size schedule plus the recorded optimizer
/// constants. Token counts are in tokens, not steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_tokens: f64,
    /// End of the cosine decay.
    pub total_tokens: f64,
    pub batch_target: u64,
    pub batch_ramp_tokens: f64,
    pub batch_start: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lr_max: 2e-4,
            lr_min: 1e-5,
            warmup_tokens: 375e6,
            total_tokens: 112e9,
            batch_target: 1_048_576,
            batch_ramp_tokens: 4e9,
            batch_start: 65_536,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }
}

impl ScheduleConfig {
    /// Parses `key = value` lines (TOML). Missing keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schedule config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 < lr_min <= lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            )));
        }
        if !(self.warmup_tokens < self.total_tokens) {
            return Err(Error::Config(format!(
                "warmup_tokens ({}) must be below total_tokens ({})",
                self.warmup_tokens, self.total_tokens
            )));
        }
        if self.batch_start > self.batch_target {
            return Err(Error::Config(format!(
                "batch_start ({}) exceeds batch_target ({})",
                self.batch_start, self.batch_target
            )));
        }
        Ok(())
    }

    /// Linear warm-up to `lr_max`, cosine decay to `lr_min` at
    /// `total_tokens`, constant afterwards.
    pub fn lr_at(&self, tokens_seen: f64) -> f64 {
        let t = tokens_seen.max(0.0);
        if t < self.warmup_tokens {
            return self.lr_max * t / self.warmup_tokens;
        }
        if t >= self.total_tokens {
            return self.lr_min;
        }
        let progress = (t - self.warmup_tokens) / (self.total_tokens - self.warmup_tokens);
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * progress).cos())
    }

    /// Batch size in tokens, ramped linearly from `batch_start`.
    pub fn batch_at(&self, tokens_seen: f64) -> u64 {
        let t = tokens_seen.max(0.0);
        if t >= self.batch_ramp_tokens {
            return self.batch_target;
        }
        let span = (self.batch_target - self.batch_start) as f64;
        self.batch_start + (span * t / self.batch_ramp_tokens).floor() as u64
    }
}

/// Every quantity the `plan` command reports, derived from a grant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetReport {
    pub gpu_hours: f64,
    pub raw_pf_days: f64,
    pub budget_pf_days: f64,
    pub optimum: TrainingPlan,
    /// `(tokens, params)` pairs from inverting `6ND` at the budget.
    pub params_at_tokens: Vec<(f64, f64)>,
}

impl BudgetReport {
    pub fn build(
        grant: &ClusterGrant,
        keep_fraction: f64,
        granularity: f64,
        calib: &AllocationCalibration,
        token_targets: &[f64],
    ) -> Result<Self> {
        let gpu_hours = grant_gpu_hours(grant)?;
        let raw_pf_days = pf_days(gpu_hours, grant.flops_per_gpu)?;
        let budget_pf_days = apply_margin(raw_pf_days, keep_fraction, granularity)?;
        let compute = pf_days_to_flop(budget_pf_days);
        let optimum = optimal_allocation(compute, calib)?;
        let params_at_tokens = token_targets
            .iter()
            .map(|&d| (d, params_for_budget(compute, d)))
            .collect();
        Ok(Self {
            gpu_hours,
            raw_pf_days,
            budget_pf_days,
            optimum,
            params_at_tokens,
        })
    }

    /// `(quantity, value, unit)` rows in display order.
    pub fn rows(&self) -> Vec<(String, f64, &'static str)> {
        let mut rows = vec![
            ("gpu_hours".to_string(), self.gpu_hours, "h"),
            ("compute_raw".to_string(), self.raw_pf_days, "PF-days"),
            ("compute_budget".to_string(), self.budget_pf_days, "PF-days"),
            (
                "optimal_params".to_string(),
                self.optimum.n_params,
                "params",
            ),
            (
                "optimal_tokens".to_string(),
                self.optimum.n_tokens,
                "tokens",
            ),
        ];
        for (d, n) in &self.params_at_tokens {
            rows.push((format!("params_at_{:.0}B_tokens", d / 1e9), *n, "params"));
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn grant(nodes: u64, gpus: u64, hours: f64, spare: u64) -> ClusterGrant {
        ClusterGrant {
            nodes,
            gpus_per_node: gpus,
            duration_hours: hours,
            spare_nodes: spare,
            flops_per_gpu: 1e14,
        }
    }

    #[test]
    fn gpu_hours_examples() {
        let h = grant_gpu_hours(&grant(52, 8, 18.0 * HOURS_PER_WEEK, 4)).unwrap();
        assert_eq!(h, 1_161_216.0);
        assert_eq!(grant_gpu_hours(&grant(1, 1, 24.0, 0)).unwrap(), 24.0);
        assert_eq!(grant_gpu_hours(&grant(10, 4, 100.0, 5)).unwrap(), 2_000.0);
    }

    #[test]
    fn too_many_spares_is_rejected() {
        let err = grant_gpu_hours(&grant(4, 8, 10.0, 4)).unwrap_err();
        assert!(matches!(err, Error::InvalidGrant(_)));
        assert!(grant_gpu_hours(&grant(4, 8, 10.0, 9)).is_err());
    }

    #[test]
    fn pf_days_examples() {
        assert!((pf_days(1_161_216.0, 1e14).unwrap() - 4_838.4).abs() < 1e-9);
        assert!((pf_days(24.0, 1e15).unwrap() - 1.0).abs() < 1e-12);
        assert!((pf_days(11.2, 1.5e14).unwrap() - 0.07).abs() < 1e-12);
        assert!(matches!(pf_days(0.0, 1e14), Err(Error::Domain(_))));
        assert!(pf_days(10.0, -1.0).is_err());
    }

    #[test]
    fn margin_floors_to_granularity() {
        // 4838.4 * 0.93 = 4499.71, which floors to 4400; 4500 needs a keep
        // fraction of at least 4500 / 4838.4.
        assert_eq!(apply_margin(4_838.4, 0.93, 100.0).unwrap(), 4_400.0);
        assert_eq!(apply_margin(4_838.4, 0.931, 100.0).unwrap(), 4_500.0);
        assert_eq!(apply_margin(1_000.0, 1.0, 1.0).unwrap(), 1_000.0);
        assert_eq!(apply_margin(4_838.4, 0.90, 100.0).unwrap(), 4_300.0);
        assert!(apply_margin(100.0, 0.0, 1.0).is_err());
        assert!(apply_margin(100.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn six_nd_examples() {
        let c = model_flop(392e9, 165e9);
        assert!(rel(c, 3.8808e23) < 1e-12);
        assert!((flop_to_pf_days(c) - 4_491.67).abs() < 0.01);
        assert_eq!(model_flop(1.0, 1.0), 6.0);
        assert!(rel(model_flop(176e9, 341e9), 3.601e23) < 1e-3);
    }

    #[test]
    fn budget_inversion() {
        let c = pf_days_to_flop(4_500.0);
        assert!(rel(params_for_budget(c, 400e9), 162e9) < 1e-12);
        assert!(rel(params_for_budget(c, 300e9), 216e9) < 1e-12);
        assert_eq!(tokens_for_budget(6.0, 1.0), 1.0);
    }

    #[test]
    fn allocation_examples() {
        let calib = AllocationCalibration::default();
        let plan = optimal_allocation(pf_days_to_flop(4_500.0), &calib).unwrap();
        assert!(rel(plan.n_params, 392e9) < 1e-12);
        assert!((plan.n_tokens / 1e9 - 165.3).abs() < 0.05);
        assert!(plan.accounting_error() < 1e-9);

        let plan = optimal_allocation(calib.compute_ref, &calib).unwrap();
        assert!(rel(plan.n_params, calib.n_ref) < 1e-12);
        assert!(rel(plan.n_tokens, calib.compute_ref / (6.0 * calib.n_ref)) < 1e-12);

        // N = 392e9 * 0.5^0.73, D = C / 6N.
        let plan = optimal_allocation(pf_days_to_flop(2_250.0), &calib).unwrap();
        assert!((plan.n_params / 1e9 - 236.35).abs() < 0.05);
        assert!((plan.n_tokens / 1e9 - 137.08).abs() < 0.05);
        assert!(plan.accounting_error() < 1e-9);
    }

    #[test]
    fn allocation_rejects_bad_exponent() {
        let calib = AllocationCalibration {
            exponent: 1.0,
            ..Default::default()
        };
        assert!(optimal_allocation(1e23, &calib).is_err());
    }

    #[test]
    fn forward_flop_examples() {
        let big = ModelShape::gpt(70, 14_336, 112);
        let fb = forward_flop_per_token(&big);
        assert!((fb.attention_share - 0.011765).abs() < 1e-5);

        let no_ctx = ModelShape::gpt(4, 512, 8).with_ctx(0);
        assert_eq!(forward_flop_per_token(&no_ctx).attention_share, 0.0);

        let small = ModelShape::gpt(24, 2_048, 16);
        let expected = 2.0 * (12.0 * 24.0 * 2048f64.powi(2) + 24.0 * 2048.0 * 2048.0);
        let fb = forward_flop_per_token(&small);
        assert_eq!(fb.model_flop_per_token, expected);
        assert!(rel(fb.model_flop_per_token, 2.617e9) < 1e-3);
    }

    #[test]
    fn hardware_flop_examples() {
        let s3 = ModelShape::gpt(70, 14_336, 112);
        let f3 = hardware_flop_per_iteration(&s3, BENCHMARK_BATCH_SEQUENCES);
        assert!(rel(f3, 6.02e18) < 1e-3);
        assert!((achieved_tflops(f3, 105.0, 384).unwrap() - 149.3).abs() < 0.1);

        let s1 = ModelShape::gpt(82, 13_312, 64);
        let f1 = hardware_flop_per_iteration(&s1, BENCHMARK_BATCH_SEQUENCES);
        assert!(rel(f1, 6.085e18) < 1e-3);
        assert!((achieved_tflops(f1, 104.0, 384).unwrap() - 152.4).abs() < 0.1);
        assert!((achieved_tflops(f1, 109.0, 384).unwrap() - 145.4).abs() < 0.1);

        assert_eq!(hardware_flop_per_iteration(&s3, 0), 0.0);
        let fb = flop_breakdown(&s3, 2_048);
        assert_eq!(fb.hardware_flop_per_iteration, Some(f3));
    }

    #[test]
    fn achieved_tflops_edges() {
        assert_eq!(achieved_tflops(3e12, 1.0, 1).unwrap(), 3.0);
        assert!(achieved_tflops(1.0, 0.0, 1).is_err());
        assert!(achieved_tflops(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn recompute_ratio_in_band() {
        for shape in [
            ModelShape::gpt(70, 14_336, 112),
            ModelShape::gpt(82, 13_312, 128),
            ModelShape::gpt(24, 2_048, 16),
        ] {
            let r = recompute_overhead_ratio(&shape, 2_048);
            assert!((1.2..=1.5).contains(&r), "{r}");
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = ScheduleConfig::default();
        assert!((cfg.lr_at(375e6) - 2e-4).abs() < 1e-18);
        assert_eq!(cfg.lr_at(0.0), 0.0);
        assert!((cfg.lr_at(cfg.total_tokens) - 1e-5).abs() < 1e-18);
        assert_eq!(cfg.lr_at(cfg.total_tokens * 2.0), 1e-5);

        assert_eq!(cfg.batch_at(4e9), 1_048_576);
        assert_eq!(cfg.batch_at(5e9), 1_048_576);
        assert_eq!(cfg.batch_at(0.0), cfg.batch_start);
        assert_eq!(cfg.batch_at(2e9), 557_056);
    }

    #[test]
    fn schedule_config_parsing() {
        let cfg = ScheduleConfig::from_toml_str(
            "lr_max = 3e-4\nwarmup_tokens = 1e6\ntotal_tokens = 1e9\nbatch_start = 1024\n",
        )
        .unwrap();
        assert_eq!(cfg.lr_max, 3e-4);
        assert_eq!(cfg.batch_start, 1024);
        assert_eq!(cfg.adam_beta2, 0.999);

        let round = ScheduleConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(round, cfg);

        assert!(ScheduleConfig::from_toml_str("lr_min = 1.0").is_err());
        assert!(ScheduleConfig::from_toml_str("warmup_tokens = 2e11").is_err());
        assert!(ScheduleConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn budget_report_chain() {
        let g = grant(52, 8, 18.0 * HOURS_PER_WEEK, 4);
        let r =
            BudgetReport::build(&g, 0.931, 100.0, &Default::default(), &[300e9, 400e9]).unwrap();
        assert_eq!(r.gpu_hours, 1_161_216.0);
        assert_eq!(r.budget_pf_days, 4_500.0);
        assert!(rel(r.optimum.n_params, 392e9) < 1e-12);
        assert_eq!(r.rows().len(), 7);
    }
}
