//! Adam training of the tiny decoder on a synthetic induction task and the
//! train-short / evaluate-long extrapolation curve.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::model::{AttentionConsts, KernelConfig, LmParams, Positional, TinyLm};
use crate::kernel::tape::Tape;
use crate::kernel::tensor::Tensor;
use crate::plot::PlotPoint;

/// Sequences made of one block of `period` distinct random tokens repeated
/// to the requested length. After the first block every token is
/// predictable by finding the previous occurrence of the current token and
/// copying its successor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductionTask {
    pub vocab: usize,
    pub period: usize,
}

impl InductionTask {
    pub fn validate(&self) -> Result<()> {
        if self.period < 2 || self.period > self.vocab {
            return Err(Error::Config(format!(
                "period must be in [2, vocab], got {} with vocab {}",
                self.period, self.vocab
            )));
        }
        Ok(())
    }

    /// `len + 1` tokens: inputs are `[..len]`, targets `[1..]`.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..self.vocab).collect();
        pool.shuffle(rng);
        let block = &pool[..self.period];
        (0..=len).map(|i| block[i % self.period]).collect()
    }

    /// Loss floor of a perfect copier over `len` positions: the first block
    /// is guessed uniformly among unseen tokens, the rest is free.
    pub fn ideal_loss(&self, len: usize) -> f64 {
        let guessed = (self.period - 1).min(len);
        let total: f64 = (0..guessed)
            .map(|i| ((self.vocab - 1 - i) as f64).ln())
            .sum();
        total / len as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1200,
            batch: 8,
            seq_len: 64,
            lr: 3e-3,
            warmup_steps: 50,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the last `n` step losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

struct Adam {
    m: LmParams<Tensor>,
    v: LmParams<Tensor>,
    t: i32,
}

impl Adam {
    fn new(params: &LmParams<Tensor>) -> Self {
        Self {
            m: params.map(|t| Tensor::zeros(t.rows, t.cols)),
            v: params.map(|t| Tensor::zeros(t.rows, t.cols)),
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut LmParams<Tensor>,
        grads: &[Tensor],
        lr: f64,
        cfg: &TrainConfig,
    ) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let norm = grads
            .iter()
            .map(|g| g.data.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        };
        for (((p, m), v), g) in params
            .refs_mut()
            .into_iter()
            .zip(self.m.refs_mut())
            .zip(self.v.refs_mut())
            .zip(grads)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i] * clip;
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Mean loss and parameter gradients over a batch of sequences.
pub fn batch_loss_and_grads(
    model: &TinyLm,
    batch: &[Vec<usize>],
    consts: &AttentionConsts,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = model.leaves(&mut tape);
    let mut total = None;
    for seq in batch {
        let n = seq.len() - 1;
        let l = model.loss_on_tape(&mut tape, &p, &seq[..n], &seq[1..], consts)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let total = total.ok_or_else(|| Error::Input("empty batch".into()))?;
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    let loss = tape.value(mean).item();
    let mut grads = tape.backward(mean);
    let out = p
        .refs()
        .into_iter()
        .zip(model.params.refs())
        .map(|(v, t)| grads.take_or_zeros(*v, t.shape()))
        .collect();
    Ok((loss, out))
}

pub fn train(model: &mut TinyLm, task: &InductionTask, cfg: &TrainConfig) -> Result<TrainReport> {
    task.validate()?;
    model.config.check_length(cfg.seq_len)?;
    let consts = AttentionConsts::new(&model.config, cfg.seq_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<_> = (0..cfg.batch)
            .map(|_| task.sample(cfg.seq_len, &mut rng))
            .collect();
        let (loss, grads) = batch_loss_and_grads(model, &batch, &consts)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let warm = ((step + 1) as f64 / cfg.warmup_steps.max(1) as f64).min(1.0);
        adam.step(&mut model.params, &grads, cfg.lr * warm, cfg);
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}

/// Mean loss over `n_seqs` fresh sequences of length `len`.
pub fn evaluate(
    model: &TinyLm,
    task: &InductionTask,
    len: usize,
    n_seqs: usize,
    seed: u64,
) -> Result<f64> {
    model.config.check_length(len)?;
    let consts = AttentionConsts::new(&model.config, len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_seqs {
        let seq = task.sample(len, &mut rng);
        let mut tape = Tape::new();
        let p = model.leaves(&mut tape);
        let l = model.loss_on_tape(&mut tape, &p, &seq[..len], &seq[1..], &consts)?;
        total += tape.value(l).item();
    }
    Ok(total / n_seqs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalOutcome {
    Loss(f64),
    Unsupported,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationRow {
    pub positional: Positional,
    pub eval_len: usize,
    pub outcome: EvalOutcome,
}

#[derive(Clone, Debug)]
pub struct ExtrapolationRun {
    pub rows: Vec<ExtrapolationRow>,
    pub train_report: TrainReport,
}

impl ExtrapolationRun {
    pub fn loss_at(&self, eval_len: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.eval_len == eval_len)
            .and_then(|r| match r.outcome {
                EvalOutcome::Loss(l) => Some(l),
                EvalOutcome::Unsupported => None,
            })
    }
}

/// Trains at `train.seq_len` and evaluates at every length in `eval_lens`.
/// Lengths the positional scheme cannot handle are recorded as unsupported.
/// `config.n_ctx_train` is set to the training length.
pub fn extrapolation_curve(
    config: &KernelConfig,
    train_cfg: &TrainConfig,
    eval_lens: &[usize],
    task: &InductionTask,
    eval_seqs: usize,
) -> Result<ExtrapolationRun> {
    let mut cfg = config.clone();
    cfg.n_ctx_train = train_cfg.seq_len;
    cfg.vocab = task.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed);
    let mut model = TinyLm::new(cfg, &mut rng)?;
    let train_report = train(&mut model, task, train_cfg)?;
    let eval_seed = train_cfg.seed.wrapping_add(1);
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut rows = Vec::with_capacity(eval_lens.len());
    for &len in eval_lens {
        let outcome = match model.config.check_length(len) {
            Err(Error::ExtrapolationUnsupported { .. }) => EvalOutcome::Unsupported,
            Err(e) => return Err(e),
            Ok(()) => {
                let loss = match cache.get(&len) {
                    Some(l) => *l,
                    None => evaluate(&model, task, len, eval_seqs, eval_seed)?,
                };
                cache.insert(len, loss);
                EvalOutcome::Loss(loss)
            }
        };
        rows.push(ExtrapolationRow {
            positional: model.config.positional,
            eval_len: len,
            outcome,
        });
    }
    Ok(ExtrapolationRun { rows, train_report })
}

pub const EXTRAPOLATION_CSV_HEADER: &str = "positional,eval_len,loss";

pub fn extrapolation_csv(rows: &[ExtrapolationRow]) -> String {
    let mut out = String::from(EXTRAPOLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let loss = match r.outcome {
            EvalOutcome::Loss(l) => format!("{l:.16e}"),
            EvalOutcome::Unsupported => "unsupported".to_string(),
        };
        out.push_str(&format!("{},{},{loss}\n", r.positional, r.eval_len));
    }
    out
}

/// Plot series, one per positional scheme; unsupported lengths are omitted.
pub fn extrapolation_plot_points(rows: &[ExtrapolationRow]) -> Vec<PlotPoint> {
    rows.iter()
        .filter_map(|r| match r.outcome {
            EvalOutcome::Loss(l) => {
                Some(PlotPoint::new(r.positional.as_str(), r.eval_len as f64, l))
            }
            EvalOutcome::Unsupported => None,
        })
        .collect()
}
