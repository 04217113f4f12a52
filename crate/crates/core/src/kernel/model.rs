//! Configuration, weights and forward passes of the desk-scale decoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ops::{alibi_bias, alibi_slopes, causal_mask};
use crate::kernel::tape::{Tape, Var};
use crate::kernel::tensor::Tensor;
use crate::shape::Activation;

pub const DEFAULT_ROTARY_BASE: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    None,
    Learned,
    Rotary,
    Alibi,
}

impl Positional {
    pub const ALL: [Positional; 4] = [
        Positional::None,
        Positional::Learned,
        Positional::Rotary,
        Positional::Alibi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Positional::None => "none",
            Positional::Learned => "learned",
            Positional::Rotary => "rotary",
            Positional::Alibi => "alibi",
        }
    }

    /// Whether sequences longer than the training context are accepted.
    pub fn extrapolates(self) -> bool {
        self != Positional::Learned
    }
}

impl fmt::Display for Positional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Positional {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Positional::None),
            "learned" => Ok(Positional::Learned),
            "rotary" => Ok(Positional::Rotary),
            "alibi" => Ok(Positional::Alibi),
            other => Err(format!(
                "unknown positional `{other}` (none, learned, rotary, alibi)"
            )),
        }
    }
}

/// Floating-point width used by the kernel. Only double precision is
/// implemented; gradient-check tolerances assume it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_ctx_train: usize,
    pub vocab: usize,
    pub positional: Positional,
    pub activation: Activation,
    pub embed_norm: bool,
    pub rotary_base: f64,
    pub precision: Precision,
}

impl KernelConfig {
    /// Two-layer GELU model with ALiBi: d_model 32, 4 heads, d_ff 64.
    pub fn tiny(vocab: usize, n_ctx_train: usize) -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            head_dim: 8,
            d_ff: 64,
            n_layers: 2,
            n_ctx_train,
            vocab,
            positional: Positional::Alibi,
            activation: Activation::Gelu,
            embed_norm: false,
            rotary_base: DEFAULT_ROTARY_BASE,
            precision: Precision::F64,
        }
    }

    pub fn with_positional(mut self, positional: Positional) -> Self {
        self.positional = positional;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.head_dim == 0 || self.n_heads * self.head_dim != self.d_model {
            return fail(format!(
                "n_heads·head_dim must equal d_model ({}·{} != {})",
                self.n_heads, self.head_dim, self.d_model
            ));
        }
        if self.d_ff == 0 || self.vocab == 0 || self.n_ctx_train == 0 {
            return fail("d_ff, vocab and n_ctx_train must be positive".into());
        }
        if self.positional == Positional::Rotary && self.head_dim % 2 != 0 {
            return fail(format!(
                "rotary needs an even head_dim, got {}",
                self.head_dim
            ));
        }
        if !(self.rotary_base > 1.0 && self.rotary_base.is_finite()) {
            return fail(format!("rotary_base must be > 1, got {}", self.rotary_base));
        }
        Ok(())
    }

    pub fn check_length(&self, seq_len: usize) -> Result<()> {
        if !self.positional.extrapolates() && seq_len > self.n_ctx_train {
            return Err(Error::ExtrapolationUnsupported {
                seq_len,
                n_ctx: self.n_ctx_train,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AttentionParams<T> {
    /// `d × 3d`, columns ordered q | k | v, heads contiguous inside each.
    pub w_qkv: T,
    pub b_qkv: T,
    pub w_o: T,
    pub b_o: T,
}

#[derive(Clone, Debug)]
pub enum FfnParams<T> {
    Gelu { w1: T, b1: T, w2: T, b2: T },
    SwiGlu { w: T, v: T, w2: T },
}

#[derive(Clone, Debug)]
pub struct BlockParams<T> {
    pub ln1: (T, T),
    pub attn: AttentionParams<T>,
    pub ln2: (T, T),
    pub ffn: FfnParams<T>,
}

/// All trainable weights. The output head is tied to `embed`.
#[derive(Clone, Debug)]
pub struct LmParams<T> {
    pub embed: T,
    pub pos: Option<T>,
    pub embed_ln: Option<(T, T)>,
    pub blocks: Vec<BlockParams<T>>,
    pub ln_f: (T, T),
}

impl<T> AttentionParams<T> {
    fn refs(&self) -> Vec<&T> {
        vec![&self.w_qkv, &self.b_qkv, &self.w_o, &self.b_o]
    }

    fn refs_mut(&mut self) -> Vec<&mut T> {
        vec![
            &mut self.w_qkv,
            &mut self.b_qkv,
            &mut self.w_o,
            &mut self.b_o,
        ]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w_qkv: f(&self.w_qkv),
            b_qkv: f(&self.b_qkv),
            w_o: f(&self.w_o),
            b_o: f(&self.b_o),
        }
    }
}

impl<T> FfnParams<T> {
    fn refs(&self) -> Vec<&T> {
        match self {
            FfnParams::Gelu { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
            FfnParams::SwiGlu { w, v, w2 } => vec![w, v, w2],
        }
    }

    fn refs_mut(&mut self) -> Vec<&mut T> {
        match self {
            FfnParams::Gelu { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
            FfnParams::SwiGlu { w, v, w2 } => vec![w, v, w2],
        }
    }

    fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> FfnParams<U> {
        match self {
            FfnParams::Gelu { w1, b1, w2, b2 } => FfnParams::Gelu {
                w1: f(w1),
                b1: f(b1),
                w2: f(w2),
                b2: f(b2),
            },
            FfnParams::SwiGlu { w, v, w2 } => FfnParams::SwiGlu {
                w: f(w),
                v: f(v),
                w2: f(w2),
            },
        }
    }
}

impl<T> LmParams<T> {
    /// Every parameter in a fixed order.
    pub fn refs(&self) -> Vec<&T> {
        let mut out = vec![&self.embed];
        out.extend(self.pos.as_ref());
        if let Some((g, b)) = &self.embed_ln {
            out.extend([g, b]);
        }
        for blk in &self.blocks {
            out.extend([&blk.ln1.0, &blk.ln1.1]);
            out.extend(blk.attn.refs());
            out.extend([&blk.ln2.0, &blk.ln2.1]);
            out.extend(blk.ffn.refs());
        }
        out.extend([&self.ln_f.0, &self.ln_f.1]);
        out
    }

    /// Same order as [`LmParams::refs`].
    pub fn refs_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed];
        out.extend(self.pos.as_mut());
        if let Some((g, b)) = &mut self.embed_ln {
            out.extend([g, b]);
        }
        for blk in &mut self.blocks {
            out.extend([&mut blk.ln1.0, &mut blk.ln1.1]);
            out.extend(blk.attn.refs_mut());
            out.extend([&mut blk.ln2.0, &mut blk.ln2.1]);
            out.extend(blk.ffn.refs_mut());
        }
        out.extend([&mut self.ln_f.0, &mut self.ln_f.1]);
        out
    }

    /// Visits parameters in [`LmParams::refs`] order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LmParams<U> {
        let embed = f(&self.embed);
        let pos = self.pos.as_ref().map(&mut f);
        let embed_ln = self.embed_ln.as_ref().map(|(g, b)| (f(g), f(b)));
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockParams {
                ln1: (f(&b.ln1.0), f(&b.ln1.1)),
                attn: b.attn.map(&mut f),
                ln2: (f(&b.ln2.0), f(&b.ln2.1)),
                ffn: b.ffn.map(&mut f),
            })
            .collect();
        let ln_f = (f(&self.ln_f.0), f(&self.ln_f.1));
        LmParams {
            embed,
            pos,
            embed_ln,
            blocks,
            ln_f,
        }
    }

    /// Rebuilds the layout from a flat list in [`LmParams::refs`] order.
    pub fn from_flat<U: Clone>(&self, flat: &[U]) -> LmParams<U> {
        let mut it = flat.iter();
        self.map(|_| it.next().expect("flat list matches the layout").clone())
    }
}

fn ln_pair(d: usize) -> (Tensor, Tensor) {
    (Tensor::filled(1, d, 1.0), Tensor::zeros(1, d))
}

impl AttentionParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(d: usize, out_std: f64, rng: &mut R) -> Self {
        Self {
            w_qkv: Tensor::randn(d, 3 * d, 1.0 / (d as f64).sqrt(), rng),
            b_qkv: Tensor::zeros(1, 3 * d),
            w_o: Tensor::randn(d, d, out_std, rng),
            b_o: Tensor::zeros(1, d),
        }
    }
}

impl LmParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &KernelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let resid_std = 1.0 / ((d * 2 * cfg.n_layers) as f64).sqrt();
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockParams {
                ln1: ln_pair(d),
                attn: AttentionParams::init(d, resid_std, rng),
                ln2: ln_pair(d),
                ffn: match cfg.activation {
                    Activation::Gelu => FfnParams::Gelu {
                        w1: Tensor::randn(d, cfg.d_ff, 1.0 / (d as f64).sqrt(), rng),
                        b1: Tensor::zeros(1, cfg.d_ff),
                        w2: Tensor::randn(
                            cfg.d_ff,
                            d,
                            resid_std * (d as f64 / cfg.d_ff as f64).sqrt(),
                            rng,
                        ),
                        b2: Tensor::zeros(1, d),
                    },
                    Activation::SwiGlu => FfnParams::SwiGlu {
                        w: Tensor::randn(d, cfg.d_ff, 1.0 / (d as f64).sqrt(), rng),
                        v: Tensor::randn(d, cfg.d_ff, 1.0 / (d as f64).sqrt(), rng),
                        w2: Tensor::randn(
                            cfg.d_ff,
                            d,
                            resid_std * (d as f64 / cfg.d_ff as f64).sqrt(),
                            rng,
                        ),
                    },
                },
            })
            .collect();
        Ok(Self {
            embed: Tensor::randn(cfg.vocab, d, 0.3, rng),
            pos: (cfg.positional == Positional::Learned)
                .then(|| Tensor::randn(cfg.n_ctx_train, d, 0.1, rng)),
            embed_ln: cfg.embed_norm.then(|| ln_pair(d)),
            blocks,
            ln_f: ln_pair(d),
        })
    }

    pub fn n_params(&self) -> usize {
        self.refs().iter().map(|t| t.len()).sum()
    }
}

/// Per-length constants of the attention: one additive bias per head and the
/// row positions used by rotary.
pub struct AttentionConsts {
    pub bias: Vec<Tensor>,
    pub positions: Vec<f64>,
}

impl AttentionConsts {
    pub fn new(cfg: &KernelConfig, seq_len: usize) -> Result<Self> {
        let bias = if cfg.positional == Positional::Alibi {
            alibi_bias(&alibi_slopes(cfg.n_heads)?, seq_len, seq_len)
        } else {
            vec![causal_mask(seq_len); cfg.n_heads]
        };
        Ok(Self {
            bias,
            positions: (0..seq_len).map(|p| p as f64).collect(),
        })
    }
}

/// Causal multi-head self-attention on the tape. Returns the output and the
/// per-head attention probabilities.
pub fn attention_on_tape(
    tape: &mut Tape,
    cfg: &KernelConfig,
    x: Var,
    p: &AttentionParams<Var>,
    consts: &AttentionConsts,
) -> (Var, Vec<Var>) {
    let (d, hd) = (cfg.d_model, cfg.head_dim);
    let proj = tape.matmul(x, p.w_qkv);
    let qkv = tape.add_row(proj, p.b_qkv);
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut probs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let mut q = tape.slice_cols(qkv, h * hd, hd);
        let mut k = tape.slice_cols(qkv, d + h * hd, hd);
        let v = tape.slice_cols(qkv, 2 * d + h * hd, hd);
        if cfg.positional == Positional::Rotary {
            q = tape.rotary(q, &consts.positions, cfg.rotary_base);
            k = tape.rotary(k, &consts.positions, cfg.rotary_base);
        }
        let logits = tape.matmul_bt(q, k);
        let logits = tape.scale(logits, scale);
        let pr = tape.softmax_rows(logits, Some(&consts.bias[h]));
        heads.push(tape.matmul(pr, v));
        probs.push(pr);
    }
    let cat = tape.concat_cols(&heads);
    let out = tape.matmul(cat, p.w_o);
    (tape.add_row(out, p.b_o), probs)
}

/// Attention output and per-head probabilities for a `seq × d_model` input.
pub fn attention_forward_with_probs(
    cfg: &KernelConfig,
    hidden: &Tensor,
    weights: &AttentionParams<Tensor>,
) -> Result<(Tensor, Vec<Tensor>)> {
    cfg.validate()?;
    if hidden.cols != cfg.d_model {
        return Err(Error::Config(format!(
            "hidden width {} does not match d_model {}",
            hidden.cols, cfg.d_model
        )));
    }
    cfg.check_length(hidden.rows)?;
    let consts = AttentionConsts::new(cfg, hidden.rows)?;
    let mut tape = Tape::new();
    let x = tape.leaf(hidden.clone());
    let p = weights.map(|t| tape.leaf(t.clone()));
    let (out, probs) = attention_on_tape(&mut tape, cfg, x, &p, &consts);
    Ok((
        tape.value(out).clone(),
        probs.iter().map(|v| tape.value(*v).clone()).collect(),
    ))
}

pub fn attention_forward(
    cfg: &KernelConfig,
    hidden: &Tensor,
    weights: &AttentionParams<Tensor>,
) -> Result<Tensor> {
    Ok(attention_forward_with_probs(cfg, hidden, weights)?.0)
}

fn check_tokens(tokens: &[usize], vocab: usize) -> Result<()> {
    if let Some(bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Input(format!(
            "token id {bad} is out of range for vocab {vocab}"
        )));
    }
    Ok(())
}

/// Table lookup, followed by layer normalization when `norm` carries a
/// gain and bias.
pub fn embedding_forward(
    tokens: &[usize],
    table: &Tensor,
    norm: Option<(&Tensor, &Tensor)>,
) -> Result<Tensor> {
    check_tokens(tokens, table.rows)?;
    let mut tape = Tape::new();
    let t = tape.leaf(table.clone());
    let mut h = tape.gather(t, tokens);
    if let Some((g, b)) = norm {
        let (g, b) = (tape.leaf(g.clone()), tape.leaf(b.clone()));
        h = tape.layer_norm(h, g, b);
    }
    Ok(tape.value(h).clone())
}

pub struct TinyLm {
    pub config: KernelConfig,
    pub params: LmParams<Tensor>,
}

impl TinyLm {
    pub fn new<R: Rng + ?Sized>(config: KernelConfig, rng: &mut R) -> Result<Self> {
        let params = LmParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    /// Pushes every parameter as a leaf.
    pub fn leaves(&self, tape: &mut Tape) -> LmParams<Var> {
        self.params.map(|t| tape.leaf(t.clone()))
    }

    /// Final hidden states for `tokens` (before the output head).
    pub fn hidden_on_tape(
        &self,
        tape: &mut Tape,
        p: &LmParams<Var>,
        tokens: &[usize],
        consts: &AttentionConsts,
    ) -> Result<Var> {
        let cfg = &self.config;
        cfg.check_length(tokens.len())?;
        check_tokens(tokens, cfg.vocab)?;
        let mut h = tape.gather(p.embed, tokens);
        if let Some(pos) = p.pos {
            let idx: Vec<usize> = (0..tokens.len()).collect();
            let pe = tape.gather(pos, &idx);
            h = tape.add(h, pe);
        }
        if let Some((g, b)) = p.embed_ln {
            h = tape.layer_norm(h, g, b);
        }
        for blk in &p.blocks {
            let a_in = tape.layer_norm(h, blk.ln1.0, blk.ln1.1);
            let (a, _) = attention_on_tape(tape, cfg, a_in, &blk.attn, consts);
            h = tape.add(h, a);
            let f_in = tape.layer_norm(h, blk.ln2.0, blk.ln2.1);
            let f = match &blk.ffn {
                FfnParams::Gelu { w1, b1, w2, b2 } => {
                    let z = tape.matmul(f_in, *w1);
                    let z = tape.add_row(z, *b1);
                    let z = tape.gelu(z);
                    let z = tape.matmul(z, *w2);
                    tape.add_row(z, *b2)
                }
                FfnParams::SwiGlu { w, v, w2 } => {
                    let gate = tape.matmul(f_in, *w);
                    let gate = tape.swish(gate);
                    let val = tape.matmul(f_in, *v);
                    let z = tape.mul(gate, val);
                    tape.matmul(z, *w2)
                }
            };
            h = tape.add(h, f);
        }
        Ok(tape.layer_norm(h, p.ln_f.0, p.ln_f.1))
    }

    /// Mean next-token loss: `inputs[i]` predicts `targets[i]`.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        p: &LmParams<Var>,
        inputs: &[usize],
        targets: &[usize],
        consts: &AttentionConsts,
    ) -> Result<Var> {
        if inputs.len() != targets.len() {
            return Err(Error::Input("inputs and targets differ in length".into()));
        }
        check_tokens(targets, self.config.vocab)?;
        let h = self.hidden_on_tape(tape, p, inputs, consts)?;
        let logits = tape.matmul_bt(h, p.embed);
        Ok(tape.cross_entropy(logits, targets))
    }

    /// `seq × vocab` logits.
    pub fn logits(&self, tokens: &[usize]) -> Result<Tensor> {
        let consts = AttentionConsts::new(&self.config, tokens.len())?;
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let h = self.hidden_on_tape(&mut tape, &p, tokens, &consts)?;
        let logits = tape.matmul_bt(h, p.embed);
        Ok(tape.value(logits).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(pos: Positional) -> KernelConfig {
        KernelConfig::tiny(11, 16).with_positional(pos)
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(Positional::Alibi);
        assert!(c.validate().is_ok());
        c.head_dim = 7;
        assert!(c.validate().is_err());
        let mut r = cfg(Positional::Rotary);
        r.d_model = 12;
        r.n_heads = 4;
        r.head_dim = 3;
        assert!(r.validate().is_err());
        assert_eq!("ALiBi".parse::<Positional>().unwrap(), Positional::Alibi);
    }

    #[test]
    fn learned_positions_refuse_long_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = cfg(Positional::Learned);
        let w = AttentionParams::init(c.d_model, 0.1, &mut rng);
        let x = Tensor::randn(17, c.d_model, 1.0, &mut rng);
        assert!(matches!(
            attention_forward(&c, &x, &w),
            Err(Error::ExtrapolationUnsupported {
                seq_len: 17,
                n_ctx: 16
            })
        ));
        let a = cfg(Positional::Alibi);
        assert!(attention_forward(&a, &x, &w).unwrap().is_finite());
    }

    #[test]
    fn embedding_lookup_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = Tensor::randn(10, 16, 2.0, &mut rng);
        let raw = embedding_forward(&[3, 0, 9], &table, None).unwrap();
        assert_eq!(raw.row(0), table.row(3));
        assert_eq!(raw.row(2), table.row(9));
        let (g, b) = (Tensor::filled(1, 16, 1.0), Tensor::zeros(1, 16));
        let normed = embedding_forward(&[3, 0, 9], &table, Some((&g, &b))).unwrap();
        for i in 0..3 {
            let r = normed.row(i);
            let m = r.iter().sum::<f64>() / 16.0;
            let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert!(matches!(
            embedding_forward(&[10], &table, None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn tied_head_uses_the_embedding_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = TinyLm::new(cfg(Positional::None), &mut rng).unwrap();
        let before = m.logits(&[1, 2, 3]).unwrap();
        // Scaling a row of the table changes both the lookup and that
        // token's output logit; no separate head exists.
        for x in m.params.embed.row_mut(7) {
            *x *= 2.0;
        }
        let after = m.logits(&[1, 2, 3]).unwrap();
        for i in 0..3 {
            assert_ne!(before.at(i, 7), after.at(i, 7));
            assert_eq!(before.at(i, 6), after.at(i, 6));
        }
    }

    #[test]
    fn parameter_layout_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for act in [Activation::Gelu, Activation::SwiGlu] {
            let mut c = cfg(Positional::Learned);
            c.activation = act;
            c.embed_norm = true;
            let p = LmParams::init(&c, &mut rng).unwrap();
            let mut counter = 0;
            let order = p.map(|_| {
                counter += 1;
                counter - 1
            });
            let visited: Vec<usize> = order.refs().into_iter().copied().collect();
            assert_eq!(visited, (0..counter).collect::<Vec<_>>());
            let shapes: Vec<_> = p.refs().iter().map(|t| t.shape()).collect();
            let rebuilt = p.from_flat(&shapes);
            assert_eq!(
                rebuilt.refs().into_iter().copied().collect::<Vec<_>>(),
                shapes
            );
        }
    }
}
