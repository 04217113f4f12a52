//! Architectural hyperparameters shared by the FLOP accounting, the shape
//! search and the desk-scale kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feed-forward activation. `SwiGlu` implies the gated three-matrix FFN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    SwiGlu,
}

impl Activation {
    pub fn is_gated(self) -> bool {
        matches!(self, Activation::SwiGlu)
    }
}

/// Decoder-only transformer shape.
///
/// Fields are public so degenerate shapes can be built for formula checks;
/// [`ModelShape::validate`] enforces the structural invariants.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layer: u64,
    pub d_model: u64,
    pub n_heads: u64,
    pub head_dim: u64,
    pub d_ff: u64,
    pub n_ctx: u64,
    pub vocab: u64,
    pub tied_embeddings: bool,
    pub activation: Activation,
}

/// Vocabulary size used throughout the planning code when none is given.
pub const DEFAULT_VOCAB: u64 = 250_880;
pub const DEFAULT_SEQ_LEN: u64 = 2_048;

impl ModelShape {
    /// GELU shape with `d_ff = 4·d_model`, tied embeddings and the default
    /// context length and vocabulary.
    pub fn gpt(n_layer: u64, d_model: u64, n_heads: u64) -> Self {
        let head_dim = d_model.checked_div(n_heads).unwrap_or(0);
        Self {
            n_layer,
            d_model,
            n_heads,
            head_dim,
            d_ff: 4 * d_model,
            n_ctx: DEFAULT_SEQ_LEN,
            vocab: DEFAULT_VOCAB,
            tied_embeddings: true,
            activation: Activation::Gelu,
        }
    }

    pub fn with_vocab(mut self, vocab: u64) -> Self {
        self.vocab = vocab;
        self
    }

    pub fn with_ctx(mut self, n_ctx: u64) -> Self {
        self.n_ctx = n_ctx;
        self
    }

    pub fn with_ffn(mut self, activation: Activation, d_ff: u64) -> Self {
        self.activation = activation;
        self.d_ff = d_ff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layer", self.n_layer),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("d_ff", self.d_ff),
            ("n_ctx", self.n_ctx),
            ("vocab", self.vocab),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_heads * self.head_dim != self.d_model {
            return Err(Error::Config(format!(
                "n_heads ({}) x head_dim ({}) != d_model ({})",
                self.n_heads, self.head_dim, self.d_model
            )));
        }
        Ok(())
    }
}
