//! Forward-only building blocks: activations, feed-forward sizing and the
//! positional mechanisms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::kernel::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Exact-erf GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Hidden size of a gated feed-forward block with the same parameter count
/// as a two-matrix block of width `4·d_model`: `(2/3)·4·d_model` rounded to
/// the nearest multiple of `multiple` (ties round up).
pub fn swiglu_hidden_size(d_model: u64, multiple: u64) -> Result<u64> {
    if d_model == 0 || multiple == 0 {
        return Err(Error::Domain(
            "d_model and multiple must be positive".into(),
        ));
    }
    // Integer form of round(8·d / (3·multiple)) · multiple.
    let num = 8 * d_model;
    let den = 3 * multiple;
    Ok((2 * num + den) / (2 * den) * multiple)
}

/// `(swish(xW) ⊙ xV) · W2`.
pub fn swiglu_ffn(x: &Tensor, w: &Tensor, v: &Tensor, w2: &Tensor) -> Result<Tensor> {
    if w.shape() != v.shape() || x.cols != w.rows || w2.rows != w.cols || w2.cols != x.cols {
        return Err(Error::Config(format!(
            "swiglu shapes do not line up: x {:?}, W {:?}, V {:?}, W2 {:?}",
            x.shape(),
            w.shape(),
            v.shape(),
            w2.shape()
        )));
    }
    let gate = x.matmul(w).map(swish);
    let value = x.matmul(v);
    Ok(gate.zip_map(&value, |a, b| a * b).matmul(w2))
}

/// Row-wise layer normalization with gain and bias of shape `1 × cols`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..x.rows {
        let row = out.row_mut(i);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain.data[j] + bias.data[j];
        }
    }
    out
}

/// Per-head ALiBi slopes, largest first.
///
/// Power-of-two head counts use `2^(-8h/n)`. Other counts take the slopes of
/// the nearest lower power of two and fill the remainder with every other
/// slope of the next power of two; the result is sorted in descending order.
pub fn alibi_slopes(n_heads: usize) -> Result<Vec<f64>> {
    if n_heads == 0 {
        return Err(Error::Domain("n_heads must be at least 1".into()));
    }
    let geometric = |n: usize| -> Vec<f64> {
        (1..=n)
            .map(|h| 2f64.powf(-8.0 * h as f64 / n as f64))
            .collect()
    };
    if n_heads.is_power_of_two() {
        return Ok(geometric(n_heads));
    }
    let lower = 1usize << (usize::BITS - 1 - n_heads.leading_zeros());
    let mut slopes = geometric(lower);
    slopes.extend(
        geometric(2 * lower)
            .into_iter()
            .step_by(2)
            .take(n_heads - lower),
    );
    slopes.sort_by(|a, b| b.total_cmp(a));
    Ok(slopes)
}

/// `bias[h][i][j] = -m_h·(i - j)` for `j ≤ i`, `-∞` above the diagonal.
/// Query `i` sits at absolute position `k_len - q_len + i`.
pub fn alibi_bias(slopes: &[f64], q_len: usize, k_len: usize) -> Vec<Tensor> {
    let offset = k_len.saturating_sub(q_len);
    slopes
        .iter()
        .map(|&m| {
            Tensor::from_fn(q_len, k_len, |i, j| {
                let qi = i + offset;
                if j <= qi {
                    -m * (qi - j) as f64
                } else {
                    f64::NEG_INFINITY
                }
            })
        })
        .collect()
}

/// Additive causal mask: 0 on and below the diagonal, `-∞` above.
pub fn causal_mask(len: usize) -> Tensor {
    Tensor::from_fn(
        len,
        len,
        |i, j| if j <= i { 0.0 } else { f64::NEG_INFINITY },
    )
}

/// Rotates interleaved pairs `(x[2i], x[2i+1])` of each row by
/// `pos·base^(-2i/head_dim)`, with `positions[r]` the position of row `r`.
/// `transpose` applies the inverse rotation.
pub fn rotary_apply_dir(
    x: &Tensor,
    positions: &[f64],
    base: f64,
    transpose: bool,
) -> Result<Tensor> {
    let d = x.cols;
    if d % 2 != 0 {
        return Err(Error::Config(format!(
            "rotary needs an even head_dim, got {d}"
        )));
    }
    if positions.len() != x.rows {
        return Err(Error::Config(format!(
            "rotary got {} positions for {} rows",
            positions.len(),
            x.rows
        )));
    }
    let sign = if transpose { -1.0 } else { 1.0 };
    let mut out = x.clone();
    for (r, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(r);
        for i in 0..d / 2 {
            let theta = sign * pos * base.powf(-2.0 * i as f64 / d as f64);
            let (s, c) = theta.sin_cos();
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = a * c - b * s;
            row[2 * i + 1] = a * s + b * c;
        }
    }
    Ok(out)
}

pub fn rotary_apply(x: &Tensor, positions: &[f64], base: f64) -> Result<Tensor> {
    rotary_apply_dir(x, positions, base, false)
}
