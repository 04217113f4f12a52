//! Reverse-mode differentiation over the kernel's operation set. Each op
//! records its inputs on a tape; `backward` walks the tape once in reverse.

use crate::kernel::ops::{gelu, gelu_grad, rotary_apply_dir, swish, swish_grad, LAYER_NORM_EPS};
use crate::kernel::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Swish(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Rotary {
        x: Var,
        positions: Vec<f64>,
        base: f64,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes the root does not reach.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, zero-filled with `v`'s shape when unreached.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Tensor {
        self.0[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        let bias = &self.value(b).data;
        assert_eq!(bias.len(), v.cols, "row bias width mismatch");
        for i in 0..v.rows {
            for (x, y) in v.row_mut(i).iter_mut().zip(bias) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let v = self.value(a).map(swish);
        self.push(v, Op::Swish(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        let mut xhat = input.clone();
        let mut inv_std = Vec::with_capacity(input.rows);
        for i in 0..input.rows {
            let row = xhat.row_mut(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let mut out = xhat.clone();
        for i in 0..out.rows {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Row softmax of `a + bias`; `bias` is a constant and may hold `-∞` to
    /// mask entries out.
    pub fn softmax_rows(&mut self, a: Var, bias: Option<&Tensor>) -> Var {
        let mut v = self.value(a).clone();
        if let Some(b) = bias {
            assert_eq!(b.shape(), v.shape(), "softmax bias shape mismatch");
            v.add_assign(b);
        }
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(t.rows, rows, "concat row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols].copy_from_slice(t.row(i));
            }
            offset += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Panics on odd widths; callers validate the head size first.
    pub fn rotary(&mut self, x: Var, positions: &[f64], base: f64) -> Var {
        let v = rotary_apply_dir(self.value(x), positions, base, false)
            .expect("validated rotary input");
        self.push(
            v,
            Op::Rotary {
                x,
                positions: positions.to_vec(),
                base,
            },
        )
    }

    /// Rows of `table` selected by `ids`. Ids must be in range.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean negative log-likelihood of `targets[r]` under row `r`'s softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len(), "one target per row");
        let mut probs = l.clone();
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            loss += sum.ln() - (l.at(i, t) - max);
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let n = targets.len() as f64;
        self.push(
            Tensor::scalar(loss / n),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gradients of the sum of `root`'s entries with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let r = &self.nodes[root.0].value;
        grads[root.0] = Some(Tensor::filled(r.rows, r.cols, 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_bt(self.value(*b)));
                    acc(&mut grads, *b, self.value(*a).matmul_at(&g));
                }
                Op::MatMulBt(a, b) => {
                    acc(&mut grads, *a, g.matmul(self.value(*b)));
                    acc(&mut grads, *b, g.matmul_at(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x * gelu_grad(y));
                    acc(&mut grads, *a, ga);
                }
                Op::Swish(a) => {
                    let ga = g.zip_map(self.value(*a), |x, y| x * swish_grad(y));
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.value(*gain).data;
                    let cols = g.cols;
                    let n = cols as f64;
                    let mut ggain = Tensor::zeros(1, cols);
                    let mut gbias = Tensor::zeros(1, cols);
                    let mut gx = Tensor::zeros(g.rows, cols);
                    for (i, &istd) in inv_std.iter().enumerate() {
                        let (gr, xr) = (g.row(i), xhat.row(i));
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..cols {
                            ggain.data[j] += gr[j] * xr[j];
                            gbias.data[j] += gr[j];
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        let out = gx.row_mut(i);
                        for j in 0..cols {
                            let d = gr[j] * gv[j];
                            out[j] = istd / n * (n * d - sum_d - xr[j] * sum_dx);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for i in 0..y.rows {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for (o, (&gi, &yi)) in
                            ga.row_mut(i).iter_mut().zip(g.row(i).iter().zip(y.row(i)))
                        {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows, src.cols);
                    for i in 0..g.rows {
                        ga.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols;
                        acc(&mut grads, *p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::Rotary { x, positions, base } => {
                    let gx = rotary_apply_dir(&g, positions, *base, true)
                        .expect("shape checked on forward");
                    acc(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, y) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.item() / targets.len() as f64;
                    let mut gl = probs.map(|p| p * scale);
                    for (i, &t) in targets.iter().enumerate() {
                        *gl.at_mut(i, t) -= scale;
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(a) => {
                    let s = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(s.rows, s.cols, g.item()));
                }
            }
        }
        Gradients(grads)
    }
}
