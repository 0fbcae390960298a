//! Tape of tensor operations with reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation as a node holding its output
//! value. [`Graph::backward`] walks the tape in reverse and returns the
//! gradient of a scalar node with respect to every tracked node. Parameters
//! enter the tape through [`Graph::param`], which copies the current values
//! out of a [`ParamStore`]; [`Graph::backward_into`] folds the resulting
//! gradients back into the store.
//!
//! Batched layouts used throughout:
//!
//! * dense activations are `[batch, features]`
//! * feature maps are `[batch, channels, length]` (a bare `[channels, length]`
//!   is accepted wherever a single sample makes sense)

use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{DdnError, Result};

/// Index of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel statistics of one training batch, used to update running
/// estimates. `var` is the unbiased (n - 1) estimate.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias {
        input: Var,
        bias: Var,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Tanh(Var),
    LeakyRelu(Var, T),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ClampMin(Var, T),
    Scale(Var, T),
    Offset(Var),
    Softmax(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Narrow {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the
    /// loss through a tracked path.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Splits a batch-norm input shape into (outer, channels, inner).
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, f] => Ok((b, f, 1)),
        [b, c, l] => Ok((b, c, l)),
        _ => Err(DdnError::dim(format!(
            "expected [batch, features] or [batch, channels, length], got {shape:?}"
        ))),
    }
}

/// Views a feature map as (batch, channels, length), returning whether the
/// input carried an explicit batch axis.
fn map_layout(shape: &[usize]) -> Result<(usize, usize, usize, bool)> {
    match *shape {
        [c, l] => Ok((1, c, l, false)),
        [b, c, l] => Ok((b, c, l, true)),
        _ => Err(DdnError::dim(format!(
            "expected [channels, length] or [batch, channels, length], got {shape:?}"
        ))),
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    // eight independent partial sums so the loop vectorizes
    let mut acc = [T::zero(); 8];
    let (cx, cy) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail = cx.remainder().iter().zip(cy.remainder()).fold(T::zero(), |a, (&p, &q)| a + p * q);
    for (a, b) in cx.zip(cy) {
        for i in 0..8 {
            acc[i] = acc[i] + a[i] * b[i];
        }
    }
    let [a0, a1, a2, a3, a4, a5, a6, a7] = acc;
    ((a0 + a4) + (a1 + a5)) + ((a2 + a6) + (a3 + a7)) + tail
}

/// Column matrix `[c_in * k, batch * len]`: row `c * k + t` holds channel `c`
/// shifted by `t - k / 2` with zero fill, samples laid end to end.
fn im2col<T: Scalar>(x: &[T], batch: usize, c_in: usize, len: usize, k: usize) -> Vec<T> {
    let n = batch * len;
    let pad = (k / 2) as isize;
    let mut col = vec![T::zero(); c_in * k * n];
    for c in 0..c_in {
        for t in 0..k {
            let row = &mut col[(c * k + t) * n..(c * k + t + 1) * n];
            let shift = t as isize - pad;
            let (lo, hi) = shifted_range(len, shift);
            let s0 = (lo as isize + shift) as usize;
            for b in 0..batch {
                let src = &x[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                row[b * len + lo..b * len + hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
            }
        }
    }
    col
}

/// Output range `[lo, hi)` of positions `l` whose shifted index `l + shift`
/// stays inside `0..len`.
#[inline]
fn shifted_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Constant, false)
    }

    /// Leaf that receives a gradient, independent of any parameter store.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Copies a stored parameter onto the tape; tracked iff it is trainable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let tracked = t.requires_grad();
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id), tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, k2, n) = match (self.shape(a), self.shape(b)) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            (sa, sb) => {
                return Err(DdnError::dim(format!(
                    "matmul needs two matrices, got {sa:?} and {sb:?}"
                )))
            }
        };
        if k != k2 {
            return Err(DdnError::dim(format!(
                "matmul inner extents differ: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = av[i * k + p];
                if s != T::zero() {
                    axpy(s, &bv[p * n..(p + 1) * n], row);
                }
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), tracked))
    }

    /// Adds `bias` along axis 1: per feature for `[B, F]`, per channel for
    /// `[B, C, L]`. This is the only broadcasting the tape performs.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (outer, ch, inner) = channel_layout(self.shape(input))?;
        if self.shape(bias) != [ch] {
            return Err(DdnError::dim(format!(
                "bias of shape {:?} for input {:?}",
                self.shape(bias),
                self.shape(input)
            )));
        }
        let x = self.value(input);
        let bv = self.value(bias);
        let mut out = x.to_vec();
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for v in &mut out[base..base + inner] {
                    *v = *v + bv[c];
                }
            }
        }
        let tracked = self.tracked(input) || self.tracked(bias);
        let shape = self.shape(input).to_vec();
        Ok(self.push(shape, out, Op::AddBias { input, bias }, tracked))
    }

    /// Stride-1 cross-correlation with zero "same" padding of `(k - 1) / 2`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, c_in, len, batched) = map_layout(self.shape(input))?;
        let (c_out, wc_in, k) = match *self.shape(weight) {
            [o, c, k] => (o, c, k),
            ref s => {
                return Err(DdnError::dim(format!(
                    "conv weight must be [out, in, kernel], got {s:?}"
                )))
            }
        };
        if k % 2 == 0 {
            return Err(DdnError::config(format!(
                "conv kernel width must be odd, got {k}"
            )));
        }
        if wc_in != c_in {
            return Err(DdnError::dim(format!(
                "conv weight expects {wc_in} input channels, input has {c_in}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(DdnError::dim(format!(
                "conv bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let n = batch * len;
        let ck = c_in * k;
        let col = im2col(self.value(input), batch, c_in, len, k);
        let w = self.value(weight);
        let bv = self.value(bias);
        let mut out = vec![T::zero(); batch * c_out * len];
        let mut row = vec![T::zero(); n];
        for o in 0..c_out {
            row.fill(bv[o]);
            for j in 0..ck {
                axpy(w[o * ck + j], &col[j * n..(j + 1) * n], &mut row);
            }
            for b in 0..batch {
                out[(b * c_out + o) * len..(b * c_out + o + 1) * len].copy_from_slice(&row[b * len..(b + 1) * len]);
            }
        }
        let shape = if batched {
            vec![batch, c_out, len]
        } else {
            vec![c_out, len]
        };
        let tracked = self.tracked(input) || self.tracked(weight) || self.tracked(bias);
        Ok(self.push(
            shape,
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
            },
            tracked,
        ))
    }

    /// Nearest-neighbour upsampling along the length axis.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(DdnError::config("upsample factor must be at least 1"));
        }
        let (batch, ch, len, batched) = map_layout(self.shape(input))?;
        let x = self.value(input);
        let mut out = Vec::with_capacity(x.len() * factor);
        for &v in x {
            out.extend(std::iter::repeat_n(v, factor));
        }
        let shape = if batched {
            vec![batch, ch, len * factor]
        } else {
            vec![ch, len * factor]
        };
        let tracked = self.tracked(input);
        Ok(self.push(shape, out, Op::Upsample { input, factor }, tracked))
    }

    /// Training-mode batch normalization over axis 1; statistics are pooled
    /// over the batch (and length) axes.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (outer, ch, inner) = channel_layout(self.shape(input))?;
        if outer < 2 {
            return Err(DdnError::Usage(
                "batch norm in train mode needs a batch of at least 2".into(),
            ));
        }
        self.check_affine(gamma, beta, ch)?;
        let n = outer * inner;
        let nf = T::of(n as f64);
        let x = self.value(input);
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut mean = vec![T::zero(); ch];
        let mut var = vec![T::zero(); ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                mean[c] = mean[c] + x[base..base + inner].iter().copied().sum::<T>();
            }
        }
        for m in &mut mean {
            *m = *m / nf;
        }
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for &v in &x[base..base + inner] {
                    let d = v - mean[c];
                    var[c] = var[c] + d * d;
                }
            }
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v / nf + eps).sqrt())
            .collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let unbiased = T::of(n as f64 / (n as f64 - 1.0));
        let stats = BatchStats {
            mean,
            var: var.iter().map(|&v| v / nf * unbiased).collect(),
        };
        let tracked = self.tracked(input) || self.tracked(gamma) || self.tracked(beta);
        let shape = self.shape(input).to_vec();
        let v = self.push(
            shape,
            out,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            tracked,
        );
        Ok((v, stats))
    }

    /// Inference-mode batch normalization using fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (outer, ch, inner) = channel_layout(self.shape(input))?;
        self.check_affine(gamma, beta, ch)?;
        if mean.len() != ch || var.len() != ch {
            return Err(DdnError::dim("running statistics do not match channels"));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.value(input);
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let tracked = self.tracked(input) || self.tracked(gamma) || self.tracked(beta);
        let shape = self.shape(input).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            tracked,
        ))
    }

    fn check_affine(&self, gamma: Var, beta: Var, ch: usize) -> Result<()> {
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(DdnError::dim(format!(
                "batch norm scale/shift must be [{ch}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).iter().map(|&v| f(v)).collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a);
        self.push(shape, out, op, tracked)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), T::tanh)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |v| if v > T::zero() { v } else { v * slope })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), |v| {
            v.max(T::zero()) + (-v.abs()).exp().ln_1p()
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), T::exp)
    }

    /// Natural log; every input element must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|&&v| !(v > T::zero())) {
            return Err(DdnError::Numeric(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, Op::Log(a), T::ln))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |v| v.max(floor))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |v| v * c)
    }

    pub fn offset(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Offset(a), |v| v + c)
    }

    /// Softmax over the last axis. Normalization is carried out in `f64`.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = *self
            .shape(a)
            .last()
            .ok_or_else(|| DdnError::dim("softmax of a rank-0 tensor"))?;
        if n == 0 {
            return Err(DdnError::dim("softmax over an empty axis"));
        }
        let x = self.value(a);
        let mut out = vec![T::zero(); x.len()];
        let mut buf = vec![0.0f64; n];
        for (src, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            let max = src.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let mut total = 0.0;
            for (b, v) in buf.iter_mut().zip(src) {
                *b = (v.f64() - max).exp();
                total += *b;
            }
            for (d, b) in dst.iter_mut().zip(&buf) {
                *d = T::of(b / total);
            }
        }
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(shape, out, Op::Softmax(a), tracked))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(DdnError::dim(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(shape, out, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Concatenates `[B, F_i]` matrices along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| DdnError::dim("concat of zero tensors"))?;
        let rows = match *self.shape(first) {
            [r, _] => r,
            ref s => return Err(DdnError::dim(format!("concat needs matrices, got {s:?}"))),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match *self.shape(p) {
                [r, w] if r == rows => widths.push(w),
                ref s => {
                    return Err(DdnError::dim(format!(
                        "concat row mismatch: {s:?} vs {rows} rows"
                    )))
                }
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(vec![rows, total], out, Op::Concat(parts.to_vec()), tracked))
    }

    /// Slice `start..start + len` of axis 1.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (outer, ch, inner) = channel_layout(self.shape(input))?;
        if start + len > ch {
            return Err(DdnError::dim(format!(
                "narrow {start}..{} out of axis extent {ch}",
                start + len
            )));
        }
        let x = self.value(input);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ch + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape(input).to_vec();
        shape[1] = len;
        let tracked = self.tracked(input);
        Ok(self.push(shape, out, Op::Narrow { input, start }, tracked))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(input).len() {
            return Err(DdnError::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(input)
            )));
        }
        let out = self.value(input).to_vec();
        let tracked = self.tracked(input);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(input), tracked))
    }

    /// Picks `input[b, index[b]]` from a `[B, N]` matrix.
    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = match *self.shape(input) {
            [r, c] => (r, c),
            ref s => return Err(DdnError::dim(format!("gather needs a matrix, got {s:?}"))),
        };
        if index.len() != rows {
            return Err(DdnError::dim(format!(
                "gather with {} indices on {rows} rows",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= cols) {
            return Err(DdnError::dim(format!("gather index {bad} >= {cols}")));
        }
        let x = self.value(input);
        let out = index
            .iter()
            .enumerate()
            .map(|(r, &i)| x[r * cols + i])
            .collect();
        let tracked = self.tracked(input);
        Ok(self.push(
            vec![rows],
            out,
            Op::GatherRows {
                input,
                index: index.to_vec(),
            },
            tracked,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let tracked = self.tracked(a);
        self.push(vec![1], vec![s], Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        let tracked = self.tracked(a);
        self.push(vec![1], vec![s], Op::Mean(a), tracked)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(DdnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            )));
        }
        if !node.value[0].is_finite() {
            return Err(DdnError::Numeric(format!(
                "loss is not finite ({})",
                node.value[0]
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].tracked {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and accumulates parameter gradients into
    /// `store`. Repeated calls accumulate.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                if store.get(*id).requires_grad() {
                    store.get_mut(*id).accumulate_grad(g)?;
                }
            }
        }
        Ok(grads)
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            ga[r * k + p] = ga[r * k + p] + dot(grow, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let s = av[r * k + p];
                            if s != T::zero() {
                                axpy(s, grow, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::AddBias { input, bias } => {
                if let Some(gi) = self.slot(grads, *input) {
                    axpy(T::one(), g, gi);
                }
                let (outer, ch, inner) = channel_layout(&node.shape).expect("checked");
                if let Some(gb) = self.slot(grads, *bias) {
                    for o in 0..outer {
                        for c in 0..ch {
                            let base = (o * ch + c) * inner;
                            gb[c] = gb[c] + g[base..base + inner].iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
            } => {
                let (batch, c_in, len, _) = map_layout(self.shape(*input)).expect("checked");
                let (c_out, k) = (self.shape(*weight)[0], self.shape(*weight)[2]);
                let (n, ck) = (batch * len, c_in * k);
                let w = self.value(*weight);
                // gradient rearranged to [c_out, batch * len]
                let mut gc = vec![T::zero(); c_out * n];
                for b in 0..batch {
                    for o in 0..c_out {
                        gc[o * n + b * len..o * n + (b + 1) * len]
                            .copy_from_slice(&g[(b * c_out + o) * len..(b * c_out + o + 1) * len]);
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for o in 0..c_out {
                        gb[o] = gb[o] + gc[o * n..(o + 1) * n].iter().copied().sum::<T>();
                    }
                }
                if self.nodes[weight.0].tracked {
                    let col = im2col(self.value(*input), batch, c_in, len, k);
                    let gw = self.slot(grads, *weight).expect("tracked");
                    for o in 0..c_out {
                        for j in 0..ck {
                            gw[o * ck + j] = gw[o * ck + j] + dot(&gc[o * n..(o + 1) * n], &col[j * n..(j + 1) * n]);
                        }
                    }
                }
                if let Some(gi) = self.slot(grads, *input) {
                    let pad = (k / 2) as isize;
                    let mut gcol = vec![T::zero(); n];
                    for c in 0..c_in {
                        for t in 0..k {
                            let j = c * k + t;
                            gcol.fill(T::zero());
                            for o in 0..c_out {
                                axpy(w[o * ck + j], &gc[o * n..(o + 1) * n], &mut gcol);
                            }
                            let shift = t as isize - pad;
                            let (lo, hi) = shifted_range(len, shift);
                            let s0 = (lo as isize + shift) as usize;
                            for b in 0..batch {
                                let dst = &mut gi[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                                for (d, &v) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&gcol[b * len + lo..b * len + hi]) {
                                    *d = *d + v;
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample { input, factor } => {
                if let Some(gi) = self.slot(grads, *input) {
                    for (dst, chunk) in gi.iter_mut().zip(g.chunks_exact(*factor)) {
                        *dst = *dst + chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (outer, ch, inner) = channel_layout(&node.shape).expect("checked");
                let nf = T::of((outer * inner) as f64);
                let mut sum_dy = vec![T::zero(); ch];
                let mut sum_dy_xhat = vec![T::zero(); ch];
                for o in 0..outer {
                    for c in 0..ch {
                        let base = (o * ch + c) * inner;
                        for j in base..base + inner {
                            sum_dy[c] = sum_dy[c] + g[j];
                            sum_dy_xhat[c] = sum_dy_xhat[c] + g[j] * xhat[j];
                        }
                    }
                }
                let gam = self.value(*gamma).to_vec();
                if let Some(gi) = self.slot(grads, *input) {
                    for o in 0..outer {
                        for c in 0..ch {
                            let coef = gam[c] * inv_std[c] / nf;
                            let base = (o * ch + c) * inner;
                            for j in base..base + inner {
                                gi[j] = gi[j]
                                    + coef * (nf * g[j] - sum_dy[c] - xhat[j] * sum_dy_xhat[c]);
                            }
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    axpy(T::one(), &sum_dy_xhat, gg);
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    axpy(T::one(), &sum_dy, gb);
                }
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (outer, ch, inner) = channel_layout(&node.shape).expect("checked");
                let gam = self.value(*gamma).to_vec();
                if let Some(gi) = self.slot(grads, *input) {
                    for o in 0..outer {
                        for c in 0..ch {
                            let coef = gam[c] * inv_std[c];
                            let base = (o * ch + c) * inner;
                            for j in base..base + inner {
                                gi[j] = gi[j] + coef * g[j];
                            }
                        }
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    for o in 0..outer {
                        for c in 0..ch {
                            let base = (o * ch + c) * inner;
                            gg[c] = gg[c] + dot(&g[base..base + inner], &xhat[base..base + inner]);
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for o in 0..outer {
                        for c in 0..ch {
                            let base = (o * ch + c) * inner;
                            gb[c] = gb[c] + g[base..base + inner].iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &yy) in ga.iter_mut().zip(g).zip(y) {
                        *d = *d + gy * (T::one() - yy * yy);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &xx) in ga.iter_mut().zip(g).zip(x) {
                        *d = *d + if xx > T::zero() { gy } else { gy * *slope };
                    }
                }
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &xx) in ga.iter_mut().zip(g).zip(x) {
                        let sig = T::one() / (T::one() + (-xx).exp());
                        *d = *d + gy * sig;
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &yy) in ga.iter_mut().zip(g).zip(y) {
                        *d = *d + gy * yy;
                    }
                }
            }
            Op::Log(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &xx) in ga.iter_mut().zip(g).zip(x) {
                        *d = *d + gy / xx;
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    let two = T::of(2.0);
                    for ((d, &gy), &xx) in ga.iter_mut().zip(g).zip(x) {
                        *d = *d + two * xx * gy;
                    }
                }
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &xx) in ga.iter_mut().zip(g).zip(x) {
                        if xx > *floor {
                            *d = *d + gy;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(*c, g, ga);
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(T::one(), g, ga);
                }
            }
            Op::Softmax(a) => {
                let n = *node.shape.last().expect("checked");
                if let Some(ga) = self.slot(grads, *a) {
                    for ((dst, gy), p) in ga
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(y.chunks_exact(n))
                    {
                        let inner = dot(gy, p);
                        for ((d, &gi), &pi) in dst.iter_mut().zip(gy).zip(p) {
                            *d = *d + pi * (gi - inner);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(T::one(), g, gb);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(T::one(), g, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(-T::one(), g, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &gy), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d = *d + gy * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, &gy), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d = *d + gy * o;
                    }
                }
            }
            Op::Concat(parts) => {
                let (rows, total) = (node.shape[0], node.shape[1]);
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..rows {
                            axpy(
                                T::one(),
                                &g[r * total + col..r * total + col + w],
                                &mut gp[r * w..(r + 1) * w],
                            );
                        }
                    }
                    col += w;
                }
            }
            Op::Narrow { input, start } => {
                let (outer, ch, inner) = channel_layout(self.shape(*input)).expect("checked");
                let len = node.shape[1];
                if let Some(gi) = self.slot(grads, *input) {
                    for o in 0..outer {
                        let base = (o * ch + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        axpy(T::one(), src, &mut gi[base..base + len * inner]);
                    }
                }
            }
            Op::GatherRows { input, index } => {
                let cols = self.shape(*input)[1];
                if let Some(gi) = self.slot(grads, *input) {
                    for (r, &c) in index.iter().enumerate() {
                        gi[r * cols + c] = gi[r * cols + c] + g[r];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for d in ga.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::Mean(a) => {
                let n = T::of(self.value(*a).len().max(1) as f64);
                if let Some(ga) = self.slot(grads, *a) {
                    for d in ga.iter_mut() {
                        *d = *d + g[0] / n;
                    }
                }
            }
        }
    }
}
