//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node that holds its forward value and whatever
//! it saved for the backward rule. Nodes only ever reference earlier nodes,
//! so walking the tape backwards visits them in reverse topological order.

use super::conv::{col2im, im2col, ConvGeom, PoolGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics owned by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    AvgPool {
        input: Var,
        geom: PoolGeom,
    },
    GlobalAvgPool(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Reshape(Var),
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut p = vec![*input, *weight];
                p.extend(bias);
                p
            }
            Op::Relu(x) | Op::GlobalAvgPool(x) | Op::Sum(x) | Op::Reshape(x) => vec![*x],
            Op::MaxPool { input, .. } | Op::AvgPool { input, .. } => vec![*input],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Concat(xs) => xs.clone(),
            Op::Add(a, b) => vec![*a, *b],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for a single forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::InvalidShape(msg.into())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.shape().len() != 4 || w.shape().len() != 4 {
            return Err(shape_err(format!(
                "conv2d expects NCHW input and OIKK weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, ci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if ci != c {
            return Err(shape_err(format!(
                "conv2d weight expects {ci} input channels, input has {c}"
            )));
        }
        if kh != kw {
            return Err(shape_err("conv2d kernels must be square"));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return Err(shape_err(format!(
                    "conv2d bias must have shape [{o}], got {:?}",
                    self.value(b).shape()
                )));
            }
        }
        let geom = ConvGeom::new(n, c, h, wd, o, kh, stride, padding)?;
        let pointwise = geom.is_pointwise();
        let (p, ckk) = (geom.out_pixels(), geom.col_rows());
        let in_stride = c * h * wd;
        let mut out = vec![T::zero(); n * o * p];
        let mut scratch = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); ckk * p]
        };
        for s in 0..n {
            let xs = &x.data()[s * in_stride..(s + 1) * in_stride];
            let col = if pointwise {
                xs
            } else {
                im2col(&geom, xs, &mut scratch);
                &scratch[..]
            };
            let y = &mut out[s * o * p..(s + 1) * o * p];
            if let Some(b) = bias {
                let b = self.value(b).data();
                for (oc, row) in y.chunks_exact_mut(p).enumerate() {
                    row.fill(b[oc]);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(
                o,
                ckk,
                p,
                T::one(),
                w.data(),
                (ckk as isize, 1),
                col,
                (p as isize, 1),
                beta,
                y,
                (p as isize, 1),
            );
        }
        let value = Tensor::new(&[n, o, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        self.push(value, Op::Relu(input))
    }

    fn nchw(&self, v: Var, what: &str) -> Result<(usize, usize, usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 4 {
            return Err(shape_err(format!("{what} expects NCHW input, got {s:?}")));
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(input, "max_pool2d")?;
        let g = PoolGeom::new(h, w, kernel, stride)?;
        let x = self.value(input).data();
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * g.out_h * g.out_w);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..planes {
            let base = plane * h * w;
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(&[n, c, g.out_h, g.out_w], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    pub fn avg_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.nchw(input, "avg_pool2d")?;
        let geom = PoolGeom::new(h, w, kernel, stride)?;
        let x = self.value(input).data();
        let scale = T::one() / T::lit((kernel * kernel) as f64);
        let mut out = Vec::with_capacity(n * c * geom.out_h * geom.out_w);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    let mut acc = T::zero();
                    for ky in 0..kernel {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..kernel {
                            acc = acc + x[row + kx];
                        }
                    }
                    out.push(acc * scale);
                }
            }
        }
        let value = Tensor::new(&[n, c, geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::AvgPool { input, geom }))
    }

    /// Averages each channel plane: NCHW -> NC.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.nchw(input, "global_avg_pool")?;
        let hw = h * w;
        let scale = T::one() / T::lit(hw as f64);
        let data = self
            .value(input)
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        let value = Tensor::new(&[n, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    /// Per-channel batch normalization of NCHW (or NC) input.
    ///
    /// Train mode normalizes with biased batch statistics and folds the
    /// unbiased batch variance into `running` with momentum 0.1. Eval mode
    /// normalizes with `running`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        if shape.len() != 2 && shape.len() != 4 {
            return Err(shape_err(format!(
                "batch_norm expects NC or NCHW input, got {shape:?}"
            )));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(v).shape() != [c] {
                return Err(shape_err(format!("batch_norm {what} must have shape [{c}]")));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(shape_err("batch_norm running stats do not match channels"));
        }
        let count = n * inner;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(Error::InvalidInput(
                "batch_norm in train mode needs at least two values per channel".into(),
            ));
        }
        let eps = T::lit(BN_EPS);
        let xs = x.data();
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        for ch in 0..c {
            let (m, var) = if train {
                let mut sum = T::zero();
                for s in 0..n {
                    let off = (s * c + ch) * inner;
                    sum = sum + lane_sum(&xs[off..off + inner]);
                }
                let m = sum / T::lit(count as f64);
                let mut sq = T::zero();
                for s in 0..n {
                    let off = (s * c + ch) * inner;
                    sq = sq + lane_sq_dev(&xs[off..off + inner], m);
                }
                let biased = sq / T::lit(count as f64);
                let unbiased = sq / T::lit((count - 1) as f64);
                let mom = T::lit(BN_MOMENTUM);
                running.mean[ch] = (T::one() - mom) * running.mean[ch] + mom * m;
                running.var[ch] = (T::one() - mom) * running.var[ch] + mom * unbiased;
                (m, biased)
            } else {
                (running.mean[ch], running.var[ch])
            };
            mean[ch] = m;
            inv_std[ch] = T::one() / (var + eps).sqrt();
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xs.len());
        for (i, block) in xs.chunks_exact(inner.max(1)).enumerate() {
            let ch = i % c;
            xhat.extend(block.iter().map(|&v| (v - mean[ch]) * inv_std[ch]));
        }
        let mut out = Vec::with_capacity(xs.len());
        for (i, block) in xhat.chunks_exact(inner.max(1)).enumerate() {
            let ch = i % c;
            out.extend(block.iter().map(|&h| g[ch] * h + b[ch]));
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Concatenates along axis 1 (channels for NCHW, features for NC).
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat needs at least one input"))?;
        let s0 = self.value(*first).shape().to_vec();
        if s0.len() < 2 {
            return Err(shape_err("concat needs rank >= 2 inputs"));
        }
        let mut channels = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
                return Err(shape_err(format!(
                    "concat shape mismatch: {s0:?} vs {s:?}"
                )));
            }
            channels += s[1];
        }
        let n = s0[0];
        let inner: usize = s0[2..].iter().product();
        let mut out = Vec::with_capacity(n * channels * inner);
        for s in 0..n {
            for v in inputs {
                let t = self.value(*v);
                let block = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[s * block..(s + 1) * block]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = channels;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(format!(
                "add shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// `x W^T + b` for `x: N x F`, `W: O x F`, `b: O`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.shape().len() != 2 || w.shape().len() != 2 || w.shape()[1] != x.shape()[1] {
            return Err(shape_err(format!(
                "linear expects N x F input and O x F weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (n, f, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        if b.shape() != [o] {
            return Err(shape_err(format!("linear bias must have shape [{o}]")));
        }
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        T::gemm(
            n,
            f,
            o,
            T::one(),
            x.data(),
            (f as isize, 1),
            w.data(),
            (1, f as isize),
            T::one(),
            &mut out,
            (o as isize, 1),
        );
        let value = Tensor::new(&[n, o], out)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.shape().len() != 2 || z.shape()[0] != labels.len() || z.shape()[1] < 2 {
            return Err(shape_err(format!(
                "softmax_cross_entropy expects N x C logits (C >= 2) and N labels, got {:?} and {}",
                z.shape(),
                labels.len()
            )));
        }
        if !z.all_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let (n, c) = (z.shape()[0], z.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![T::zero(); n * c];
        let mut loss = T::zero();
        for (s, row) in z.data().chunks_exact(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = sum.ln() + max;
            for (k, &v) in row.iter().enumerate() {
                probs[s * c + k] = (v - log_sum).exp();
            }
            loss = loss + (log_sum - row[labels[s]]);
        }
        let value = Tensor::scalar(loss / T::lit(n as f64));
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(input))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(input)))
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = (match node.op {
                Op::Leaf => None,
                _ => grads[idx].take(),
            }) else {
                continue;
            };
            for p in node.op.parents() {
                if p.0 >= idx {
                    return Err(Error::Internal(format!(
                        "tape node {idx} references later node {}",
                        p.0
                    )));
                }
            }
            self.backward_node(idx, gy, &mut grads);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, node)| match (g, &node.op) {
                    (Some(g), Op::Leaf) => {
                        Some(Tensor::new(node.value.shape(), g).expect("gradient shape"))
                    }
                    _ => None,
                })
                .collect(),
        })
    }

    fn backward_node(&self, idx: usize, gy: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (n, o) = (geom.n, geom.out_c);
                let (p, ckk) = (geom.out_pixels(), geom.col_rows());
                let in_len = geom.in_c * geom.in_h * geom.in_w;
                let pointwise = geom.is_pointwise();
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                if let Some(b) = bias.filter(|b| wants(*b)) {
                    let gb = accum(grads, b, o);
                    for s in 0..n {
                        for (oc, row) in gy[s * o * p..(s + 1) * o * p].chunks_exact(p).enumerate()
                        {
                            gb[oc] = gb[oc] + lane_sum(row);
                        }
                    }
                }
                let want_w = wants(*weight);
                let want_x = wants(*input);
                let mut scratch = if pointwise {
                    Vec::new()
                } else {
                    vec![T::zero(); ckk * p]
                };
                let mut gw = if want_w {
                    vec![T::zero(); o * ckk]
                } else {
                    Vec::new()
                };
                let mut gx = if want_x {
                    vec![T::zero(); n * in_len]
                } else {
                    Vec::new()
                };
                for s in 0..n {
                    let gys = &gy[s * o * p..(s + 1) * o * p];
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    if want_w {
                        let col = if pointwise {
                            xs
                        } else {
                            im2col(geom, xs, &mut scratch);
                            &scratch[..]
                        };
                        T::gemm(
                            o,
                            p,
                            ckk,
                            T::one(),
                            gys,
                            (p as isize, 1),
                            col,
                            (1, p as isize),
                            T::one(),
                            &mut gw,
                            (ckk as isize, 1),
                        );
                    }
                    if want_x {
                        let gxs = &mut gx[s * in_len..(s + 1) * in_len];
                        let dcol = if pointwise { gxs } else { &mut scratch[..] };
                        T::gemm(
                            ckk,
                            o,
                            p,
                            T::one(),
                            w,
                            (1, ckk as isize),
                            gys,
                            (p as isize, 1),
                            T::zero(),
                            dcol,
                            (p as isize, 1),
                        );
                        if !pointwise {
                            col2im(geom, &scratch, &mut gx[s * in_len..(s + 1) * in_len]);
                        }
                    }
                }
                if want_w {
                    merge(grads, *weight, gw);
                }
                if want_x {
                    merge(grads, *input, gx);
                }
            }
            Op::Relu(input) => {
                let y = node.value.data();
                let gx = y
                    .iter()
                    .zip(&gy)
                    .map(|(&yv, &d)| if yv > T::zero() { d } else { T::zero() })
                    .collect();
                merge(grads, *input, gx);
            }
            Op::MaxPool { input, argmax } => {
                let len = self.value(*input).numel();
                let gx = accum(grads, *input, len);
                for (&src, &d) in argmax.iter().zip(&gy) {
                    gx[src as usize] = gx[src as usize] + d;
                }
            }
            Op::AvgPool { input, geom } => {
                let s = self.value(*input).shape();
                let (h, w) = (s[2], s[3]);
                let planes = s[0] * s[1];
                let k = geom.kernel;
                let scale = T::one() / T::lit((k * k) as f64);
                let gx = accum(grads, *input, planes * h * w);
                let mut it = gy.iter();
                for plane in 0..planes {
                    let base = plane * h * w;
                    for oy in 0..geom.out_h {
                        for ox in 0..geom.out_w {
                            let d = *it.next().expect("pool gradient length") * scale;
                            for ky in 0..k {
                                let row = base + (oy * geom.stride + ky) * w + ox * geom.stride;
                                for g in &mut gx[row..row + k] {
                                    *g = *g + d;
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool(input) => {
                let s = self.value(*input).shape();
                let hw = s[2] * s[3];
                let scale = T::one() / T::lit(hw as f64);
                let gx = gy
                    .iter()
                    .flat_map(|&d| std::iter::repeat_n(d * scale, hw))
                    .collect();
                merge(grads, *input, gx);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = node.value.shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let count = T::lit((n * inner) as f64);
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * inner;
                        sum_dy[ch] = sum_dy[ch] + lane_sum(&gy[off..off + inner]);
                        sum_dy_xhat[ch] =
                            sum_dy_xhat[ch] + lane_dot(&gy[off..off + inner], &xhat[off..off + inner]);
                    }
                }
                if wants(*gamma) {
                    let gg = accum(grads, *gamma, c);
                    for ch in 0..c {
                        gg[ch] = gg[ch] + sum_dy_xhat[ch];
                    }
                }
                if wants(*beta) {
                    let gb = accum(grads, *beta, c);
                    for ch in 0..c {
                        gb[ch] = gb[ch] + sum_dy[ch];
                    }
                }
                if wants(*input) {
                    let g = self.value(*gamma).data().to_vec();
                    let mut gx = gy;
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * inner;
                            let k = g[ch] * inv_std[ch];
                            let mean_dy = sum_dy[ch] / count;
                            let mean_dy_xhat = sum_dy_xhat[ch] / count;
                            let block = gx[off..off + inner].iter_mut().zip(&xhat[off..off + inner]);
                            if *train {
                                for (d, &xh) in block {
                                    *d = k * (*d - mean_dy - xh * mean_dy_xhat);
                                }
                            } else {
                                for (d, _) in block {
                                    *d = k * *d;
                                }
                            }
                        }
                    }
                    merge(grads, *input, gx);
                }
            }
            Op::Concat(inputs) => {
                let n = node.value.shape()[0];
                let inner: usize = node.value.shape()[2..].iter().product();
                let total = node.value.shape()[1] * inner;
                let mut offset = 0;
                for v in inputs {
                    let block = self.value(*v).shape()[1] * inner;
                    if wants(*v) {
                        let mut gx = Vec::with_capacity(n * block);
                        for s in 0..n {
                            gx.extend_from_slice(&gy[s * total + offset..s * total + offset + block]);
                        }
                        merge(grads, *v, gx);
                    }
                    offset += block;
                }
            }
            Op::Add(a, b) => {
                match (wants(*a), wants(*b)) {
                    (true, true) => {
                        merge(grads, *a, gy.clone());
                        merge(grads, *b, gy);
                    }
                    (true, false) => merge(grads, *a, gy),
                    (false, true) => merge(grads, *b, gy),
                    (false, false) => {}
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, f, o) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                if wants(*bias) {
                    let gb = accum(grads, *bias, o);
                    for row in gy.chunks_exact(o) {
                        for (g, &d) in gb.iter_mut().zip(row) {
                            *g = *g + d;
                        }
                    }
                }
                if wants(*weight) {
                    let gw = accum(grads, *weight, o * f);
                    T::gemm(
                        o,
                        n,
                        f,
                        T::one(),
                        &gy,
                        (1, o as isize),
                        x.data(),
                        (f as isize, 1),
                        T::one(),
                        gw,
                        (f as isize, 1),
                    );
                }
                if wants(*input) {
                    let gx = accum(grads, *input, n * f);
                    T::gemm(
                        n,
                        o,
                        f,
                        T::one(),
                        &gy,
                        (o as isize, 1),
                        w.data(),
                        (f as isize, 1),
                        T::one(),
                        gx,
                        (f as isize, 1),
                    );
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = probs.len() / labels.len();
                let scale = gy[0] / T::lit(labels.len() as f64);
                let gx = accum(grads, *logits, probs.len());
                for (s, &label) in labels.iter().enumerate() {
                    for k in 0..c {
                        let onehot = if k == label { T::one() } else { T::zero() };
                        let i = s * c + k;
                        gx[i] = gx[i] + (probs[i] - onehot) * scale;
                    }
                }
            }
            Op::Reshape(input) => merge(grads, *input, gy),
            Op::Sum(input) => {
                let len = self.value(*input).numel();
                let gx = accum(grads, *input, len);
                for g in gx.iter_mut() {
                    *g = *g + gy[0];
                }
            }
        }
    }
}

const LANES: usize = 8;

/// Sum with a fixed set of partial accumulators so the loop vectorizes
/// while the summation order stays deterministic.
fn lane_sum<T: Real>(xs: &[T]) -> T {
    lane_reduce(xs.len(), |i| xs[i])
}

fn lane_dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    lane_reduce(a.len(), |i| a[i] * b[i])
}

fn lane_sq_dev<T: Real>(xs: &[T], m: T) -> T {
    lane_reduce(xs.len(), |i| (xs[i] - m) * (xs[i] - m))
}

#[inline(always)]
fn lane_reduce<T: Real>(len: usize, f: impl Fn(usize) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let whole = len - len % LANES;
    for base in (0..whole).step_by(LANES) {
        for (l, a) in acc.iter_mut().enumerate() {
            *a = *a + f(base + l);
        }
    }
    let mut tail = T::zero();
    for i in whole..len {
        tail = tail + f(i);
    }
    acc.iter().fold(tail, |s, &a| s + a)
}

fn merge<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(g) {
                *a = *a + d;
            }
        }
        slot => *slot = Some(g),
    }
}

fn accum<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

/// Gradients of a loss with respect to the leaves of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a leaf; `None` when the leaf is not on any path to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, with zeros for leaves the loss does not reach.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
