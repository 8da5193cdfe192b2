//! Tape of operations recorded during a forward pass.
//!
//! Nodes are appended in evaluation order, so the tape is a topological order
//! by construction and backward is a single reverse sweep.

use rand::Rng;

use super::kernels::{self, ConvGeom, Padding};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm normalization source.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize by the statistics of the current batch.
    Train { eps: T },
    /// Normalize by stored running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
        eps: T,
    },
}

/// Per-channel batch statistics observed by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

impl<T: Float> BatchStats<T> {
    pub fn unbiased_var(&self) -> Vec<T> {
        let c = T::of(self.count as f64);
        let corr = c / (c - T::one());
        self.var.iter().map(|&v| v * corr).collect()
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Elu {
        input: Var,
    },
    AvgPool {
        input: Var,
        ph: usize,
        pw: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape {
        input: Var,
    },
    CropWidth {
        input: Var,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum {
        input: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Grouped 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, groups: usize, pad: Padding) -> Result<Var> {
        let geom = ConvGeom::new(self.shape_of(input), self.shape_of(kernel), groups, pad)?;
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            &geom,
        );
        let out = Tensor::new(geom.out_shape().to_vec(), data)?;
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// Per-channel convolution producing `depth_multiplier` outputs per input
    /// channel. Kernel layout is `[C·D, 1, kH, kW]`.
    pub fn depthwise_conv(&mut self, input: Var, kernel: Var, depth_multiplier: usize, pad: Padding) -> Result<Var> {
        let xs = self.shape_of(input);
        if xs.len() != 4 {
            return Err(Error::shape("input rank", format!("expected [N,C,H,W], got {xs:?}")));
        }
        let c = xs[1];
        let ks = self.shape_of(kernel);
        if ks.len() != 4 || ks[0] != c * depth_multiplier || ks[1] != 1 {
            return Err(Error::shape(
                "kernel channels",
                format!(
                    "depthwise kernel must be [{}, 1, kH, kW] for {c} channels x {depth_multiplier}, got {ks:?}",
                    c * depth_multiplier
                ),
            ));
        }
        self.conv2d(input, kernel, c, pad)
    }

    pub fn elu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_fn(x.shape(), |i| {
            let v = x.data()[i];
            if v > T::zero() {
                v
            } else {
                v.exp_m1()
            }
        });
        let rg = self.needs(&[input]);
        self.push(out, Op::Elu { input }, rg)
    }

    /// Non-overlapping mean pooling; extents must divide exactly.
    pub fn avg_pool(&mut self, input: Var, ph: usize, pw: usize) -> Result<Var> {
        let s = self.shape_of(input).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("input rank", format!("expected [N,C,H,W], got {s:?}")));
        }
        if ph == 0 || !s[2].is_multiple_of(ph) {
            return Err(Error::shape("height", format!("height {} not divisible by pool {ph}", s[2])));
        }
        if pw == 0 || !s[3].is_multiple_of(pw) {
            return Err(Error::shape("width", format!("width {} not divisible by pool {pw}", s[3])));
        }
        if ph == 1 && pw == 1 {
            return Ok(input);
        }
        let data = kernels::avg_pool_forward(self.value(input).data(), &s, ph, pw);
        let out = Tensor::new(vec![s[0], s[1], s[2] / ph, s[3] / pw], data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::AvgPool { input, ph, pw }, rg))
    }

    /// Keep the first `keep` columns of the width axis.
    pub fn crop_width(&mut self, input: Var, keep: usize) -> Result<Var> {
        let s = self.shape_of(input).to_vec();
        if s.len() != 4 || keep == 0 || keep > s[3] {
            return Err(Error::shape("width", format!("cannot crop {s:?} to width {keep}")));
        }
        if keep == s[3] {
            return Ok(input);
        }
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(s[0] * s[1] * s[2] * keep);
        for row in x.chunks(s[3]) {
            data.extend_from_slice(&row[..keep]);
        }
        let out = Tensor::new(vec![s[0], s[1], s[2], keep], data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::CropWidth { input }, rg))
    }

    /// Per-channel normalization of `[N,C,H,W]`. In train mode the batch
    /// statistics are returned so the caller can update running estimates.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let s = self.shape_of(input).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("input rank", format!("expected [N,C,H,W], got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape_of(v) != [c] {
                return Err(Error::shape(name, format!("expected [{c}], got {:?}", self.shape_of(v))));
            }
        }
        let count = n * hw;
        let x = self.value(input).data();
        let (mean, var, eps, batch_stats) = match mode {
            BnMode::Train { eps } => {
                if count < 2 {
                    return Err(Error::invalid(
                        "batch_norm",
                        format!("train mode needs N*H*W >= 2, got {count}"),
                    ));
                }
                let inv = T::one() / T::of(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for b in 0..n {
                        acc += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum();
                    }
                    let m = acc * inv;
                    let mut sq = T::zero();
                    for b in 0..n {
                        for &v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            sq += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq * inv;
                }
                (mean, var, eps, true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::shape("running stats", format!("expected {c} channels")));
                }
                (running_mean.to_vec(), running_var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let stats = batch_stats.then_some(BatchStats { mean, var, count });
        let out = Tensor::new(s, out)?;
        let rg = self.needs(&[input, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Inverted dropout. Identity in eval mode or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout rate", format!("must lie in [0, 1), got {rate}")));
        }
        if !train || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * mask[i]);
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Dropout { input, mask }, rg))
    }

    /// `x[N,F] · w[F,K] + b[K]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape_of(x).to_vec();
        let ws = self.shape_of(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::shape("rank", format!("dense expects x [N,F], W [F,K]; got {xs:?}, {ws:?}")));
        }
        if xs[1] != ws[0] {
            return Err(Error::shape("features", format!("x has {} features, W expects {}", xs[1], ws[0])));
        }
        if self.shape_of(b) != [ws[1]] {
            return Err(Error::shape("bias", format!("expected [{}], got {:?}", ws[1], self.shape_of(b))));
        }
        let data = kernels::dense_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            xs[0],
            xs[1],
            ws[1],
        );
        let out = Tensor::new(vec![xs[0], ws[1]], data)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    /// Collapse everything but the leading axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape_of(input);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape_of(logits).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("logits rank", format!("expected [N,K], got {s:?}")));
        }
        let (n, k) = (s[0], s[1]);
        if labels.len() != n {
            return Err(Error::shape("labels", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid("label", format!("{bad} outside [0, {k})")));
        }
        let probs = kernels::softmax_rows(self.value(logits))?.into_data();
        let z = self.value(logits).data();
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = &z[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total += lse - row[l];
        }
        let loss = Tensor::scalar(total / T::of(n as f64));
        let rg = self.needs(&[logits]);
        Ok(self.push(
            loss,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: T = self.value(input).data().iter().copied().sum();
        let rg = self.needs(&[input]);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    fn elementwise(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: impl Fn(Var, Var) -> Op<T>) -> Result<Var> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::shape(
                "operands",
                format!("{:?} vs {:?}", self.shape_of(a), self.shape_of(b)),
            ));
        }
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(x.shape(), |i| f(x.data()[i], y.data()[i]));
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, op(a, b), rg))
    }

    /// Reverse sweep from a scalar `loss`. Every differentiable leaf ends up
    /// with a gradient; leaves the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "loss",
                format!("backward needs a scalar, got shape {:?}", self.shape_of(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.grad = Some(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                if wants(*input) {
                    let dx = kernels::conv2d_backward_input(gy, self.value(*kernel).data(), geom);
                    accumulate(grads, *input, dx);
                }
                if wants(*kernel) {
                    let dk = kernels::conv2d_backward_kernel(gy, self.value(*input).data(), geom);
                    accumulate(grads, *kernel, dk);
                }
            }
            Op::Elu { input } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                let dx = gy
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&g, (&xv, &yv))| if xv > T::zero() { g } else { g * (yv + T::one()) })
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::AvgPool { input, ph, pw } => {
                let dx = kernels::avg_pool_backward(gy, self.shape_of(*input), *ph, *pw);
                accumulate(grads, *input, dx);
            }
            Op::CropWidth { input } => {
                let s = self.shape_of(*input);
                let w = s[3];
                let keep = node.value.shape()[3];
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for (dst, src) in dx.chunks_mut(w).zip(gy.chunks(keep)) {
                    dst[..keep].copy_from_slice(src);
                }
                accumulate(grads, *input, dx);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = self.shape_of(*input);
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let g = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for j in base..base + hw {
                            sum_dy[ch] += gy[j];
                            sum_dy_xhat[ch] += gy[j] * xhat[j];
                        }
                    }
                }
                if wants(*input) {
                    let mut dx = vec![T::zero(); gy.len()];
                    let m = T::of((n * hw) as f64);
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let scale = g[ch] * inv_std[ch];
                            for j in base..base + hw {
                                dx[j] = if *batch_stats {
                                    scale / m * (m * gy[j] - sum_dy[ch] - xhat[j] * sum_dy_xhat[ch])
                                } else {
                                    scale * gy[j]
                                };
                            }
                        }
                    }
                    accumulate(grads, *input, dx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, sum_dy_xhat);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, sum_dy);
                }
            }
            Op::Dropout { input, mask } => {
                let dx = gy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                accumulate(grads, *input, dx);
            }
            Op::Dense { x, w, b } => {
                let xs = self.shape_of(*x);
                let (n, f) = (xs[0], xs[1]);
                let k = self.shape_of(*w)[1];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if wants(*x) {
                    let mut dx = vec![T::zero(); n * f];
                    for r in 0..n {
                        let grow = &gy[r * k..(r + 1) * k];
                        for c in 0..f {
                            dx[r * f + c] = grow.iter().zip(&wv[c * k..(c + 1) * k]).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); f * k];
                    for r in 0..n {
                        let grow = &gy[r * k..(r + 1) * k];
                        for c in 0..f {
                            let xval = xv[r * f + c];
                            for (d, &g) in dw[c * k..(c + 1) * k].iter_mut().zip(grow) {
                                *d += xval * g;
                            }
                        }
                    }
                    accumulate(grads, *w, dw);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k];
                    for row in gy.chunks(k) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Reshape { input } => accumulate(grads, *input, gy.to_vec()),
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = self.shape_of(*logits)[1];
                let n = labels.len();
                let scale = gy[0] / T::of(n as f64);
                let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dz[r * k + l] -= scale;
                }
                accumulate(grads, *logits, dz);
            }
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                accumulate(grads, *input, vec![gy[0]; n]);
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let bv = self.value(*b).data();
                    accumulate(grads, *a, gy.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                }
                if wants(*b) {
                    let av = self.value(*a).data();
                    accumulate(grads, *b, gy.iter().zip(av).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, gy.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, gy.to_vec());
                }
            }
        }
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
