//! Reverse-mode tape over [`Tensor`] operations.
//!
//! Every operation evaluates eagerly and records what its backward pass
//! needs. [`Graph::backward`] walks the tape from a scalar loss and returns
//! the gradient of every parameter that the loss depends on.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::Gradients;
use super::tensor::gemm;
use super::{NnError, ParamId, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn col_width(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    AvgPool2 {
        x: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MaskedSqErr {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<f64>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Mean(Var),
    MeanOf(Vec<Var>),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Batch-norm statistics used in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

fn shape_err(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
}

impl<'s> Graph<'s> {
    /// `training` enables dropout masks and batch statistics; `rng` drives dropout.
    pub fn new(store: &'s ParamStore, training: bool, rng: ChaCha8Rng) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            training,
            rng,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite(format!("non-finite output from {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf. Repeated calls with the same id share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `y = x Wᵀ + b` for `x: [B, I]`, `W: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: x {xs:?} with W {ws:?}")));
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [out] {
                return Err(shape_err(format!("linear: bias {bs:?} for {out} outputs")));
            }
        }
        let mut y = vec![0.0; batch * out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in y.chunks_exact_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            batch,
            inp,
            out,
            1.0,
            self.value(x).data(),
            inp,
            1,
            self.value(w).data(),
            1,
            inp,
            if b.is_some() { 1.0 } else { 0.0 },
            &mut y,
            out,
        );
        let req = self.req(x) || self.req(w) || b.is_some_and(|b| self.req(b));
        self.push(Tensor::new(&[batch, out], y)?, Op::Linear { x, w, b }, req)
    }

    /// 2-D convolution, `x: [B, C, H, W]`, `w: [O, C, K, K]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, NnError> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || bs != [ws[0]] {
            return Err(shape_err(format!("conv2d: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2] {
            return Err(shape_err(format!("conv2d: kernel {} too large for {xs:?}", ws[2])));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_c: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_c: ws[0],
            kernel: ws[2],
            stride,
            pad,
            out_h: (xs[2] + 2 * pad - ws[2]) / stride + 1,
            out_w: (xs[3] + 2 * pad - ws[2]) / stride + 1,
        };
        let cols = im2col(self.value(x).data(), &geom);
        let (cw, ohw) = (geom.col_width(), geom.out_hw());
        let mut y = vec![0.0; geom.batch * geom.out_c * ohw];
        let bias = self.value(b).data();
        for (n, out) in y.chunks_exact_mut(geom.out_c * ohw).enumerate() {
            for (oc, plane) in out.chunks_exact_mut(ohw).enumerate() {
                plane.iter_mut().for_each(|v| *v = bias[oc]);
            }
            gemm(
                geom.out_c,
                cw,
                ohw,
                1.0,
                self.value(w).data(),
                cw,
                1,
                &cols[n * ohw * cw..],
                1,
                cw,
                1.0,
                out,
                ohw,
            );
        }
        let req = self.req(x) || self.req(w) || self.req(b);
        let shape = [geom.batch, geom.out_c, geom.out_h, geom.out_w];
        self.push(Tensor::new(&shape, y)?, Op::Conv2d { x, w, b, geom, cols }, req)
    }

    /// 2×2 average pooling with stride 2 on `[B, C, H, W]` (H, W even).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(shape_err(format!("avg_pool2: {s:?}")));
        }
        let (oh, ow) = (s[2] / 2, s[3] / 2);
        let xd = self.value(x).data();
        let mut y = vec![0.0; s[0] * s[1] * oh * ow];
        for (plane, out) in xd.chunks_exact(s[2] * s[3]).zip(y.chunks_exact_mut(oh * ow)) {
            for i in 0..oh {
                for j in 0..ow {
                    let r0 = 2 * i * s[3] + 2 * j;
                    let r1 = r0 + s[3];
                    out[i * ow + j] = 0.25 * (plane[r0] + plane[r0 + 1] + plane[r1] + plane[r1 + 1]);
                }
            }
        }
        let req = self.req(x);
        self.push(Tensor::new(&[s[0], s[1], oh, ow], y)?, Op::AvgPool2 { x }, req)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        let y = self.value(x).map(|v| v.max(0.0));
        let req = self.req(x);
        self.push(y, Op::Relu(x), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        let y = self.value(x).map(sigmoid);
        let req = self.req(x);
        self.push(y, Op::Sigmoid(x), req)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        let y = self.value(x).map(f64::tanh);
        let req = self.req(x);
        self.push(y, Op::Tanh(x), req)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.check_same_shape(tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let y = self.binary(a, b, "add", |x, y| x + y)?;
        let req = self.req(a) || self.req(b);
        self.push(y, Op::Add(a, b), req)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let y = self.binary(a, b, "sub", |x, y| x - y)?;
        let req = self.req(a) || self.req(b);
        self.push(y, Op::Sub(a, b), req)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let y = self.binary(a, b, "mul", |x, y| x * y)?;
        let req = self.req(a) || self.req(b);
        self.push(y, Op::Mul(a, b), req)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var, NnError> {
        let y = self.value(x).map(|v| 1.0 - v);
        let req = self.req(x);
        self.push(y, Op::OneMinus(x), req)
    }

    /// Concatenates `[B, *]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts.first().ok_or_else(|| shape_err("concat: no inputs".into()))?;
        let batch = self.value(*first).rows();
        let mut width = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != batch || t.shape().len() < 2 {
                return Err(shape_err(format!("concat: part {:?} vs batch {batch}", t.shape())));
            }
            width += t.row_len();
        }
        let mut data = Vec::with_capacity(batch * width);
        for r in 0..batch {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let req = parts.iter().any(|&p| self.req(p));
        self.push(Tensor::new(&[batch, width], data)?, Op::Concat(parts.to_vec()), req)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let y = self.value(x).clone().reshape(shape)?;
        let req = self.req(x);
        self.push(y, Op::Reshape(x), req)
    }

    /// Inverted dropout: identity outside training or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidRate(rate));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let y = Tensor::new(t.shape(), data)?;
        let req = self.req(x);
        self.push(y, Op::Dropout { x, mask }, req)
    }

    /// Batch normalization over the batch axis of `x: [B, F]`.
    ///
    /// With `stats = None` the batch mean and biased variance are used;
    /// otherwise the given running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<&NormStats>,
    ) -> Result<Var, NnError> {
        let t = self.value(x);
        let s = t.shape().to_vec();
        if s.len() != 2 || self.value(gamma).shape() != [s[1]] || self.value(beta).shape() != [s[1]] {
            return Err(shape_err(format!("batch_norm: x {s:?}")));
        }
        let (b, f) = (s[0], s[1]);
        let (mean, var) = match stats {
            Some(st) => {
                if st.mean.len() != f || st.var.len() != f {
                    return Err(shape_err("batch_norm: running stats width".into()));
                }
                (st.mean.clone(), st.var.clone())
            }
            None => batch_moments(t),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; b * f];
        let mut y = vec![0.0; b * f];
        for r in 0..b {
            for c in 0..f {
                let i = r * f + c;
                xhat[i] = (t.data()[i] - mean[c]) * inv_std[c];
                y[i] = g[c] * xhat[i] + be[c];
            }
        }
        let req = self.req(x) || self.req(gamma) || self.req(beta);
        self.push(
            Tensor::new(&s, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats.is_none(),
            },
            req,
        )
    }

    /// Per-sample cross entropy `-log softmax(logits)[target]`, shape `[B]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.rows() != targets.len() {
            return Err(shape_err(format!(
                "cross entropy: logits {:?} for {} targets",
                t.shape(),
                targets.len()
            )));
        }
        let c = t.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(shape_err(format!("cross entropy: target {bad} with {c} classes")));
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut loss = Vec::with_capacity(targets.len());
        for (r, &y) in targets.iter().enumerate() {
            let row = t.row(r);
            let lse = log_sum_exp(row);
            loss.push(lse - row[y]);
            probs.extend(row.iter().map(|&z| (z - lse).exp()));
        }
        let req = self.req(logits);
        self.push(
            Tensor::new(&[targets.len()], loss)?,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            req,
        )
    }

    /// Per-sample `Σ_d mask·(pred - target)²`, shape `[B]`.
    pub fn masked_sq_err(&mut self, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var, NnError> {
        let p = self.value(pred);
        p.check_same_shape(target, "masked_sq_err target")?;
        p.check_same_shape(mask, "masked_sq_err mask")?;
        let width = p.row_len();
        let loss: Vec<f64> = (0..p.rows())
            .map(|r| {
                let off = r * width;
                (0..width)
                    .map(|d| {
                        let e = p.data()[off + d] - target.data()[off + d];
                        mask.data()[off + d] * e * e
                    })
                    .sum()
            })
            .collect();
        let n = loss.len();
        let req = self.req(pred);
        self.push(
            Tensor::new(&[n], loss)?,
            Op::MaskedSqErr {
                pred,
                target: target.data().to_vec(),
                mask: mask.data().to_vec(),
            },
            req,
        )
    }

    /// `Σ wᵢ·xᵢ` over same-shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var, NnError> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| shape_err("weighted_sum: no terms".into()))?;
        let mut acc = Tensor::zeros(self.value(first).shape());
        for &(v, w) in terms {
            let t = self.value(v);
            acc.check_same_shape(t, "weighted_sum")?;
            for (a, x) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += w * x;
            }
        }
        let req = terms.iter().any(|&(v, _)| self.req(v));
        self.push(acc, Op::WeightedSum(terms.to_vec()), req)
    }

    /// Mean of all entries, as a `[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        let m = t.sum() / t.len() as f64;
        let req = self.req(x);
        self.push(Tensor::scalar(m), Op::Mean(x), req)
    }

    /// Elementwise mean of same-shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var, NnError> {
        let first = *xs.first().ok_or_else(|| shape_err("mean_of: no inputs".into()))?;
        let w = 1.0 / xs.len() as f64;
        let mut acc = Tensor::zeros(self.value(first).shape());
        for &v in xs {
            let t = self.value(v);
            acc.check_same_shape(t, "mean_of")?;
            for (a, x) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += x;
            }
        }
        acc.data_mut().iter_mut().for_each(|a| *a *= w);
        let req = xs.iter().any(|&v| self.req(v));
        self.push(acc, Op::MeanOf(xs.to_vec()), req)
    }

    /// Gradients of the scalar `loss` with respect to every parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(shape_err(format!("backward needs a scalar, got {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, g, &mut grads, &mut out)?;
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(
        &self,
        i: usize,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<(), NnError> {
        let y = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => out.entries.push((*id, g)),
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (batch, inp, outw) = (xt.rows(), xt.shape()[1], wt.shape()[0]);
                if self.req(*x) {
                    let mut dx = vec![0.0; batch * inp];
                    gemm(
                        batch,
                        outw,
                        inp,
                        1.0,
                        g.data(),
                        outw,
                        1,
                        wt.data(),
                        inp,
                        1,
                        0.0,
                        &mut dx,
                        inp,
                    );
                    self.accumulate(grads, *x, Tensor::new(xt.shape(), dx)?);
                }
                if self.req(*w) {
                    let mut dw = vec![0.0; outw * inp];
                    gemm(
                        outw,
                        batch,
                        inp,
                        1.0,
                        g.data(),
                        1,
                        outw,
                        xt.data(),
                        inp,
                        1,
                        0.0,
                        &mut dw,
                        inp,
                    );
                    self.accumulate(grads, *w, Tensor::new(wt.shape(), dw)?);
                }
                if let Some(b) = b {
                    if self.req(*b) {
                        let mut db = vec![0.0; outw];
                        for row in g.data().chunks_exact(outw) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::new(&[outw], db)?);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let (cw, ohw) = (geom.col_width(), geom.out_hw());
                let wt = self.value(*w);
                let per_sample = geom.out_c * ohw;
                if self.req(*w) {
                    let mut dw = vec![0.0; geom.out_c * cw];
                    for n in 0..geom.batch {
                        gemm(
                            geom.out_c,
                            ohw,
                            cw,
                            1.0,
                            &g.data()[n * per_sample..],
                            ohw,
                            1,
                            &cols[n * ohw * cw..],
                            cw,
                            1,
                            1.0,
                            &mut dw,
                            cw,
                        );
                    }
                    self.accumulate(grads, *w, Tensor::new(wt.shape(), dw)?);
                }
                if self.req(*b) {
                    let mut db = vec![0.0; geom.out_c];
                    for sample in g.data().chunks_exact(per_sample) {
                        for (oc, plane) in sample.chunks_exact(ohw).enumerate() {
                            db[oc] += plane.iter().sum::<f64>();
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(&[geom.out_c], db)?);
                }
                if self.req(*x) {
                    let mut dcols = vec![0.0; geom.batch * ohw * cw];
                    for n in 0..geom.batch {
                        gemm(
                            ohw,
                            geom.out_c,
                            cw,
                            1.0,
                            &g.data()[n * per_sample..],
                            1,
                            ohw,
                            wt.data(),
                            cw,
                            1,
                            0.0,
                            &mut dcols[n * ohw * cw..],
                            cw,
                        );
                    }
                    let dx = col2im(&dcols, geom);
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape(), dx)?);
                }
            }
            Op::AvgPool2 { x } => {
                let s = self.value(*x).shape().to_vec();
                let (oh, ow) = (s[2] / 2, s[3] / 2);
                let mut dx = vec![0.0; s.iter().product()];
                for (plane, gp) in dx.chunks_exact_mut(s[2] * s[3]).zip(g.data().chunks_exact(oh * ow)) {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = 0.25 * gp[i * ow + j];
                            let r0 = 2 * i * s[3] + 2 * j;
                            let r1 = r0 + s[3];
                            plane[r0] += v;
                            plane[r0 + 1] += v;
                            plane[r1] += v;
                            plane[r1 + 1] += v;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(&s, dx)?);
            }
            Op::Relu(x) => {
                let xt = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(xt.data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xt.shape(), d)?);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape(), d)?);
            }
            Op::Tanh(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &t)| g * (1.0 - t * t))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape(), d)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.req(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(g, v)| g * v).collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape(), d)?);
                }
                if self.req(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(g, v)| g * v).collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), d)?);
                }
            }
            Op::OneMinus(x) => self.accumulate(grads, *x, g.map(|v| -v)),
            Op::Concat(parts) => {
                let batch = y.rows();
                let width = y.row_len();
                let mut offset = 0;
                for &p in parts {
                    let pt = self.value(p);
                    let pw = pt.row_len();
                    if self.req(p) {
                        let mut d = Vec::with_capacity(batch * pw);
                        for r in 0..batch {
                            d.extend_from_slice(&g.data()[r * width + offset..r * width + offset + pw]);
                        }
                        self.accumulate(grads, p, Tensor::new(pt.shape(), d)?);
                    }
                    offset += pw;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.reshape(&shape)?);
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape(), d)?);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, f) = (y.rows(), y.shape()[1]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..b {
                    for c in 0..f {
                        let i = r * f + c;
                        dgamma[c] += g.data()[i] * xhat[i];
                        dbeta[c] += g.data()[i];
                    }
                }
                if self.req(*x) {
                    let mut dx = vec![0.0; b * f];
                    for c in 0..f {
                        let k = gam[c] * inv_std[c];
                        if *batch_stats {
                            // dx = γ/σ · (dy - mean(dy) - x̂·mean(dy·x̂))
                            let mean_dy = dbeta[c] / b as f64;
                            let mean_dyx = dgamma[c] / b as f64;
                            for r in 0..b {
                                let i = r * f + c;
                                dx[i] = k * (g.data()[i] - mean_dy - xhat[i] * mean_dyx);
                            }
                        } else {
                            for r in 0..b {
                                let i = r * f + c;
                                dx[i] = k * g.data()[i];
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(y.shape(), dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::new(&[f], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(&[f], dbeta)?);
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let c = probs.len() / targets.len();
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] -= 1.0;
                    let gr = g.data()[r];
                    d[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= gr);
                }
                self.accumulate(grads, *logits, Tensor::new(&[targets.len(), c], d)?);
            }
            Op::MaskedSqErr { pred, target, mask } => {
                let pt = self.value(*pred);
                let width = pt.row_len();
                let d = (0..pt.len())
                    .map(|i| 2.0 * mask[i] * (pt.data()[i] - target[i]) * g.data()[i / width])
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(pt.shape(), d)?);
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.accumulate(grads, v, g.map(|x| w * x));
                }
            }
            Op::MeanOf(xs) => {
                let w = 1.0 / xs.len() as f64;
                for &v in xs {
                    self.accumulate(grads, v, g.map(|x| w * x));
                }
            }
            Op::Mean(x) => {
                let xt = self.value(*x);
                let v = g.item() / xt.len() as f64;
                self.accumulate(grads, *x, Tensor::full(xt.shape(), v));
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "input",
        Op::Param(_) => "param",
        Op::Linear { .. } => "linear",
        Op::Conv2d { .. } => "conv2d",
        Op::AvgPool2 { .. } => "avg_pool2",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::OneMinus(_) => "one_minus",
        Op::Concat(_) => "concat",
        Op::Reshape(_) => "reshape",
        Op::Dropout { .. } => "dropout",
        Op::BatchNorm { .. } => "batch_norm",
        Op::SoftmaxCe { .. } => "softmax_cross_entropy",
        Op::MaskedSqErr { .. } => "masked_sq_err",
        Op::WeightedSum(_) => "weighted_sum",
        Op::Mean(_) => "mean",
        Op::MeanOf(_) => "mean_of",
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// Per-feature mean and biased variance over the batch axis.
pub(crate) fn batch_moments(t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (b, f) = (t.rows(), t.row_len());
    let mut mean = vec![0.0; f];
    for r in 0..b {
        for (m, v) in mean.iter_mut().zip(t.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; f];
    for r in 0..b {
        for ((s, v), m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= b as f64);
    (mean, var)
}

/// Rows indexed by `(sample, out_y, out_x)`, columns by `(channel, ky, kx)`.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cw = g.col_width();
    let mut cols = vec![0.0; g.batch * g.out_hw() * cw];
    let plane = g.in_h * g.in_w;
    for n in 0..g.batch {
        let xs = &x[n * g.in_c * plane..(n + 1) * g.in_c * plane];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &mut cols[((n * g.out_h + oy) * g.out_w + ox) * cw..][..cw];
                let mut col = 0;
                for c in 0..g.in_c {
                    for ky in 0..g.kernel {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..g.kernel {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                row[col] = xs[c * plane + iy as usize * g.in_w + ix as usize];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cw = g.col_width();
    let plane = g.in_h * g.in_w;
    let mut x = vec![0.0; g.batch * g.in_c * plane];
    for n in 0..g.batch {
        let xs = &mut x[n * g.in_c * plane..(n + 1) * g.in_c * plane];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = &cols[((n * g.out_h + oy) * g.out_w + ox) * cw..][..cw];
                let mut col = 0;
                for c in 0..g.in_c {
                    for ky in 0..g.kernel {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..g.kernel {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                xs[c * plane + iy as usize * g.in_w + ix as usize] += row[col];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    x
}
