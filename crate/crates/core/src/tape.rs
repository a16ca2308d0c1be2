//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! as leaves that point back into a storage slice; `backward` returns the
//! gradient of a scalar node with respect to every trainable storage that
//! participated. A storage referenced several times (shared weights) simply
//! accumulates all of its contributions.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{gemm, PatchGeometry};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Probabilities fed to a discriminator log-loss are clamped to
/// `[DISC_EPS, 1 - DISC_EPS]`.
pub const DISC_EPS: f64 = 1e-6;
/// Softmax probabilities are clamped from below at `SOFTMAX_EPS` before logs.
pub const SOFTMAX_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Input,
    Param(usize),
    Add(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
    Scale(Var, f64),
    Reshape(Var),
    LeakyRelu(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geo: PatchGeometry,
        cols: Option<Vec<f64>>,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Var,
        geo: PatchGeometry,
    },
    KlUnit(Var),
    MeanAbsDiff(Var, Var),
    LogProb {
        logits: Var,
        real: bool,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    SoftmaxKl {
        p: Var,
        q: Var,
    },
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Gradients keyed by parameter storage index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, storage: usize) -> Option<&Tensor> {
        self.map.get(&storage)
    }

    pub fn insert(&mut self, storage: usize, grad: Tensor) {
        match self.map.get_mut(&storage) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.map.insert(storage, grad);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn merge(&mut self, other: Gradients) {
        for (k, v) in other.map {
            self.insert(k, v);
        }
    }
}

pub struct Tape<'p> {
    params: &'p [Tensor],
    trainable: &'p [bool],
    nodes: Vec<Node>,
    param_leaves: BTreeMap<usize, Var>,
    memo: BTreeMap<(u32, Var), Var>,
}

fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = libm::exp(l - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of a `[batch, classes]` tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let n = logits.item_len();
    let mut out = Tensor::zeros(logits.shape());
    for (row, o) in logits.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        softmax_row(row, o);
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn bias_rows(out: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += *b;
        }
    }
}

fn column_sums(g: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for row in g.chunks(n) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += *b;
        }
    }
    s
}

impl<'p> Tape<'p> {
    /// `trainable[i]` says whether storage `i` collects gradients.
    pub fn new(params: &'p [Tensor], trainable: &'p [bool]) -> Self {
        assert_eq!(params.len(), trainable.len());
        Self {
            params,
            trainable,
            nodes: Vec::new(),
            param_leaves: BTreeMap::new(),
            memo: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => &self.params[*id],
            (_, Some(t)) => t,
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn memo(&self, key: u32, input: Var) -> Option<Var> {
        self.memo.get(&(key, input)).copied()
    }

    pub fn set_memo(&mut self, key: u32, input: Var, output: Var) {
        self.memo.insert((key, input), output);
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Input, value, false)
    }

    pub fn param(&mut self, storage: usize) -> Var {
        if let Some(v) = self.param_leaves.get(&storage) {
            return *v;
        }
        self.nodes.push(Node {
            op: Op::Param(storage),
            value: None,
            requires_grad: self.trainable[storage],
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(storage, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                expected: va.shape().to_vec(),
                actual: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        let rg = terms.iter().any(|(v, w)| *w != 0.0 && self.requires_grad(*v));
        self.push(Op::WeightedSum(terms.to_vec()), Tensor::scalar(total), rg)
    }

    /// Elementwise `factor * x`.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| factor * v);
        let rg = factor != 0.0 && self.requires_grad(x);
        self.push(Op::Scale(x, factor), out, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(Op::Reshape(x), out, rg))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(leaky);
        let rg = self.requires_grad(x);
        self.push(Op::LeakyRelu(x), out, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(libm::tanh);
        let rg = self.requires_grad(x);
        self.push(Op::Tanh(x), out, rg)
    }

    /// `x [B, in] * w [in, out] + b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (rows, inp) = (vx.batch(), vx.item_len());
        let out_n = vb.len();
        if vw.len() != inp * out_n {
            return Err(Error::Shape {
                expected: vec![inp, out_n],
                actual: vw.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; rows * out_n];
        gemm(rows, inp, out_n, vx.data(), false, vw.data(), false, 0.0, &mut out);
        bias_rows(&mut out, vb.data());
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        let t = Tensor::from_vec(&[rows, out_n], out)?;
        Ok(self.push(Op::Linear { x, w, b }, t, rg))
    }

    /// Strided convolution of an NHWC batch; `w` has shape
    /// `[kernel, kernel, in_channels, out_channels]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let [bs, h, wd, cin] = dims4(vx)?;
        let ws = vw.shape();
        if ws.len() != 4 || ws[2] != cin || ws[0] != ws[1] {
            return Err(Error::Shape {
                expected: vec![ws.first().copied().unwrap_or(0), ws.first().copied().unwrap_or(0), cin, vb.len()],
                actual: ws.to_vec(),
            });
        }
        let (k, cout) = (ws[0], ws[3]);
        let geo = PatchGeometry::conv(bs, h, wd, cin, k, stride, pad);
        let cols = geo.gather(vx.data());
        let rows = geo.rows();
        let mut out = vec![0.0; rows * cout];
        gemm(rows, geo.patch_len(), cout, &cols, false, vw.data(), false, 0.0, &mut out);
        bias_rows(&mut out, vb.data());
        let t = Tensor::from_vec(&[bs, geo.small_h, geo.small_w, cout], out)?;
        let w_grad = self.requires_grad(w);
        let rg = self.requires_grad(x) || w_grad || self.requires_grad(b);
        let cols = if w_grad { Some(cols) } else { None };
        Ok(self.push(Op::Conv { x, w, b, geo, cols }, t, rg))
    }

    /// Transposed convolution of an NHWC batch; `w` has shape
    /// `[in_channels, kernel, kernel, out_channels]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let [bs, h, wd, cin] = dims4(vx)?;
        let ws = vw.shape();
        if ws.len() != 4 || ws[0] != cin || ws[1] != ws[2] {
            return Err(Error::Shape {
                expected: vec![cin, 0, 0, vb.len()],
                actual: ws.to_vec(),
            });
        }
        let (k, cout) = (ws[1], ws[3]);
        let geo = PatchGeometry::transposed(bs, h, wd, cout, k, stride, pad);
        let rows = geo.rows();
        let mut cols = vec![0.0; rows * geo.patch_len()];
        gemm(rows, cin, geo.patch_len(), vx.data(), false, vw.data(), false, 0.0, &mut cols);
        let mut out = vec![0.0; geo.large_len()];
        geo.scatter(&cols, &mut out);
        bias_rows(&mut out, vb.data());
        let t = Tensor::from_vec(&[bs, geo.large_h, geo.large_w, cout], out)?;
        let rg = self.requires_grad(x) || self.requires_grad(w) || self.requires_grad(b);
        Ok(self.push(Op::ConvTranspose { x, w, b, geo }, t, rg))
    }

    /// Batch mean of `0.5 * |mu|^2`, the KL divergence of `N(mu, I)` from
    /// `N(0, I)`.
    pub fn kl_unit(&mut self, mu: Var) -> Var {
        let v = self.value(mu);
        let b = v.batch().max(1) as f64;
        let val = 0.5 * v.sq_norm() / b;
        let rg = self.requires_grad(mu);
        self.push(Op::KlUnit(mu), Tensor::scalar(val), rg)
    }

    /// Mean absolute difference over all elements.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                expected: va.shape().to_vec(),
                actual: vb.shape().to_vec(),
            });
        }
        let n = va.len().max(1) as f64;
        let val = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::MeanAbsDiff(a, b), Tensor::scalar(val), rg))
    }

    /// `-mean log p` (`real`) or `-mean log (1 - p)` with `p` the clamped
    /// sigmoid of each logit.
    pub fn log_prob_loss(&mut self, logits: Var, real: bool) -> Var {
        let v = self.value(logits);
        let n = v.len().max(1) as f64;
        let val = v
            .data()
            .iter()
            .map(|&l| {
                let p = sigmoid(l).clamp(DISC_EPS, 1.0 - DISC_EPS);
                -libm::log(if real { p } else { 1.0 - p })
            })
            .sum::<f64>()
            / n;
        let rg = self.requires_grad(logits);
        self.push(Op::LogProb { logits, real }, Tensor::scalar(val), rg)
    }

    /// Batch mean of `-log max(softmax(logits)[y], SOFTMAX_EPS)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let classes = v.item_len();
        if v.batch() != labels.len() {
            return Err(Error::Shape {
                expected: vec![labels.len(), classes],
                actual: v.shape().to_vec(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        let p = softmax(v);
        let val = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -libm::log(p.item(i)[y].max(SOFTMAX_EPS)))
            .sum::<f64>()
            / labels.len().max(1) as f64;
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(val),
            rg,
        ))
    }

    /// Batch mean of `KL(softmax(p) || softmax(q))` with both distributions
    /// clamped from below at `SOFTMAX_EPS`.
    pub fn softmax_kl(&mut self, p: Var, q: Var) -> Result<Var> {
        let (vp, vq) = (self.value(p), self.value(q));
        if vp.shape() != vq.shape() {
            return Err(Error::Shape {
                expected: vp.shape().to_vec(),
                actual: vq.shape().to_vec(),
            });
        }
        let (sp, sq) = (softmax(vp), softmax(vq));
        let n = vp.item_len();
        let mut total = 0.0;
        for (rp, rq) in sp.data().chunks(n).zip(sq.data().chunks(n)) {
            for (&a, &b) in rp.iter().zip(rq) {
                let (a, b) = (a.max(SOFTMAX_EPS), b.max(SOFTMAX_EPS));
                total += a * (libm::log(a) - libm::log(b));
            }
        }
        let val = total / vp.batch().max(1) as f64;
        let rg = self.requires_grad(p) || self.requires_grad(q);
        Ok(self.push(Op::SoftmaxKl { p, q }, Tensor::scalar(val), rg))
    }

    /// Gradient of scalar `loss` with respect to every trainable storage
    /// that influenced it.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut out = Gradients::new();
        if !self.requires_grad(loss) {
            return out;
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.insert(*id, g),
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, || g.clone());
                    self.accumulate(&mut grads, *b, || g);
                }
                Op::WeightedSum(terms) => {
                    let s = g.data()[0];
                    for (v, w) in terms {
                        self.accumulate(&mut grads, *v, || Tensor::scalar(s * w));
                    }
                }
                Op::Scale(x, f) => {
                    self.accumulate(&mut grads, *x, || g.map(|v| f * v));
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    self.accumulate(&mut grads, *x, || g.reshape(&shape).expect("reshape grad"));
                }
                Op::LeakyRelu(x) => {
                    let vx = self.value(*x);
                    self.accumulate(&mut grads, *x, || {
                        let mut d = g;
                        for (dv, &xv) in d.data_mut().iter_mut().zip(vx.data()) {
                            if xv <= 0.0 {
                                *dv *= LEAKY_SLOPE;
                            }
                        }
                        d
                    });
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("tanh value");
                    self.accumulate(&mut grads, *x, || {
                        let mut d = g;
                        for (dv, &yv) in d.data_mut().iter_mut().zip(y.data()) {
                            *dv *= 1.0 - yv * yv;
                        }
                        d
                    });
                }
                Op::Linear { x, w, b } => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    let (rows, inp) = (vx.batch(), vx.item_len());
                    let out_n = g.item_len();
                    self.accumulate(&mut grads, *w, || {
                        let mut dw = vec![0.0; inp * out_n];
                        gemm(inp, rows, out_n, vx.data(), true, g.data(), false, 0.0, &mut dw);
                        Tensor::from_vec(vw.shape(), dw).expect("linear dw")
                    });
                    self.accumulate(&mut grads, *b, || {
                        Tensor::from_vec(&[out_n], column_sums(g.data(), out_n)).expect("linear db")
                    });
                    self.accumulate(&mut grads, *x, || {
                        let mut dx = vec![0.0; rows * inp];
                        gemm(rows, out_n, inp, g.data(), false, vw.data(), true, 0.0, &mut dx);
                        Tensor::from_vec(vx.shape(), dx).expect("linear dx")
                    });
                }
                Op::Conv { x, w, b, geo, cols } => {
                    let vw = self.value(*w);
                    let cout = vw.shape()[3];
                    let (rows, plen) = (geo.rows(), geo.patch_len());
                    if let Some(cols) = cols {
                        self.accumulate(&mut grads, *w, || {
                            let mut dw = vec![0.0; plen * cout];
                            gemm(plen, rows, cout, cols, true, g.data(), false, 0.0, &mut dw);
                            Tensor::from_vec(vw.shape(), dw).expect("conv dw")
                        });
                    }
                    self.accumulate(&mut grads, *b, || {
                        Tensor::from_vec(&[cout], column_sums(g.data(), cout)).expect("conv db")
                    });
                    self.accumulate(&mut grads, *x, || {
                        let mut dcols = vec![0.0; rows * plen];
                        gemm(rows, cout, plen, g.data(), false, vw.data(), true, 0.0, &mut dcols);
                        let mut dx = vec![0.0; geo.large_len()];
                        geo.scatter(&dcols, &mut dx);
                        Tensor::from_vec(self.value(*x).shape(), dx).expect("conv dx")
                    });
                }
                Op::ConvTranspose { x, w, b, geo } => {
                    let (vx, vw) = (self.value(*x), self.value(*w));
                    let cin = vw.shape()[0];
                    let (rows, plen) = (geo.rows(), geo.patch_len());
                    let dcols = geo.gather(g.data());
                    self.accumulate(&mut grads, *w, || {
                        let mut dw = vec![0.0; cin * plen];
                        gemm(cin, rows, plen, vx.data(), true, &dcols, false, 0.0, &mut dw);
                        Tensor::from_vec(vw.shape(), dw).expect("deconv dw")
                    });
                    self.accumulate(&mut grads, *b, || {
                        Tensor::from_vec(&[geo.channels], column_sums(g.data(), geo.channels)).expect("deconv db")
                    });
                    self.accumulate(&mut grads, *x, || {
                        let mut dx = vec![0.0; rows * cin];
                        gemm(rows, plen, cin, &dcols, false, vw.data(), true, 0.0, &mut dx);
                        Tensor::from_vec(vx.shape(), dx).expect("deconv dx")
                    });
                }
                Op::KlUnit(mu) => {
                    let s = g.data()[0];
                    let v = self.value(*mu);
                    let b = v.batch().max(1) as f64;
                    self.accumulate(&mut grads, *mu, || v.map(|m| s * m / b));
                }
                Op::MeanAbsDiff(a, b) => {
                    let s = g.data()[0];
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let n = va.len().max(1) as f64;
                    let sign = |d: f64| {
                        if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    };
                    let da: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| s * sign(x - y) / n).collect();
                    if self.requires_grad(*b) {
                        let db = Tensor::from_vec(vb.shape(), da.iter().map(|v| -v).collect()).expect("l1 db");
                        self.accumulate(&mut grads, *b, || db);
                    }
                    self.accumulate(&mut grads, *a, || Tensor::from_vec(va.shape(), da).expect("l1 da"));
                }
                Op::LogProb { logits, real } => {
                    let s = g.data()[0];
                    let v = self.value(*logits);
                    let n = v.len().max(1) as f64;
                    self.accumulate(&mut grads, *logits, || {
                        v.map(|l| {
                            let p = sigmoid(l);
                            if p <= DISC_EPS || p >= 1.0 - DISC_EPS {
                                0.0
                            } else if *real {
                                -s * (1.0 - p) / n
                            } else {
                                s * p / n
                            }
                        })
                    });
                }
                Op::CrossEntropy { logits, labels } => {
                    let s = g.data()[0];
                    let v = self.value(*logits);
                    self.accumulate(&mut grads, *logits, || {
                        let mut p = softmax(v);
                        let classes = v.item_len();
                        let bn = labels.len().max(1) as f64;
                        for (row, &y) in p.data_mut().chunks_mut(classes).zip(labels) {
                            if row[y] > SOFTMAX_EPS {
                                row[y] -= 1.0;
                                for r in row.iter_mut() {
                                    *r *= s / bn;
                                }
                            } else {
                                row.fill(0.0);
                            }
                        }
                        p
                    });
                }
                Op::SoftmaxKl { p, q } => {
                    let s = g.data()[0];
                    let (vp, vq) = (self.value(*p), self.value(*q));
                    let (sp, sq) = (softmax(vp), softmax(vq));
                    let n = vp.item_len();
                    let bn = vp.batch().max(1) as f64;
                    let mut dp = Tensor::zeros(vp.shape());
                    let mut dq = Tensor::zeros(vq.shape());
                    for r in 0..vp.batch() {
                        let (rp, rq) = (sp.item(r), sq.item(r));
                        let mut gp = vec![0.0; n];
                        let mut gq = vec![0.0; n];
                        for k in 0..n {
                            let (a, b) = (rp[k].max(SOFTMAX_EPS), rq[k].max(SOFTMAX_EPS));
                            if rp[k] > SOFTMAX_EPS {
                                gp[k] = libm::log(a) - libm::log(b) + 1.0;
                            }
                            if rq[k] > SOFTMAX_EPS {
                                gq[k] = -a / b;
                            }
                        }
                        softmax_backward(rp, &gp, &mut dp.data_mut()[r * n..(r + 1) * n], s / bn);
                        softmax_backward(rq, &gq, &mut dq.data_mut()[r * n..(r + 1) * n], s / bn);
                    }
                    self.accumulate(&mut grads, *p, || dp);
                    self.accumulate(&mut grads, *q, || dq);
                }
            }
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = make();
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

fn softmax_backward(p: &[f64], g: &[f64], out: &mut [f64], scale: f64) {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &pj), &gj) in out.iter_mut().zip(p).zip(g) {
        *o = scale * pj * (gj - dot);
    }
}

fn dims4(t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Shape {
            expected: vec![0, 0, 0, 0],
            actual: t.shape().to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(shape: &[usize], salt: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| libm::sin(1.7 * i as f64 + salt) * 0.9).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn loss_of(params: &[Tensor], f: &dyn Fn(&mut Tape) -> Result<Var>) -> f64 {
        let trainable = vec![true; params.len()];
        let mut t = Tape::new(params, &trainable);
        let l = f(&mut t).unwrap();
        t.scalar(l)
    }

    fn assert_gradients(params: Vec<Tensor>, f: &dyn Fn(&mut Tape) -> Result<Var>) {
        let trainable = vec![true; params.len()];
        let grads = {
            let mut t = Tape::new(&params, &trainable);
            let l = f(&mut t).unwrap();
            t.backward(l)
        };
        let h = 1e-6;
        for (s, p) in params.iter().enumerate() {
            let analytic = grads.get(s).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()));
            for i in 0..p.len() {
                let mut plus = params.clone();
                plus[s].data_mut()[i] += h;
                let mut minus = params.clone();
                minus[s].data_mut()[i] -= h;
                let numeric = (loss_of(&plus, f) - loss_of(&minus, f)) / (2.0 * h);
                let a = analytic.data()[i];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "storage {s} element {i}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    fn squared(t: &mut Tape, y: Var) -> Result<Var> {
        let n = t.value(y).len();
        let flat = t.reshape(y, &[1, n])?;
        Ok(t.kl_unit(flat))
    }

    #[test]
    fn elementwise_ops() {
        assert_gradients(vec![filled(&[2, 3], 0.3), filled(&[2, 3], 1.1)], &|t| {
            let (a, b) = (t.param(0), t.param(1));
            let s = t.add(a, b)?;
            let s = t.scale(s, -1.5);
            let r = t.leaky_relu(s);
            let y = t.tanh(r);
            squared(t, y)
        });
    }

    #[test]
    fn linear_layer() {
        assert_gradients(vec![filled(&[3, 4], 0.2), filled(&[4, 2], 0.7), filled(&[2], 2.0)], &|t| {
            let (x, w, b) = (t.param(0), t.param(1), t.param(2));
            let y = t.linear(x, w, b)?;
            squared(t, y)
        });
    }

    #[test]
    fn strided_convolution() {
        for (k, stride, pad) in [(3, 1, 1), (4, 2, 1), (3, 2, 0)] {
            assert_gradients(
                vec![filled(&[2, 5, 6, 2], 0.1), filled(&[k, k, 2, 3], 0.4), filled(&[3], 0.9)],
                &move |t| {
                    let (x, w, b) = (t.param(0), t.param(1), t.param(2));
                    let y = t.conv2d(x, w, b, stride, pad)?;
                    squared(t, y)
                },
            );
        }
    }

    #[test]
    fn transposed_convolution() {
        for (k, stride, pad) in [(4, 2, 1), (3, 1, 1)] {
            assert_gradients(
                vec![filled(&[2, 3, 2, 2], 0.5), filled(&[2, k, k, 3], 1.3), filled(&[3], 0.2)],
                &move |t| {
                    let (x, w, b) = (t.param(0), t.param(1), t.param(2));
                    let y = t.conv_transpose2d(x, w, b, stride, pad)?;
                    squared(t, y)
                },
            );
        }
    }

    #[test]
    fn scalar_losses() {
        assert_gradients(vec![filled(&[3, 4], 0.3), filled(&[3, 4], 2.1)], &|t| {
            let (a, b) = (t.param(0), t.param(1));
            let l1 = t.mean_abs_diff(a, b)?;
            let real = t.log_prob_loss(a, true);
            let fake = t.log_prob_loss(b, false);
            let ce = t.cross_entropy(a, &[0, 3, 1])?;
            let kl = t.softmax_kl(a, b)?;
            Ok(t.weighted_sum(&[(l1, 0.5), (real, 1.0), (fake, 2.0), (ce, 1.0), (kl, 3.0)]))
        });
    }

    #[test]
    fn shared_leaf_accumulates() {
        assert_gradients(vec![filled(&[2, 3], 0.8)], &|t| {
            let a = t.param(0);
            let b = t.param(0);
            let y = t.add(a, b)?;
            let y = t.tanh(y);
            squared(t, y)
        });
    }
}
