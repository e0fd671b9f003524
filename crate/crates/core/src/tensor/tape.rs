//! Define-by-run reverse-mode tape.
//!
//! Every op appends a node holding its output value plus whatever it needs
//! for the backward pass. Parameter nodes borrow their data from the
//! [`ParamStore`] for the lifetime of the tape, so a step never copies the
//! weights.

use std::borrow::Cow;

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

const GROUP_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    ChannelBias { input: Var, bias: Var, per_sample: bool, n: usize, c: usize, inner: usize },
    BroadcastAdd { input: Var, other: Var },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Linear { input: Var, weight: Var, bias: Var, n: usize, f: usize, o: usize },
    Gelu { input: Var },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    Reshape { input: Var },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
        n: usize,
        c: usize,
        inner: usize,
    },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, k: usize },
    Mse { pred: Var, target: Var },
    WeightedSum { input: Var, coeffs: Vec<f64> },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf or parameter node.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(move |&(id, node)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

fn dim_err(op: &str, msg: String) -> Error {
    Error::Dimension(format!("{op}: {msg}"))
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("tape holds valid shapes")
    }

    /// First element of a node; meant for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool, what: &str) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(what.to_string()));
        }
        self.nodes.push(Node { shape, value: Cow::Owned(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Data that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node { shape, value: Cow::Owned(t.into_data()), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked (used for input-gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node { shape, value: Cow::Owned(t.into_data()), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A parameter borrowed from the store.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Param(id),
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Cross-correlation of `[N,C,H,W]` with `[K,C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(dim_err("conv2d", format!("input {xs:?} vs kernel {ks:?}")));
        }
        let ho = kernels::conv2d_output_extent(xs[2], ks[2], stride.0, padding.0);
        let wo = kernels::conv2d_output_extent(xs[3], ks[3], stride.1, padding.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(dim_err(
                "conv2d",
                format!("kernel {ks:?} does not fit input {xs:?} with padding {padding:?} and stride {stride:?}"),
            ));
        };
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            k: ks[0],
            kh: ks[2],
            kw: ks[3],
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
            ho,
            wo,
        };
        let out = kernels::conv2d_forward(&geom, self.value(input), self.value(kernel));
        let rg = self.grad_of(&[input, kernel]);
        self.push(vec![geom.n, geom.k, ho, wo], out, Op::Conv2d { input, kernel, geom }, rg, "conv2d")
    }

    /// Adds `bias[c]` (shape `[C]`) to every element of channel `c` of `[N,C,...]`.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        self.channel_bias(input, bias, false)
    }

    /// Adds `bias[n, c]` (shape `[N,C]`) to channel `c` of sample `n`.
    pub fn add_sample_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        self.channel_bias(input, bias, true)
    }

    fn channel_bias(&mut self, input: Var, bias: Var, per_sample: bool) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let bs = self.shape(bias).to_vec();
        let ok = xs.len() >= 2
            && if per_sample { bs == [xs[0], xs[1]] } else { bs == [xs[1]] };
        if !ok {
            return Err(dim_err("channel_bias", format!("input {xs:?} vs bias {bs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let b = self.value(bias);
        let mut out = self.value(input).to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let bv = if per_sample { b[ni * c + ci] } else { b[ci] };
                out[(ni * c + ci) * inner..][..inner].iter_mut().for_each(|v| *v += bv);
            }
        }
        let rg = self.grad_of(&[input, bias]);
        self.push(xs, out, Op::ChannelBias { input, bias, per_sample, n, c, inner }, rg, "channel_bias")
    }

    /// `input[n, ...] + other[...]` for every sample `n`.
    pub fn add_broadcast(&mut self, input: Var, other: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let os = self.shape(other).to_vec();
        if xs.len() < 2 || xs[1..] != os[..] {
            return Err(dim_err("add_broadcast", format!("input {xs:?} vs {os:?}")));
        }
        let o = self.value(other);
        let mut out = self.value(input).to_vec();
        for chunk in out.chunks_mut(o.len()) {
            chunk.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        let rg = self.grad_of(&[input, other]);
        self.push(xs, out, Op::BroadcastAdd { input, other }, rg, "add_broadcast")
    }

    pub fn maxpool2d(&mut self, input: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(dim_err("maxpool2d", format!("expected NCHW input, got {xs:?}")));
        }
        let ho = kernels::pool_output_extent(xs[2], kernel.0, stride.0);
        let wo = kernels::pool_output_extent(xs[3], kernel.1, stride.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(dim_err("maxpool2d", format!("kernel {kernel:?} larger than input {xs:?}")));
        };
        let geom = PoolGeom {
            nc: xs[0] * xs[1],
            h: xs[2],
            w: xs[3],
            kh: kernel.0,
            kw: kernel.1,
            sh: stride.0,
            sw: stride.1,
            ho,
            wo,
        };
        let (out, argmax) = kernels::maxpool_forward(&geom, self.value(input));
        let rg = self.grad_of(&[input]);
        self.push(vec![xs[0], xs[1], ho, wo], out, Op::MaxPool2d { input, argmax }, rg, "maxpool2d")
    }

    /// `input [N,F] · weightᵀ [F,O] + bias [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(dim_err("linear", format!("input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(self.value(bias));
        }
        gemm(n, f, o, 1.0, self.value(input), false, self.value(weight), true, 1.0, &mut out);
        let rg = self.grad_of(&[input, weight, bias]);
        self.push(vec![n, o], out, Op::Linear { input, weight, bias, n, f, o }, rg, "linear")
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).iter().map(|&x| x * std_normal_cdf(x)).collect();
        let rg = self.grad_of(&[input]);
        self.push(self.shape(input).to_vec(), out, Op::Gelu { input }, rg, "gelu")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.grad_of(&[a, b]);
        self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, rg, "add")
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let out = self.value(input).iter().map(|x| x * factor).collect();
        let rg = self.grad_of(&[input]);
        self.push(self.shape(input).to_vec(), out, Op::Scale { input, factor }, rg, "scale")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(input).len() {
            return Err(dim_err("reshape", format!("{:?} into {shape:?}", self.shape(input))));
        }
        let out = self.value(input).to_vec();
        let rg = self.grad_of(&[input]);
        self.push(shape.to_vec(), out, Op::Reshape { input }, rg, "reshape")
    }

    /// Flattens everything after the batch axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    /// Group normalization over `[N,C,...]` with per-channel affine.
    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 || groups == 0 || !xs[1].is_multiple_of(groups) {
            return Err(dim_err("group_norm", format!("input {xs:?} with {groups} groups")));
        }
        let (n, c) = (xs[0], xs[1]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err(
                "group_norm",
                format!("affine {:?}/{:?} for {c} channels", self.shape(gamma), self.shape(beta)),
            ));
        }
        let inner: usize = xs[2..].iter().product();
        let cpg = c / groups;
        let len = cpg * inner;
        let x = self.value(input);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; n * groups];
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for gi in 0..groups {
                let start = (ni * c + gi * cpg) * inner;
                let seg = &x[start..start + len];
                let mean = seg.iter().sum::<f64>() / len as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
                let r = 1.0 / (var + GROUP_NORM_EPS).sqrt();
                rstd[ni * groups + gi] = r;
                for (j, &v) in seg.iter().enumerate() {
                    let ch = gi * cpg + j / inner;
                    let h = (v - mean) * r;
                    xhat[start + j] = h;
                    out[start + j] = g[ch] * h + b[ch];
                }
            }
        }
        let rg = self.grad_of(&[input, gamma, beta]);
        self.push(
            xs,
            out,
            Op::GroupNorm { input, gamma, beta, groups, xhat, rstd, n, c, inner },
            rg,
            "group_norm",
        )
    }

    /// Mean negative log-softmax of the labelled class, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(dim_err("cross_entropy", format!("logits {ls:?} for {} labels", labels.len())));
        }
        let (n, k) = (ls[0], ls[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Validation(format!("label {bad} out of range for {k} classes")));
        }
        let z = self.value(logits);
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.grad_of(&[logits]);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs, k };
        self.push(vec![1], vec![total / n as f64], op, rg, "cross_entropy")
    }

    /// Mean squared difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(dim_err("mse", format!("{:?} vs {:?}", self.shape(pred), self.shape(target))));
        }
        let p = self.value(pred);
        let t = self.value(target);
        let s = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let rg = self.grad_of(&[pred, target]);
        self.push(vec![1], vec![s], Op::Mse { pred, target }, rg, "mse")
    }

    /// `Σ input[i] · coeffs[i]`, a scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, input: Var, coeffs: &[f64]) -> Result<Var> {
        if coeffs.len() != self.value(input).len() {
            return Err(dim_err(
                "weighted_sum",
                format!("{} coefficients for shape {:?}", coeffs.len(), self.shape(input)),
            ));
        }
        let s = self.value(input).iter().zip(coeffs).map(|(a, b)| a * b).sum();
        let rg = self.grad_of(&[input]);
        self.push(vec![1], vec![s], Op::WeightedSum { input, coeffs: coeffs.to_vec() }, rg, "weighted_sum")
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if let Op::Param(id) = node.op {
                params.push((id, i));
            }
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    if !g.iter().all(|v| v.is_finite()) {
                        return Err(Error::NonFinite("backward".into()));
                    }
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { input, kernel, geom } => {
                    let (dx, dk) = kernels::conv2d_backward(
                        geom,
                        self.value(*input),
                        self.value(*kernel),
                        &g,
                        wants(*input),
                        wants(*kernel),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if let Some(dk) = dk {
                        accumulate(&mut grads[kernel.0], dk);
                    }
                }
                Op::ChannelBias { input, bias, per_sample, n, c, inner } => {
                    if wants(*bias) {
                        let mut db = vec![0.0; if *per_sample { n * c } else { *c }];
                        for ni in 0..*n {
                            for ci in 0..*c {
                                let s: f64 = g[(ni * c + ci) * inner..][..*inner].iter().sum();
                                db[if *per_sample { ni * c + ci } else { ci }] += s;
                            }
                        }
                        accumulate(&mut grads[bias.0], db);
                    }
                    if wants(*input) {
                        accumulate(&mut grads[input.0], g.clone());
                    }
                }
                Op::BroadcastAdd { input, other } => {
                    if wants(*other) {
                        let len = self.value(*other).len();
                        let mut d = vec![0.0; len];
                        for chunk in g.chunks(len) {
                            d.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                        }
                        accumulate(&mut grads[other.0], d);
                    }
                    if wants(*input) {
                        accumulate(&mut grads[input.0], g.clone());
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    if wants(*input) {
                        let mut dx = vec![0.0; self.value(*input).len()];
                        for (&src, &gv) in argmax.iter().zip(&g) {
                            dx[src] += gv;
                        }
                        accumulate(&mut grads[input.0], dx);
                    }
                }
                Op::Linear { input, weight, bias, n, f, o } => {
                    let (n, f, o) = (*n, *f, *o);
                    if wants(*input) {
                        let mut dx = vec![0.0; n * f];
                        gemm(n, o, f, 1.0, &g, false, self.value(*weight), false, 0.0, &mut dx);
                        accumulate(&mut grads[input.0], dx);
                    }
                    if wants(*weight) {
                        let mut dw = vec![0.0; o * f];
                        gemm(o, n, f, 1.0, &g, true, self.value(*input), false, 0.0, &mut dw);
                        accumulate(&mut grads[weight.0], dw);
                    }
                    if wants(*bias) {
                        let mut db = vec![0.0; o];
                        for row in g.chunks(o) {
                            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        accumulate(&mut grads[bias.0], db);
                    }
                }
                Op::Gelu { input } => {
                    let dx = self
                        .value(*input)
                        .iter()
                        .zip(&g)
                        .map(|(&x, &gv)| gv * (std_normal_cdf(x) + x * std_normal_pdf(x)))
                        .collect();
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Add { a, b } => {
                    if wants(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads[input.0], g.iter().map(|v| v * factor).collect());
                }
                Op::Reshape { input } => {
                    accumulate(&mut grads[input.0], g.clone());
                }
                Op::GroupNorm { input, gamma, beta, groups, xhat, rstd, n, c, inner } => {
                    let (n, c, inner, groups) = (*n, *c, *inner, *groups);
                    let gam = self.value(*gamma);
                    let cpg = c / groups;
                    let len = cpg * inner;
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx = vec![0.0; g.len()];
                    for ni in 0..n {
                        for gi in 0..groups {
                            let start = (ni * c + gi * cpg) * inner;
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for j in 0..len {
                                let ch = gi * cpg + j / inner;
                                let dy = g[start + j];
                                let h = xhat[start + j];
                                dgamma[ch] += dy * h;
                                dbeta[ch] += dy;
                                let dh = dy * gam[ch];
                                m1 += dh;
                                m2 += dh * h;
                            }
                            m1 /= len as f64;
                            m2 /= len as f64;
                            let r = rstd[ni * groups + gi];
                            for j in 0..len {
                                let ch = gi * cpg + j / inner;
                                let dh = g[start + j] * gam[ch];
                                dx[start + j] = r * (dh - m1 - xhat[start + j] * m2);
                            }
                        }
                    }
                    if wants(*input) {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if wants(*gamma) {
                        accumulate(&mut grads[gamma.0], dgamma);
                    }
                    if wants(*beta) {
                        accumulate(&mut grads[beta.0], dbeta);
                    }
                }
                Op::CrossEntropy { logits, labels, probs, k } => {
                    let n = labels.len() as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| g[0] * p / n).collect();
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * k + y] -= g[0] / n;
                    }
                    accumulate(&mut grads[logits.0], d);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let scale = 2.0 * g[0] / p.len() as f64;
                    let d: Vec<f64> = p.iter().zip(t).map(|(a, b)| scale * (a - b)).collect();
                    if wants(*target) {
                        accumulate(&mut grads[target.0], d.iter().map(|v| -v).collect());
                    }
                    if wants(*pred) {
                        accumulate(&mut grads[pred.0], d);
                    }
                }
                Op::WeightedSum { input, coeffs } => {
                    accumulate(&mut grads[input.0], coeffs.iter().map(|c| c * g[0]).collect());
                }
            }
        }
        Ok(Gradients { grads, params })
    }
}
