use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug)]
enum Op<T> {
    Param(ParamId),
    Input,
    Embed { table: ParamId, ids: Vec<u32> },
    Conv1d { x: NodeId, w: NodeId, b: NodeId, width: usize, relu: bool },
    MaxOverTime { x: NodeId, argmax: Vec<usize> },
    Conv2d { x: NodeId, k: NodeId, b: NodeId, geom: Conv2dGeom, relu: bool },
    MaxPool2d { x: NodeId, argmax: Vec<usize> },
    Affine { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Reshape(NodeId),
    Interaction { a: NodeId, b: NodeId },
    SoftmaxXent { logits: NodeId, label: usize, probs: Vec<T> },
    NegEntropy { logits: NodeId, probs: Vec<T>, log_probs: Vec<T> },
    SumSquares(Vec<NodeId>),
    TracePenalty { cols: [NodeId; 4], omega_inv: [[T; 4]; 4] },
    WeightedSum(Vec<(NodeId, T)>),
}

#[derive(Debug, Clone, Copy)]
struct Conv2dGeom {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    f: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Tape of operations recorded in creation order.
pub struct Graph<'p, T: Real = f64> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
    #[cfg(test)]
    pub(crate) corrupt_conv1d_backward: bool,
}

/// Output length of a "same"-padded, ceil-mode sliding window.
pub(crate) fn ceil_div(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

fn softmax_into<T: Real>(logits: &[T]) -> (Vec<T>, T) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = logits.iter().map(|&z| (z - lse).exp()).collect();
    (probs, lse)
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            #[cfg(test)]
            corrupt_conv1d_backward: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match self.nodes[id.0].op {
            Op::Param(p) => self.params.get(p),
            _ => &self.nodes[id.0].value,
        }
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id).data()[0]
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = self.push(Op::Param(id), Tensor::zeros(&[0]));
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Gathers rows of an embedding table (`|V| x l`) into an `m x l` matrix.
    /// Id 0 is the padding token: it reads as zeros and never receives
    /// gradient.
    pub fn embed(&mut self, table: ParamId, ids: &[u32]) -> Result<NodeId> {
        let t = self.params.get(table);
        if t.shape().len() != 2 {
            return Err(Error::shape("embed", format!("table must be 2-D, got {:?}", t.shape())));
        }
        let (v, l) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * l);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(Error::shape("embed", format!("token id {id} outside vocabulary of {v}")));
            }
            if id == 0 {
                out.resize(out.len() + l, T::zero());
            } else {
                out.extend_from_slice(&t.data()[id * l..(id + 1) * l]);
            }
        }
        let value = Tensor::from_vec(&[ids.len(), l], out)?;
        Ok(self.push(Op::Embed { table, ids: ids.to_vec() }, value))
    }

    /// Same-padded 1-D convolution: `x` is `m x l`, `w` is `width x l x F`,
    /// `b` is `F`; output `m x F`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, act: Activation) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
            return Err(Error::shape("conv1d", format!("ranks: input {xs:?}, filters {ws:?}, bias {bs:?}")));
        }
        let (m, l) = (xs[0], xs[1]);
        let (width, fl, f) = (ws[0], ws[1], ws[2]);
        if fl != l {
            return Err(Error::shape("conv1d", format!("embedding dimension: input has {l}, filters expect {fl}")));
        }
        if bs[0] != f {
            return Err(Error::shape("conv1d", format!("feature maps: filters have {f}, bias has {}", bs[0])));
        }
        if width == 0 || width > m {
            return Err(Error::shape("conv1d", format!("window width {width} must be in 1..={m} (time length)")));
        }
        let pad = (width - 1) / 2;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * f];
        for t in 0..m {
            let o = &mut out[t * f..(t + 1) * f];
            o.copy_from_slice(bd);
            for d in 0..width {
                let src = t + d;
                if src < pad || src - pad >= m {
                    continue;
                }
                let row = &xd[(src - pad) * l..(src - pad + 1) * l];
                for (c, &xv) in row.iter().enumerate() {
                    if xv == T::zero() {
                        continue;
                    }
                    let wrow = &wd[(d * l + c) * f..(d * l + c + 1) * f];
                    for (ov, &wv) in o.iter_mut().zip(wrow) {
                        *ov += xv * wv;
                    }
                }
            }
        }
        let relu = act == Activation::Relu;
        if relu {
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        let value = Tensor::from_vec(&[m, f], out)?;
        Ok(self.push(Op::Conv1d { x, w, b, width, relu }, value))
    }

    /// Max over the time axis of an `m x F` matrix. Ties go to the first index.
    pub fn global_max_pool_1d(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape();
        if xs.len() != 2 {
            return Err(Error::shape("global_max_pool_1d", format!("expected m x F, got {xs:?}")));
        }
        let (m, f) = (xs[0], xs[1]);
        if m == 0 {
            return Err(Error::Empty("global_max_pool_1d: time axis"));
        }
        let xd = self.value(x).data();
        let mut out = xd[..f].to_vec();
        let mut argmax = vec![0usize; f];
        for t in 1..m {
            for j in 0..f {
                let v = xd[t * f + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = t;
                }
            }
        }
        let value = Tensor::from_vec(&[f], out)?;
        Ok(self.push(Op::MaxOverTime { x, argmax }, value))
    }

    /// Strided 2-D cross-correlation with "same" zero padding and ceil-mode
    /// output size. `x` is `h x w x C`, `k` is `k x k x C x F`.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId, stride: usize, act: Activation) -> Result<NodeId> {
        let (xs, ks, bs) = (self.value(x).shape(), self.value(k).shape(), self.value(b).shape());
        if xs.len() != 3 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::shape("conv2d", format!("ranks: input {xs:?}, kernel {ks:?}, bias {bs:?}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let (kk, kw, kc, f) = (ks[0], ks[1], ks[2], ks[3]);
        if kk != kw || kk == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be square and non-empty, got {kk}x{kw}")));
        }
        if kc != c {
            return Err(Error::shape("conv2d", format!("channels: input has {c}, kernel expects {kc}")));
        }
        if bs[0] != f {
            return Err(Error::shape("conv2d", format!("feature maps: kernel has {f}, bias has {}", bs[0])));
        }
        if h == 0 || w == 0 {
            return Err(Error::Empty("conv2d: spatial extent"));
        }
        let out_h = ceil_div(h, stride);
        let out_w = ceil_div(w, stride);
        let pad_h = ((out_h - 1) * stride + kk).saturating_sub(h);
        let pad_w = ((out_w - 1) * stride + kk).saturating_sub(w);
        if kk > h + pad_h || kk > w + pad_w {
            return Err(Error::shape("conv2d", format!("kernel {kk} exceeds padded extent {}x{}", h + pad_h, w + pad_w)));
        }
        let geom = Conv2dGeom { h, w, c, k: kk, f, stride, out_h, out_w, pad_top: pad_h / 2, pad_left: pad_w / 2 };
        let (xd, kd, bd) = (self.value(x).data(), self.value(k).data(), self.value(b).data());
        let mut out = vec![T::zero(); out_h * out_w * f];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let o = &mut out[(oy * out_w + ox) * f..(oy * out_w + ox + 1) * f];
                o.copy_from_slice(bd);
                for ky in 0..kk {
                    let iy = oy * stride + ky;
                    if iy < geom.pad_top || iy - geom.pad_top >= h {
                        continue;
                    }
                    let iy = iy - geom.pad_top;
                    for kx in 0..kk {
                        let ix = ox * stride + kx;
                        if ix < geom.pad_left || ix - geom.pad_left >= w {
                            continue;
                        }
                        let ix = ix - geom.pad_left;
                        for ch in 0..c {
                            let xv = xd[(iy * w + ix) * c + ch];
                            if xv == T::zero() {
                                continue;
                            }
                            let base = ((ky * kk + kx) * c + ch) * f;
                            for (ov, &kv) in o.iter_mut().zip(&kd[base..base + f]) {
                                *ov += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        let relu = act == Activation::Relu;
        if relu {
            out.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        let value = Tensor::from_vec(&[out_h, out_w, f], out)?;
        Ok(self.push(Op::Conv2d { x, k, b, geom, relu }, value))
    }

    /// Ceil-mode max pooling; window cells past the input edge never win.
    pub fn max_pool_2d(&mut self, x: NodeId, size: usize, stride: usize) -> Result<NodeId> {
        if size == 0 || stride == 0 {
            return Err(Error::invalid("max_pool_2d", format!("size {size} and stride {stride} must be >= 1")));
        }
        let xs = self.value(x).shape();
        if xs.len() != 3 {
            return Err(Error::shape("max_pool_2d", format!("expected h x w x C, got {xs:?}")));
        }
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        if h == 0 || w == 0 {
            return Err(Error::Empty("max_pool_2d: spatial extent"));
        }
        let (out_h, out_w) = (ceil_div(h, stride), ceil_div(w, stride));
        let xd = self.value(x).data();
        let mut out = vec![T::neg_infinity(); out_h * out_w * c];
        let mut argmax = vec![0usize; out.len()];
        for oy in 0..out_h {
            let y1 = (oy * stride + size).min(h);
            for ox in 0..out_w {
                let x1 = (ox * stride + size).min(w);
                let o = (oy * out_w + ox) * c;
                for iy in oy * stride..y1 {
                    for ix in ox * stride..x1 {
                        let src = (iy * w + ix) * c;
                        for ch in 0..c {
                            let v = xd[src + ch];
                            if v > out[o + ch] {
                                out[o + ch] = v;
                                argmax[o + ch] = src + ch;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[out_h, out_w, c], out)?;
        Ok(self.push(Op::MaxPool2d { x, argmax }, value))
    }

    /// `w · x + b` with `w` of shape `r x q`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if ws.len() != 2 {
            return Err(Error::shape("affine", format!("weight must be 2-D, got {ws:?}")));
        }
        let (r, q) = (ws[0], ws[1]);
        if self.value(x).len() != q {
            return Err(Error::shape("affine", format!("input has {} values ({xs:?}), weight expects {q}", self.value(x).len())));
        }
        if let Some(b) = b {
            if self.value(b).len() != r {
                return Err(Error::shape("affine", format!("bias has {} values, weight has {r} rows", self.value(b).len())));
            }
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let mut out: Vec<T> = match b {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); r],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wd[i * q..(i + 1) * q];
            *o += row.iter().zip(xd).map(|(&a, &b)| a * b).sum::<T>();
        }
        let value = Tensor::from_vec(&[r], out)?;
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    fn elementwise(&mut self, a: NodeId, b: NodeId, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.shape(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Flattened concatenation of the inputs.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let n = data.len();
        let v = Tensor::from_vec(&[n], data)?;
        Ok(self.push(Op::Concat(parts.to_vec()), v))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    /// Word-by-word dot products `M[i, j] = <a_i, b_j>` as an `m x n x 1` image.
    pub fn interaction(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (as_, bs) = (self.value(a).shape(), self.value(b).shape());
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[1] {
            return Err(Error::shape("interaction", format!("{as_:?} vs {bs:?}")));
        }
        let (m, n, l) = (as_[0], bs[0], as_[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ai = &ad[i * l..(i + 1) * l];
            for j in 0..n {
                let bj = &bd[j * l..(j + 1) * l];
                out[i * n + j] = ai.iter().zip(bj).map(|(&x, &y)| x * y).sum();
            }
        }
        let v = Tensor::from_vec(&[m, n, 1], out)?;
        Ok(self.push(Op::Interaction { a, b }, v))
    }

    /// `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = self.value(logits).data();
        if z.len() < 2 {
            return Err(Error::shape("softmax_cross_entropy", format!("need at least 2 classes, got {}", z.len())));
        }
        if label >= z.len() {
            return Err(Error::invalid("softmax_cross_entropy", format!("label {label} outside 0..{}", z.len())));
        }
        let (probs, lse) = softmax_into(z);
        let loss = lse - z[label];
        Ok(self.push(Op::SoftmaxXent { logits, label, probs }, Tensor::scalar(loss)))
    }

    /// `sum_j p_j log p_j` with `p = softmax(logits)`.
    pub fn neg_entropy(&mut self, logits: NodeId) -> Result<NodeId> {
        let z = self.value(logits).data();
        if z.len() < 2 {
            return Err(Error::shape("neg_entropy", format!("need at least 2 classes, got {}", z.len())));
        }
        let (probs, lse) = softmax_into(z);
        let log_probs: Vec<T> = z.iter().map(|&v| v - lse).collect();
        let s = probs.iter().zip(&log_probs).map(|(&p, &lp)| p * lp).sum();
        Ok(self.push(Op::NegEntropy { logits, probs, log_probs }, Tensor::scalar(s)))
    }

    /// Sum of squared entries over all inputs.
    pub fn sum_squares(&mut self, xs: &[NodeId]) -> NodeId {
        let s = xs.iter().map(|&x| self.value(x).sum_squares()).sum();
        self.push(Op::SumSquares(xs.to_vec()), Tensor::scalar(s))
    }

    /// `tr(W A Wᵀ)` where column `i` of `W` is the flattened `cols[i]` and `A`
    /// is a constant 4x4 matrix.
    pub fn trace_penalty(&mut self, cols: [NodeId; 4], a: &[[f64; 4]; 4]) -> Result<NodeId> {
        let n = self.value(cols[0]).len();
        for &c in &cols[1..] {
            if self.value(c).len() != n {
                return Err(Error::shape("trace_penalty", format!("columns differ in length: {} vs {}", n, self.value(c).len())));
            }
        }
        let mut omega_inv = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                omega_inv[i][j] = T::from_f64(a[i][j]);
            }
        }
        let mut s = T::zero();
        for i in 0..4 {
            for j in 0..4 {
                let dot: T = self.value(cols[i]).data().iter().zip(self.value(cols[j]).data()).map(|(&x, &y)| x * y).sum();
                s += omega_inv[i][j] * dot;
            }
        }
        if !s.is_finite() {
            return Err(Error::non_finite("trace penalty (near-singular covariance?)"));
        }
        Ok(self.push(Op::TracePenalty { cols, omega_inv }, Tensor::scalar(s)))
    }

    /// `sum_i c_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, T)]) -> Result<NodeId> {
        let mut s = T::zero();
        for &(x, c) in terms {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(Error::shape("weighted_sum", format!("term is not scalar: {:?}", v.shape())));
            }
            s += c * v.data()[0];
        }
        Ok(self.push(Op::WeightedSum(terms.to_vec()), Tensor::scalar(s)))
    }

    /// Reverse sweep from a scalar `loss` node. Nodes are visited in exact
    /// reverse creation order.
    pub fn backward(&self, loss: NodeId) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads = Grads::new(self.params.len());
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(p) => {
                    let slot = grads.slot(*p, self.params.get(*p).shape());
                    for (a, &b) in slot.data_mut().iter_mut().zip(&gout) {
                        *a += b;
                    }
                }
                Op::Input => {}
                Op::Embed { table, ids } => {
                    let l = self.params.get(*table).shape()[1];
                    let slot = grads.slot(*table, self.params.get(*table).shape());
                    let gd = slot.data_mut();
                    for (t, &id) in ids.iter().enumerate() {
                        if id == 0 {
                            continue;
                        }
                        let id = id as usize;
                        for c in 0..l {
                            gd[id * l + c] += gout[t * l + c];
                        }
                    }
                }
                Op::Conv1d { x, w, b, width, relu } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (m, l) = (xv.shape()[0], xv.shape()[1]);
                    let f = wv.shape()[2];
                    let pad = (width - 1) / 2;
                    let mut go = gout;
                    if *relu {
                        for (gv, &ov) in go.iter_mut().zip(node.value.data()) {
                            if ov <= T::zero() {
                                *gv = T::zero();
                            }
                        }
                    }
                    let (xd, wd) = (xv.data(), wv.data());
                    let mut gx = vec![T::zero(); m * l];
                    let mut gw = vec![T::zero(); wd.len()];
                    let mut gb = vec![T::zero(); f];
                    for t in 0..m {
                        let gt = &go[t * f..(t + 1) * f];
                        for (a, &v) in gb.iter_mut().zip(gt) {
                            *a += v;
                        }
                        for d in 0..*width {
                            let src = t + d;
                            if src < pad || src - pad >= m {
                                continue;
                            }
                            let r = src - pad;
                            for c in 0..l {
                                let base = (d * l + c) * f;
                                let wrow = &wd[base..base + f];
                                let xv = xd[r * l + c];
                                let mut acc = T::zero();
                                for j in 0..f {
                                    acc += gt[j] * wrow[j];
                                    gw[base + j] += xv * gt[j];
                                }
                                gx[r * l + c] += acc;
                            }
                        }
                    }
                    #[cfg(test)]
                    if self.corrupt_conv1d_backward {
                        gw.iter_mut().for_each(|v| *v *= T::from_f64(1.05));
                    }
                    accumulate(&mut g, *x, gx);
                    accumulate(&mut g, *w, gw);
                    accumulate(&mut g, *b, gb);
                }
                Op::MaxOverTime { x, argmax } => {
                    let xs = self.value(*x).shape();
                    let f = xs[1];
                    let mut gx = vec![T::zero(); xs[0] * f];
                    for (j, &t) in argmax.iter().enumerate() {
                        gx[t * f + j] += gout[j];
                    }
                    accumulate(&mut g, *x, gx);
                }
                Op::Conv2d { x, k, b, geom, relu } => {
                    let Conv2dGeom { h, w, c, k: kk, f, stride, out_h, out_w, pad_top, pad_left } = *geom;
                    let mut go = gout;
                    if *relu {
                        for (gv, &ov) in go.iter_mut().zip(node.value.data()) {
                            if ov <= T::zero() {
                                *gv = T::zero();
                            }
                        }
                    }
                    let (xd, kd) = (self.value(*x).data(), self.value(*k).data());
                    let mut gx = vec![T::zero(); xd.len()];
                    let mut gk = vec![T::zero(); kd.len()];
                    let mut gb = vec![T::zero(); f];
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            let gt = &go[(oy * out_w + ox) * f..(oy * out_w + ox + 1) * f];
                            if gt.iter().all(|v| *v == T::zero()) {
                                continue;
                            }
                            for (a, &v) in gb.iter_mut().zip(gt) {
                                *a += v;
                            }
                            for ky in 0..kk {
                                let iy = oy * stride + ky;
                                if iy < pad_top || iy - pad_top >= h {
                                    continue;
                                }
                                let iy = iy - pad_top;
                                for kx in 0..kk {
                                    let ix = ox * stride + kx;
                                    if ix < pad_left || ix - pad_left >= w {
                                        continue;
                                    }
                                    let ix = ix - pad_left;
                                    for ch in 0..c {
                                        let xi = (iy * w + ix) * c + ch;
                                        let xv = xd[xi];
                                        let base = ((ky * kk + kx) * c + ch) * f;
                                        let mut acc = T::zero();
                                        for j in 0..f {
                                            acc += gt[j] * kd[base + j];
                                            gk[base + j] += xv * gt[j];
                                        }
                                        gx[xi] += acc;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut g, *x, gx);
                    accumulate(&mut g, *k, gk);
                    accumulate(&mut g, *b, gb);
                }
                Op::MaxPool2d { x, argmax } => {
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += gout[o];
                    }
                    accumulate(&mut g, *x, gx);
                }
                Op::Affine { x, w, b } => {
                    let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                    let q = xd.len();
                    let mut gx = vec![T::zero(); q];
                    let mut gw = vec![T::zero(); wd.len()];
                    for (i, &gi) in gout.iter().enumerate() {
                        let row = &wd[i * q..(i + 1) * q];
                        for j in 0..q {
                            gx[j] += gi * row[j];
                            gw[i * q + j] = gi * xd[j];
                        }
                    }
                    accumulate(&mut g, *x, gx);
                    accumulate(&mut g, *w, gw);
                    if let Some(b) = b {
                        accumulate(&mut g, *b, gout);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *a, gout.clone());
                    accumulate(&mut g, *b, gout);
                }
                Op::Sub(a, b) => {
                    let neg = gout.iter().map(|&v| -v).collect();
                    accumulate(&mut g, *a, gout);
                    accumulate(&mut g, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    let ga = gout.iter().zip(bd).map(|(&g, &y)| g * y).collect();
                    let gb = gout.iter().zip(ad).map(|(&g, &x)| g * x).collect();
                    accumulate(&mut g, *a, ga);
                    accumulate(&mut g, *b, gb);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        accumulate(&mut g, p, gout[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Reshape(x) => accumulate(&mut g, *x, gout),
                Op::Interaction { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, l) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[0];
                    let (ad, bd) = (av.data(), bv.data());
                    let mut ga = vec![T::zero(); ad.len()];
                    let mut gb = vec![T::zero(); bd.len()];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gout[i * n + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for c in 0..l {
                                ga[i * l + c] += gij * bd[j * l + c];
                                gb[j * l + c] += gij * ad[i * l + c];
                            }
                        }
                    }
                    accumulate(&mut g, *a, ga);
                    accumulate(&mut g, *b, gb);
                }
                Op::SoftmaxXent { logits, label, probs } => {
                    let mut gz: Vec<T> = probs.iter().map(|&p| p * gout[0]).collect();
                    gz[*label] -= gout[0];
                    accumulate(&mut g, *logits, gz);
                }
                Op::NegEntropy { logits, probs, log_probs } => {
                    let s = node.value.data()[0];
                    let gz = probs.iter().zip(log_probs).map(|(&p, &lp)| gout[0] * p * (lp - s)).collect();
                    accumulate(&mut g, *logits, gz);
                }
                Op::SumSquares(xs) => {
                    let two = T::from_f64(2.0) * gout[0];
                    for &x in xs {
                        let gx = self.value(x).data().iter().map(|&v| two * v).collect();
                        accumulate(&mut g, x, gx);
                    }
                }
                Op::TracePenalty { cols, omega_inv } => {
                    for i in 0..4 {
                        let mut gi = vec![T::zero(); self.value(cols[i]).len()];
                        for j in 0..4 {
                            let coef = gout[0] * (omega_inv[i][j] + omega_inv[j][i]);
                            for (a, &v) in gi.iter_mut().zip(self.value(cols[j]).data()) {
                                *a += coef * v;
                            }
                        }
                        accumulate(&mut g, cols[i], gi);
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(x, c) in terms {
                        accumulate(&mut g, x, vec![c * gout[0]]);
                    }
                }
            }
        }
        if !grads.all_finite() {
            return Err(Error::non_finite("gradients"));
        }
        Ok(grads)
    }
}

fn accumulate<T: Real>(g: &mut [Option<Vec<T>>], id: NodeId, delta: Vec<T>) {
    match &mut g[id.0] {
        Some(acc) => {
            for (a, d) in acc.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
