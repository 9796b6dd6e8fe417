use std::collections::HashMap;

use super::ops::{self, axis_split, ConvGeom};
use super::{cst, Float, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    LayerNorm(Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    AvgPool(Var, usize),
    Embedding(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Transpose(Var),
    Slice { input: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Cosine(Var, Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    /// Per-op auxiliary values kept for the backward pass.
    cache: Vec<T>,
}

/// An operation tape. See the module docs.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, Var>,
    recording: bool,
}

// Small enough that inputs with variance 1e-3 still normalise to within 1e-4.
const LN_EPS: f64 = 1e-7;
const LOG_FLOOR: f64 = 1e-12;

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    /// A graph that records operations for [`Graph::backward`].
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), params: HashMap::new(), recording: true }
    }

    /// A graph that only evaluates values; nothing requires a gradient.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool, cache: Vec<T>) -> Var {
        let requires_grad = requires_grad && self.recording;
        let op = if requires_grad { op } else { Op::Leaf };
        let cache = if requires_grad { cache } else { Vec::new() };
        self.nodes.push(Node { value, op, requires_grad, cache });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn item(&self, v: Var) -> Result<T> {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last [`Graph::backward`] target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, Vec::new())
    }

    /// A leaf that collects a gradient (when recording).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, Vec::new())
    }

    /// The node holding parameter `id`, created on first use.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.input(store.get(id).value.clone());
        self.params.insert(id, v);
        v
    }

    /// Gradients of every parameter leaf after [`Graph::backward`].
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        let mut pairs: Vec<_> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        pairs.sort_by_key(|(id, _)| *id);
        pairs.into_iter().filter_map(move |(id, v)| self.grad(v).map(|g| (id, g)))
    }

    // ---- elementwise ----

    fn broadcast_check(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
            Ok(())
        } else {
            Err(Error::shape(format!("{name}: cannot broadcast {sb:?} onto {sa:?}")))
        }
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.broadcast_check(a, b, name)?;
        let bv = self.data(b);
        let nb = bv.len();
        let data: Vec<T> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % nb]))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg, Vec::new()))
    }

    /// `a + b`, with `b` broadcast over `a`'s leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k: T = cst(c);
        self.unary(a, Op::Scale(a, c), |x| x * k)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let v = self.value(a);
        let value = Tensor::new(v.shape(), v.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg, Vec::new())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// Natural log with the input clamped below at 1e-12.
    pub fn log(&mut self, a: Var) -> Var {
        let floor: T = cst(LOG_FLOOR);
        self.unary(a, Op::Log(a), |x| x.max(floor).ln())
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h): (T, T) = (cst(lo), cst(hi));
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(l).min(h))
    }

    // ---- reductions / normalisation ----

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("softmax axis {axis} on {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.data(a);
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (x[idx(j)] - max).exp();
                    y[idx(j)] = e;
                    sum = sum + e;
                }
                for j in 0..n {
                    y[idx(j)] = y[idx(j)] / sum;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, y)?, Op::Softmax(a, axis), rg, Vec::new()))
    }

    /// Normalises each row over the last axis to zero mean, unit variance
    /// (eps 1e-7). No affine part.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| Error::shape("layer_norm on scalar"))?;
        let x = self.data(a);
        let rows = x.len() / d;
        let mut y = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let dn: T = cst(d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + cst(LN_EPS)).sqrt();
            for j in 0..d {
                y[r * d + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, y)?, Op::LayerNorm(a), rg, inv_std))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, Vec::new())
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n: T = cst(self.value(a).numel() as f64);
        let s = self.data(a).iter().copied().sum::<T>() / n;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg, Vec::new())
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("sum_axis {axis} on {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.data(a);
        let mut y = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    y[o * inner + i] = y[o * inner + i] + x[(o * n + j) * inner + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, y)?, Op::SumAxis(a, axis), rg, Vec::new()))
    }

    // ---- linear algebra / structure ----

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        ops::gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg, Vec::new()))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose of {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.data(a);
        let mut y = vec![T::zero(); x.len()];
        for i in 0..r {
            for j in 0..c {
                y[j * r + i] = x[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[c, r], y)?, Op::Transpose(a), rg, Vec::new()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.data(a).to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg, Vec::new()))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape(format!("concat axis {axis} on {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &len)| d != axis && len != first[d])
            {
                return Err(Error::shape(format!("concat {first:?} with {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut y = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                y.extend_from_slice(&self.data(p)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, y)?, Op::Concat(parts.to_vec(), axis), rg, Vec::new()))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(format!("slice {start}+{len} of axis {axis} in {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = self.data(a);
        let mut y = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            y.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&out_shape, y)?, Op::Slice { input: a, axis, start }, rg, Vec::new()))
    }

    /// Rows of `table` ([vocab, d]) selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("embedding table {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(format!("token id {bad} outside table of {v}")));
        }
        let x = self.data(table);
        let mut y = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            y.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::new(&[ids.len(), d], y)?, Op::Embedding(table, ids.to_vec()), rg, Vec::new()))
    }

    /// Convolution of one `[C,H,W]` image with `[O,C,kh,kw]` filters.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 3 || sw.len() != 4 || si[0] != sw[1] || stride == 0 {
            return Err(Error::shape(format!("conv2d input {si:?} weight {sw:?}")));
        }
        let (c, h, w, o, kh, kw) = (si[0], si[1], si[2], sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d kernel larger than padded input"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(Error::shape(format!("conv2d bias {:?} for {o} filters", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            c, h, w, o, kh, kw, stride, pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let out = ops::conv2d_forward(&geom, self.data(input), self.data(weight), bias.map(|b| self.data(b)));
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&[o, geom.ho, geom.wo], out)?, Op::Conv2d { input, weight, bias, geom }, rg, Vec::new()))
    }

    /// Non-overlapping `k×k` average pooling of a `[C,H,W]` map.
    pub fn avg_pool(&mut self, a: Var, k: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || k == 0 || !s[1].is_multiple_of(k) || !s[2].is_multiple_of(k) {
            return Err(Error::shape(format!("avg_pool {k} on {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / k, w / k);
        let x = self.data(a);
        let norm: T = cst(1.0 / (k * k) as f64);
        let mut y = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let o = (ch * ho + yy / k) * wo + xx / k;
                    y[o] = y[o] + x[(ch * h + yy) * w + xx] * norm;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[c, ho, wo], y)?, Op::AvgPool(a, k), rg, Vec::new()))
    }

    /// Cosine similarity of two equal-length tensors; 0 if either is zero.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(format!("cosine {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let (x, y) = (self.data(a), self.data(b));
        let dot = x.iter().zip(y).map(|(&p, &q)| p * q).sum::<T>();
        let na = x.iter().map(|&p| p * p).sum::<T>().sqrt();
        let nb = y.iter().map(|&q| q * q).sum::<T>().sqrt();
        let c = if na > T::zero() && nb > T::zero() { dot / (na * nb) } else { T::zero() };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), rg, vec![na, nb]))
    }

    /// Mean over rows of `-log softmax(logits)[target]` for `[n, classes]`
    /// logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(Error::shape(format!("cross_entropy {s:?} with {} targets", targets.len())));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::shape(format!("target {bad} outside {k} classes")));
        }
        let x = self.data(logits);
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for r in 0..n {
            let row = &x[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum = row.iter().map(|&v| (v - max).exp()).sum::<T>();
            let lse = max + sum.ln();
            loss = loss + lse - row[targets[r]];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        loss = loss / cst(n as f64);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, targets.to_vec()), rg, probs))
    }

    // ---- backward ----

    fn acc(&mut self, v: Var, contrib: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, c) in g.iter_mut().zip(contrib) {
                    *a = *a + c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Sum of `g` over the leading repeats of a broadcast operand.
    fn reduce_broadcast(g: &[T], nb: usize) -> Vec<T> {
        let mut out = vec![T::zero(); nb];
        for (i, &v) in g.iter().enumerate() {
            out[i % nb] = out[i % nb] + v;
        }
        out
    }

    /// Back-propagates from scalar `loss`. Gradients from earlier calls are
    /// replaced.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        if !self.recording {
            return Err(Error::shape("backward on an inference graph"));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            self.backward_node(idx, &op, &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, idx: usize, op: &Op, g: &[T]) -> Result<()> {
        let out = self.nodes[idx].value.data().to_vec();
        let out = &out[..];
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let nb = self.value(b).numel();
                let gb = Self::reduce_broadcast(g, nb);
                self.acc(a, g.to_vec());
                self.acc(b, gb);
            }
            Op::Sub(a, b) => {
                let nb = self.value(b).numel();
                let gb = Self::reduce_broadcast(g, nb).into_iter().map(|v| -v).collect();
                self.acc(a, g.to_vec());
                self.acc(b, gb);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(a), self.data(b));
                let nb = xb.len();
                let ga: Vec<T> = g.iter().enumerate().map(|(i, &gv)| gv * xb[i % nb]).collect();
                let prod: Vec<T> = g.iter().enumerate().map(|(i, &gv)| gv * xa[i]).collect();
                let gb = Self::reduce_broadcast(&prod, nb);
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::Scale(a, c) => {
                let k: T = cst(c);
                self.acc(a, g.iter().map(|&v| v * k).collect());
            }
            Op::Relu(a) => {
                let x = self.data(a);
                let ga = g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                self.acc(a, ga);
            }
            Op::Abs(a) => {
                let x = self.data(a);
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.acc(a, ga);
            }
            Op::Exp(a) => {
                let ga = g.iter().zip(out).map(|(&gv, &y)| gv * y).collect();
                self.acc(a, ga);
            }
            Op::Log(a) => {
                let floor: T = cst(LOG_FLOOR);
                let x = self.data(a);
                let ga = g.iter().zip(x).map(|(&gv, &xv)| if xv > floor { gv / xv } else { T::zero() }).collect();
                self.acc(a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let (l, h): (T, T) = (cst(lo), cst(hi));
                let x = self.data(a);
                let ga = g.iter().zip(x).map(|(&gv, &xv)| if xv >= l && xv <= h { gv } else { T::zero() }).collect();
                self.acc(a, ga);
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = axis_split(self.nodes[idx].value.shape(), axis);
                let mut ga = vec![T::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot = (0..n).map(|j| g[at(j)] * out[at(j)]).sum::<T>();
                        for j in 0..n {
                            ga[at(j)] = out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                self.acc(a, ga);
            }
            Op::LayerNorm(a) => {
                let d = *self.nodes[idx].value.shape().last().unwrap();
                let inv_std = &self.nodes[idx].cache;
                let dn: T = cst(d as f64);
                let mut ga = vec![T::zero(); out.len()];
                for (r, &is) in inv_std.iter().enumerate() {
                    let xh = &out[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mg = gr.iter().copied().sum::<T>() / dn;
                    let mgx = gr.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    for j in 0..d {
                        ga[r * d + j] = is * (gr[j] - mg - xh[j] * mgx);
                    }
                }
                self.acc(a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(a).numel();
                self.acc(a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).numel();
                let v = g[0] / cst(n as f64);
                self.acc(a, vec![v; n]);
            }
            Op::SumAxis(a, axis) => {
                let (outer, n, inner) = axis_split(self.shape(a), axis);
                let mut ga = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            ga[(o * n + j) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                self.acc(a, ga);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let mut ga = vec![T::zero(); m * k];
                let mut gb = vec![T::zero(); k * n];
                if self.rg(a) {
                    ops::gemm_nt(g, self.data(b), &mut ga, m, k, n);
                }
                if self.rg(b) {
                    ops::gemm_tn(self.data(a), g, &mut gb, m, k, n);
                }
                self.acc(a, ga);
                self.acc(b, gb);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.acc(a, ga);
            }
            Op::Reshape(a) => self.acc(a, g.to_vec()),
            Op::Concat(ref parts, axis) => {
                let shape = self.nodes[idx].value.shape().to_vec();
                let (outer, total, inner) = axis_split(&shape, axis);
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[axis];
                    let mut gp = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + n * inner]);
                    }
                    offset += n;
                    self.acc(p, gp);
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(input), axis);
                let len = self.nodes[idx].value.shape()[axis];
                let mut ga = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.acc(input, ga);
            }
            Op::Embedding(table, ref ids) => {
                let d = self.shape(table)[1];
                let mut gt = vec![T::zero(); self.value(table).numel()];
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] = gt[i * d + j] + g[r * d + j];
                    }
                }
                self.acc(table, gt);
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let (di, dw, db) = ops::conv2d_backward(&geom, self.data(input), self.data(weight), g);
                self.acc(input, di);
                self.acc(weight, dw);
                if let Some(b) = bias {
                    self.acc(b, db);
                }
            }
            Op::AvgPool(a, k) => {
                let s = self.shape(a).to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (ho, wo) = (h / k, w / k);
                let norm: T = cst(1.0 / (k * k) as f64);
                let mut ga = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for yy in 0..h {
                        for xx in 0..w {
                            ga[(ch * h + yy) * w + xx] = g[(ch * ho + yy / k) * wo + xx / k] * norm;
                        }
                    }
                }
                self.acc(a, ga);
            }
            Op::Cosine(a, b) => {
                let (na, nb) = (self.nodes[idx].cache[0], self.nodes[idx].cache[1]);
                if na > T::zero() && nb > T::zero() {
                    let c = out[0];
                    let (x, y) = (self.data(a), self.data(b));
                    let denom = na * nb;
                    let ga = x.iter().zip(y).map(|(&p, &q)| g[0] * (q / denom - c * p / (na * na))).collect();
                    let gb = x.iter().zip(y).map(|(&p, &q)| g[0] * (p / denom - c * q / (nb * nb))).collect();
                    self.acc(a, ga);
                    self.acc(b, gb);
                }
            }
            Op::CrossEntropy(logits, ref targets) => {
                let k = self.shape(logits)[1];
                let n = targets.len();
                let scale = g[0] / cst(n as f64);
                let mut gl: Vec<T> = self.nodes[idx].cache.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * k + t] = gl[r * k + t] - scale;
                }
                self.acc(logits, gl);
            }
        }
        Ok(())
    }
}
