//! Dense row-major `f64` tensors with tape-based reverse-mode
//! differentiation.
//!
//! Operations are methods on [`Tape`]. An operation is recorded only when at
//! least one input requires a gradient, so inference with constant weights
//! builds no graph at all. Each recorded node owns a one-shot backward
//! closure; [`Tape::backward`] consumes the tape.
//!
//! Binary elementwise ops broadcast by leading-axis expansion only: the
//! lower-rank operand's shape must be a suffix of the other's.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// `sqrt(2/pi)` and the cubic coefficient of the tanh GELU approximation.
pub const GELU_C: f64 = 0.797_884_560_802_865_4;
pub const GELU_A: f64 = 0.044_715;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} does not describe {} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor".into() });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![value]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; shape.iter().product()]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| (*arc).clone())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    /// Same values, detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("tensor of shape {:?} is not scalar", self.shape)));
        }
        Ok(self.data[0])
    }
}

type Backward = Box<dyn FnOnce(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    parents: Vec<Option<NodeId>>,
    backward: Option<Backward>,
}

/// Ordered record of differentiable operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Gradients produced by [`Tape::backward`], keyed by node id.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        t.node.and_then(|id| self.grads.get(&id))
    }

    pub fn by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn suffix_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || a.ends_with(b) {
        Ok(a.to_vec())
    } else if b.ends_with(a) {
        Ok(b.to_vec())
    } else {
        Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}")))
    }
}

/// Split `shape` around `axis` into (outer, axis length, inner) extents.
fn axis_extents(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn last_dim(op: &'static str, t: &Tensor) -> Result<usize> {
    t.shape
        .last()
        .copied()
        .ok_or_else(|| Error::shape(op, "expected a tensor of rank >= 1"))
}

// out[m,n] += a[m,k] * b[k,n]
fn mm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

// out[m,k] += g[m,n] * b[k,n]^T
fn mm_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// out[k,n] += a[m,k]^T * g[m,n]
fn mm_at(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register `t` as a differentiable leaf on this tape.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape: t.shape.clone(),
            parents: Vec::new(),
            backward: None,
        });
        Tensor {
            shape: t.shape.clone(),
            data: Arc::clone(&t.data),
            node: Some(nodes.len() - 1),
        }
    }

    fn record<F>(&self, op: &'static str, shape: Vec<usize>, data: Vec<f64>, inputs: &[&Tensor], backward: F) -> Result<Tensor>
    where
        F: FnOnce(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.to_string() });
        }
        let node = if inputs.iter().any(|t| t.requires_grad()) {
            if self.consumed.get() {
                return Err(Error::Tape("tape already consumed by backward".into()));
            }
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                shape: shape.clone(),
                parents: inputs.iter().map(|t| t.node).collect(),
                backward: Some(Box::new(backward)),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node,
        })
    }

    /// Reverse pass from a scalar `loss`. Gradients of fan-out uses are
    /// summed. The tape cannot be reused afterwards.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::Tape("backward called twice on the same tape".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::Tape(format!("loss must be scalar, got shape {:?}", loss.shape)));
        }
        let root = loss
            .node
            .ok_or_else(|| Error::Tape("loss does not depend on any differentiable input".into()))?;
        self.consumed.set(true);
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        pending[root] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for id in (0..=root).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &mut nodes[id];
            if let Some(backward) = node.backward.take() {
                for (parent, pg) in node.parents.iter().zip(backward(&grad)) {
                    let (Some(pid), Some(pg)) = (parent, pg) else { continue };
                    match &mut pending[*pid] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                        slot => *slot = Some(pg),
                    }
                }
            }
            out.grads.insert(
                id,
                Tensor {
                    shape: node.shape.clone(),
                    data: Arc::new(grad),
                    node: None,
                },
            );
        }
        Ok(out)
    }

    fn binary<F, G>(&self, op: &'static str, a: &Tensor, b: &Tensor, f: F, df: G) -> Result<Tensor>
    where
        F: Fn(f64, f64) -> f64,
        G: Fn(f64, f64) -> (f64, f64) + 'static,
    {
        let shape = suffix_broadcast(op, &a.shape, &b.shape)?;
        let n: usize = shape.iter().product();
        let (la, lb) = (a.numel(), b.numel());
        let data: Vec<f64> = (0..n).map(|i| f(a.data[i % la], b.data[i % lb])).collect();
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let needs = (a.requires_grad(), b.requires_grad());
        self.record(op, shape, data, &[a, b], move |g| {
            let mut ga = needs.0.then(|| vec![0.0; la]);
            let mut gb = needs.1.then(|| vec![0.0; lb]);
            for (i, gi) in g.iter().enumerate() {
                let (da, db) = df(ad[i % la], bd[i % lb]);
                if let Some(ga) = &mut ga {
                    ga[i % la] += gi * da;
                }
                if let Some(gb) = &mut gb {
                    gb[i % lb] += gi * db;
                }
            }
            vec![ga, gb]
        })
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |x, y| (y, x))
    }

    fn unary<F, G>(&self, op: &'static str, a: &Tensor, f: F, df: G) -> Result<Tensor>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64, f64) -> f64 + 'static,
    {
        let data: Vec<f64> = a.data.iter().map(|&x| f(x)).collect();
        let out = Arc::new(data.clone());
        let input = Arc::clone(&a.data);
        self.record(op, a.shape.clone(), data, &[a], move |g| {
            vec![Some(
                g.iter()
                    .zip(input.iter().zip(out.iter()))
                    .map(|(gi, (&x, &y))| gi * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.unary("scale", a, |x| c * x, move |_, _| c)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("exp", a, f64::exp, |_, y| y)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("log", a, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("sqrt", a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn abs(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("abs", a, f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    /// GELU, tanh approximation with constants [`GELU_C`] and [`GELU_A`].
    pub fn gelu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary("gelu", a, gelu, |x, _| gelu_grad(x))
    }

    /// Batched matrix product over the last two axes. Leading axes of the
    /// lower-rank operand must be a suffix of the other's.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() < 2 || b.rank() < 2 {
            return Err(Error::shape("matmul", "operands need rank >= 2"));
        }
        let (ra, rb) = (a.rank(), b.rank());
        let (m, k) = (a.shape[ra - 2], a.shape[ra - 1]);
        let (k2, n) = (b.shape[rb - 2], b.shape[rb - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
        }
        let mut lead = suffix_broadcast("matmul", &a.shape[..ra - 2], &b.shape[..rb - 2])?;
        let batch: usize = lead.iter().product();
        let batch_a: usize = a.shape[..ra - 2].iter().product();
        let batch_b: usize = b.shape[..rb - 2].iter().product();
        let mut data = vec![0.0; batch * m * n];
        for i in 0..batch {
            let (ia, ib) = (i % batch_a, i % batch_b);
            mm(
                &a.data[ia * m * k..(ia + 1) * m * k],
                &b.data[ib * k * n..(ib + 1) * k * n],
                &mut data[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        lead.extend([m, n]);
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let needs = (a.requires_grad(), b.requires_grad());
        self.record("matmul", lead, data, &[a, b], move |g| {
            let mut ga = needs.0.then(|| vec![0.0; ad.len()]);
            let mut gb = needs.1.then(|| vec![0.0; bd.len()]);
            for i in 0..batch {
                let (ia, ib) = (i % batch_a, i % batch_b);
                let gi = &g[i * m * n..(i + 1) * m * n];
                if let Some(ga) = &mut ga {
                    mm_bt(gi, &bd[ib * k * n..(ib + 1) * k * n], &mut ga[ia * m * k..(ia + 1) * m * k], m, k, n);
                }
                if let Some(gb) = &mut gb {
                    mm_at(&ad[ia * m * k..(ia + 1) * m * k], gi, &mut gb[ib * k * n..(ib + 1) * k * n], m, k, n);
                }
            }
            vec![ga, gb]
        })
    }

    /// Swap the last two axes.
    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        let r = a.rank();
        if r < 2 {
            return Err(Error::shape("transpose", "need rank >= 2"));
        }
        let (m, n) = (a.shape[r - 2], a.shape[r - 1]);
        let batch = a.numel() / (m * n);
        let swap = move |src: &[f64], rows: usize, cols: usize| {
            let mut out = vec![0.0; src.len()];
            for b in 0..batch {
                let off = b * rows * cols;
                for i in 0..rows {
                    for j in 0..cols {
                        out[off + j * rows + i] = src[off + i * cols + j];
                    }
                }
            }
            out
        };
        let mut shape = a.shape.clone();
        shape.swap(r - 2, r - 1);
        let data = swap(&a.data, m, n);
        self.record("transpose", shape, data, &[a], move |g| vec![Some(swap(g, n, m))])
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != a.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", a.shape)));
        }
        self.record("reshape", shape.to_vec(), a.data.to_vec(), &[a], |g| vec![Some(g.to_vec())])
    }

    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let (outer, _, inner) = axis_extents("concat", &first.shape, axis)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let same_rank = p.rank() == first.rank();
            let compatible = same_rank
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{:?} vs {:?} on axis {axis}", p.shape, first.shape)));
            }
            widths.push(p.shape[axis] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total / inner;
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        self.record("concat", shape, data, parts, move |g| {
            let mut grads: Vec<Option<Vec<f64>>> = widths
                .iter()
                .zip(&needs)
                .map(|(w, need)| need.then(|| Vec::with_capacity(outer * w)))
                .collect();
            for o in 0..outer {
                let mut off = o * total;
                for (gp, w) in grads.iter_mut().zip(&widths) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + w]);
                    }
                    off += w;
                }
            }
            grads
        })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, a: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_extents("slice", &a.shape, axis)?;
        if start >= end || end > len {
            return Err(Error::shape("slice", format!("range {start}..{end} on axis of length {len}")));
        }
        let w = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let off = o * len * inner + start * inner;
            data.extend_from_slice(&a.data[off..off + w]);
        }
        let mut shape = a.shape.clone();
        shape[axis] = end - start;
        let full = a.numel();
        self.record("slice", shape, data, &[a], move |g| {
            let mut ga = vec![0.0; full];
            for o in 0..outer {
                let off = o * len * inner + start * inner;
                ga[off..off + w].copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(ga)]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: &Tensor) -> Result<Tensor> {
        let n = last_dim("softmax", a)?;
        let mut data = Vec::with_capacity(a.numel());
        for row in a.data.chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|x| (x - max).exp()));
            let sum: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= sum);
        }
        let y = Arc::new(data.clone());
        self.record("softmax", a.shape.clone(), data, &[a], move |g| {
            let mut ga = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(n).zip(y.chunks(n)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                ga.extend(grow.iter().zip(yrow).map(|(gi, yi)| yi * (gi - dot)));
            }
            vec![Some(ga)]
        })
    }

    /// Layer normalization over the last axis (biased variance), followed by
    /// the affine `gain * x + bias`.
    pub fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        if !(eps > 0.0) {
            return Err(Error::config("layer_norm eps must be positive"));
        }
        let d = last_dim("layer_norm", x)?;
        if gain.shape != [d] || bias.shape != [d] {
            return Err(Error::shape("layer_norm", format!("gain {:?} / bias {:?} for width {d}", gain.shape, bias.shape)));
        }
        let rows = x.numel() / d;
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for row in x.data.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|v| (v - mean) * inv));
        }
        let data: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, xh)| gain.data[i % d] * xh + bias.data[i % d])
            .collect();
        let gd = Arc::clone(&gain.data);
        let needs = [x.requires_grad(), gain.requires_grad(), bias.requires_grad()];
        self.record("layer_norm", x.shape.clone(), data, &[x, gain, bias], move |g| {
            let mut gx = needs[0].then(|| Vec::with_capacity(g.len()));
            let mut ggain = needs[1].then(|| vec![0.0; d]);
            let mut gbias = needs[2].then(|| vec![0.0; d]);
            for (r, (grow, xrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                if let Some(ggain) = &mut ggain {
                    ggain.iter_mut().zip(grow.iter().zip(xrow)).for_each(|(acc, (gi, xh))| *acc += gi * xh);
                }
                if let Some(gbias) = &mut gbias {
                    gbias.iter_mut().zip(grow).for_each(|(acc, gi)| *acc += gi);
                }
                if let Some(gx) = &mut gx {
                    let dxhat: Vec<f64> = grow.iter().zip(gd.iter()).map(|(gi, w)| gi * w).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    gx.extend(dxhat.iter().zip(xrow).map(|(dh, xh)| inv_std[r] * (dh - mean_d - xh * mean_dx)));
                }
            }
            vec![gx, ggain, gbias]
        })
    }

    /// Sum over `axis`, removing it.
    pub fn reduce_sum(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_extents("reduce_sum", &a.shape, axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                data[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let mut shape = a.shape.clone();
        shape.remove(axis);
        self.record("reduce_sum", shape, data, &[a], move |g| {
            let mut ga = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    ga.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(ga)]
        })
    }

    pub fn reduce_mean(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let (_, len, _) = axis_extents("reduce_mean", &a.shape, axis)?;
        let s = self.reduce_sum(a, axis)?;
        self.scale(&s, 1.0 / len as f64)
    }

    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let flat = self.reshape(a, &[a.numel()])?;
        self.reduce_sum(&flat, 0)
    }

    pub fn mean_all(&self, a: &Tensor) -> Result<Tensor> {
        let flat = self.reshape(a, &[a.numel()])?;
        self.reduce_mean(&flat, 0)
    }

    /// Rows of `table` (along axis 0) selected by `indices`.
    pub fn gather(&self, table: &Tensor, indices: &[usize]) -> Result<Tensor> {
        let rows = *table.shape.first().ok_or_else(|| Error::shape("gather", "table needs rank >= 1"))?;
        if indices.is_empty() {
            return Err(Error::shape("gather", "empty index list"));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather", format!("index {bad} out of range for {rows} rows")));
        }
        let w = table.numel() / rows;
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(&table.data[i * w..(i + 1) * w]);
        }
        let mut shape = table.shape.clone();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        let full = table.numel();
        self.record("gather", shape, data, &[table], move |g| {
            let mut gt = vec![0.0; full];
            for (k, &i) in idx.iter().enumerate() {
                gt[i * w..(i + 1) * w].iter_mut().zip(&g[k * w..(k + 1) * w]).for_each(|(a, b)| *a += b);
            }
            vec![Some(gt)]
        })
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Compare reverse-mode gradients of a scalar function against central
/// finite differences at `points`, returning the largest coordinate-wise
/// relative error `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = points.iter().map(|p| tape.leaf(p)).collect();
    let out = f(&tape, &leaves)?;
    if out.numel() != 1 {
        return Err(Error::Tape(format!("grad_check needs a scalar function, got shape {:?}", out.shape)));
    }
    let grads = if out.requires_grad() {
        Some(tape.backward(&out)?)
    } else {
        None
    };
    let eval = |inputs: &[Tensor]| -> Result<f64> { f(&Tape::new(), inputs)?.item() };
    let mut worst: f64 = 0.0;
    for (i, (point, leaf)) in points.iter().zip(&leaves).enumerate() {
        let analytic: Vec<f64> = match grads.as_ref().and_then(|g| g.get(leaf)) {
            Some(g) => g.data.to_vec(),
            None => vec![0.0; point.numel()],
        };
        for (j, a) in analytic.iter().enumerate() {
            let mut perturbed: Vec<Tensor> = points.iter().map(Tensor::detach).collect();
            let mut bump = |delta: f64| -> Result<f64> {
                let mut data = point.data.to_vec();
                data[j] += delta;
                perturbed[i] = Tensor::new(point.shape.clone(), data)?;
                eval(&perturbed)
            };
            let numeric = (bump(step)? - bump(-step)?) / (2.0 * step);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    grad_check_many(|tape, xs| f(tape, &xs[0]), std::slice::from_ref(point), step)
}
