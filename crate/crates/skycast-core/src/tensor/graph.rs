//! Operation recording and the reverse-mode gradient sweep.

use super::kernels::{self, conv_out_size, KERNEL};
use super::{Tensor, TensorError};

/// Handle to a value inside a [`Graph`]. Ids are only meaningful for the
/// graph that issued them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { stride: usize },
    Dense,
    Relu,
    Add,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize, len: usize },
    Flatten,
    Mean,
    Mse,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    tensor: Tensor,
}

/// A build-then-differentiate computation tape.
///
/// Operations run eagerly: each method computes its forward value immediately
/// and records the operation. Nodes are created in topological order (an
/// operation can only consume already-existing nodes), so [`Graph::backward`]
/// is a single reverse sweep over the node list.
///
/// A node requires gradients iff any of its inputs does; `backward` stores
/// gradients on the *leaf* tensors that require them, readable through
/// [`Graph::grad`] or [`Graph::value`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts an input value. Its `requires_grad` flag decides whether the
    /// backward sweep will deposit a gradient on it.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], tensor)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, mut tensor: Tensor) -> NodeId {
        if !matches!(op, Op::Leaf) {
            tensor.requires_grad = inputs.iter().any(|&i| self.nodes[i.0].tensor.requires_grad);
            tensor.grad = None;
        }
        self.nodes.push(Node { op, inputs, tensor });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node, TensorError> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownNode {
            node: id.0,
            len: self.nodes.len(),
        })
    }

    /// The forward value (and for leaves, any stored gradient) at `id`.
    pub fn value(&self, id: NodeId) -> Result<&Tensor, TensorError> {
        Ok(&self.node(id)?.tensor)
    }

    /// Gradient stored on a leaf by the latest [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Result<Option<&[f32]>, TensorError> {
        Ok(self.node(id)?.tensor.grad())
    }

    /// 3×3 convolution with zero padding 1.
    ///
    /// `x`: `[n, c, h, w]`, `weights`: `[f, c, 3, 3]`, `bias`: `[f]`,
    /// `stride`: 1 or 2. Output: `[n, f, ceil(h/stride), ceil(w/stride)]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weights: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId, TensorError> {
        if stride != 1 && stride != 2 {
            return Err(TensorError::Stride { stride });
        }
        let xs = self.node(x)?.tensor.shape.clone();
        let ws = self.node(weights)?.tensor.shape.clone();
        let bs = self.node(bias)?.tensor.shape.clone();
        if xs.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 4,
                shape: xs,
            });
        }
        if ws.len() != 4 || ws[2] != KERNEL || ws[3] != KERNEL {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                details: format!("weights must be [f, c, 3, 3], got {ws:?}"),
            });
        }
        if ws[1] != xs[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                details: format!("input has {} channels but weights expect {}", xs[1], ws[1]),
            });
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                details: format!("bias must be [{}], got {bs:?}", ws[0]),
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let f = ws[0];
        let out = kernels::conv2d_forward(
            &self.nodes[x.0].tensor.data,
            n,
            c,
            h,
            w,
            &self.nodes[weights.0].tensor.data,
            f,
            &self.nodes[bias.0].tensor.data,
            stride,
        );
        let shape = vec![n, f, conv_out_size(h, stride), conv_out_size(w, stride)];
        let tensor = Tensor::from_vec(shape, out).expect("conv2d output shape is consistent");
        Ok(self.push(Op::Conv2d { stride }, vec![x, weights, bias], tensor))
    }

    /// Fully connected layer: `out = x · weightsᵀ + bias`.
    ///
    /// `x`: `[n, d_in]`, `weights`: `[d_out, d_in]`, `bias`: `[d_out]`.
    pub fn dense(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.node(x)?.tensor.shape.clone();
        let ws = self.node(weights)?.tensor.shape.clone();
        let bs = self.node(bias)?.tensor.shape.clone();
        if xs.len() != 2 {
            return Err(TensorError::Rank {
                op: "dense",
                expected: 2,
                shape: xs,
            });
        }
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                details: format!("weights [d_out, {}] required, got {ws:?}", xs[1]),
            });
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                details: format!("bias must be [{}], got {bs:?}", ws[0]),
            });
        }
        let (n, d_in, d_out) = (xs[0], xs[1], ws[0]);
        let out = kernels::dense_forward(
            &self.nodes[x.0].tensor.data,
            n,
            d_in,
            &self.nodes[weights.0].tensor.data,
            d_out,
            &self.nodes[bias.0].tensor.data,
        );
        let tensor = Tensor::from_vec(vec![n, d_out], out).expect("dense output shape is consistent");
        Ok(self.push(Op::Dense, vec![x, weights, bias], tensor))
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let t = &self.node(x)?.tensor;
        let out: Vec<f32> = t.data.iter().map(|&v| v.max(0.0)).collect();
        let tensor = Tensor::from_vec(t.shape.clone(), out).expect("relu preserves shape");
        Ok(self.push(Op::Relu, vec![x], tensor))
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let sa = self.node(a)?.tensor.shape.clone();
        let sb = self.node(b)?.tensor.shape.clone();
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                details: format!("{sa:?} vs {sb:?}"),
            });
        }
        let out: Vec<f32> = self.nodes[a.0]
            .tensor
            .data
            .iter()
            .zip(&self.nodes[b.0].tensor.data)
            .map(|(&x, &y)| x + y)
            .collect();
        let tensor = Tensor::from_vec(sa, out).expect("add preserves shape");
        Ok(self.push(Op::Add, vec![a, b], tensor))
    }

    /// Concatenation of two tensors along `axis`; all other axes must match.
    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let sa = self.node(a)?.tensor.shape.clone();
        let sb = self.node(b)?.tensor.shape.clone();
        if sa.len() != sb.len() {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                details: format!("rank mismatch: {sa:?} vs {sb:?}"),
            });
        }
        if axis >= sa.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: sa.len(),
            });
        }
        for (i, (&da, &db)) in sa.iter().zip(&sb).enumerate() {
            if i != axis && da != db {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    details: format!("axis {i} differs: {sa:?} vs {sb:?}"),
                });
            }
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (la, lb) = (sa[axis], sb[axis]);
        let mut shape = sa.clone();
        shape[axis] = la + lb;
        let mut out = Vec::with_capacity(outer * (la + lb) * inner);
        let da = &self.nodes[a.0].tensor.data;
        let db = &self.nodes[b.0].tensor.data;
        for o in 0..outer {
            out.extend_from_slice(&da[o * la * inner..][..la * inner]);
            out.extend_from_slice(&db[o * lb * inner..][..lb * inner]);
        }
        let tensor = Tensor::from_vec(shape, out).expect("concat shape is consistent");
        Ok(self.push(Op::Concat { axis }, vec![a, b], tensor))
    }

    /// A contiguous slice `start..start+len` along `axis`.
    pub fn narrow(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let xs = self.node(x)?.tensor.shape.clone();
        if axis >= xs.len() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                rank: xs.len(),
            });
        }
        let size = xs[axis];
        let end = start.checked_add(len).filter(|&e| e <= size).ok_or(
            TensorError::NarrowRange {
                axis,
                start,
                end: start.saturating_add(len),
                size,
            },
        )?;
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let data = &self.nodes[x.0].tensor.data;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&data[(o * size + start) * inner..][..len * inner]);
        }
        let mut shape = xs;
        shape[axis] = end - start;
        let tensor = Tensor::from_vec(shape, out).expect("narrow shape is consistent");
        Ok(self.push(Op::Narrow { axis, start, len }, vec![x], tensor))
    }

    /// Collapses all axes after the first: `[n, d1, d2, ...]` → `[n, d1·d2·...]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let xs = self.node(x)?.tensor.shape.clone();
        if xs.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "flatten",
                details: format!("needs rank >= 2, got {xs:?}"),
            });
        }
        let rest: usize = xs[1..].iter().product();
        let data = self.nodes[x.0].tensor.data.clone();
        let tensor = Tensor::from_vec(vec![xs[0], rest], data).expect("flatten preserves length");
        Ok(self.push(Op::Flatten, vec![x], tensor))
    }

    /// Mean over all elements, as a `[1]` tensor. Summation runs in flat
    /// index order.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let t = &self.node(x)?.tensor;
        if t.data.is_empty() {
            return Err(TensorError::Empty { op: "mean" });
        }
        let mut s = 0.0f32;
        for &v in &t.data {
            s += v;
        }
        let tensor = Tensor::scalar(s / t.data.len() as f32);
        Ok(self.push(Op::Mean, vec![x], tensor))
    }

    /// Mean squared error between two same-shape tensors, as a `[1]` tensor.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        let sp = self.node(pred)?.tensor.shape.clone();
        let st = self.node(target)?.tensor.shape.clone();
        if sp != st {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                details: format!("{sp:?} vs {st:?}"),
            });
        }
        let p = &self.nodes[pred.0].tensor.data;
        let t = &self.nodes[target.0].tensor.data;
        if p.is_empty() {
            return Err(TensorError::Empty { op: "mse" });
        }
        let mut s = 0.0f32;
        for (&a, &b) in p.iter().zip(t) {
            let d = a - b;
            s += d * d;
        }
        let tensor = Tensor::scalar(s / p.len() as f32);
        Ok(self.push(Op::Mse, vec![pred, target], tensor))
    }

    /// Reverse sweep from a scalar loss node.
    ///
    /// Accumulates `d loss / d leaf` into every leaf tensor created with
    /// `requires_grad == true` that the loss depends on; gradients of other
    /// leaves are left unset. Repeated calls overwrite previous gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let loss_t = &self.node(loss)?.tensor;
        if loss_t.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_t.shape.clone(),
            });
        }
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].tensor.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue; // keep the buffer; assigned to the tensor below
            }
            let Some(gout) = std::mem::take(&mut grads[id]) else {
                continue;
            };
            self.backprop_node(id, &gout, &mut grads);
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.tensor.requires_grad {
                if let Some(g) = std::mem::take(&mut grads[id]) {
                    node.tensor.set_grad(g);
                }
            }
        }
        Ok(())
    }

    /// Adds `contrib` into the gradient buffer of `target` (only when that
    /// node participates in differentiation).
    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], target: NodeId, contrib: Vec<f32>) {
        if !self.nodes[target.0].tensor.requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(&contrib) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    fn backprop_node(&self, id: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[id];
        match node.op {
            Op::Leaf => unreachable!("leaves are handled by the sweep"),
            Op::Conv2d { stride } => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = &self.nodes[x.0].tensor.shape;
                let ws = &self.nodes[w.0].tensor.shape;
                let (gin, gw, gb) = kernels::conv2d_backward(
                    &self.nodes[x.0].tensor.data,
                    xs[0],
                    xs[1],
                    xs[2],
                    xs[3],
                    &self.nodes[w.0].tensor.data,
                    ws[0],
                    stride,
                    gout,
                    self.requires(x),
                    self.requires(w),
                );
                if let Some(gin) = gin {
                    self.accumulate(grads, x, gin);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, w, gw);
                }
                self.accumulate(grads, b, gb);
            }
            Op::Dense => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = &self.nodes[x.0].tensor.shape;
                let ws = &self.nodes[w.0].tensor.shape;
                let (gin, gw, gb) = kernels::dense_backward(
                    &self.nodes[x.0].tensor.data,
                    xs[0],
                    xs[1],
                    &self.nodes[w.0].tensor.data,
                    ws[0],
                    gout,
                    self.requires(x),
                );
                if let Some(gin) = gin {
                    self.accumulate(grads, x, gin);
                }
                self.accumulate(grads, w, gw);
                self.accumulate(grads, b, gb);
            }
            Op::Relu => {
                let x = node.inputs[0];
                let out = &node.tensor.data;
                let gin: Vec<f32> = gout
                    .iter()
                    .zip(out)
                    .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, x, gin);
            }
            Op::Add => {
                self.accumulate(grads, node.inputs[0], gout.to_vec());
                self.accumulate(grads, node.inputs[1], gout.to_vec());
            }
            Op::Concat { axis } => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let sa = &self.nodes[a.0].tensor.shape;
                let sb = &self.nodes[b.0].tensor.shape;
                let outer: usize = sa[..axis].iter().product();
                let inner: usize = sa[axis + 1..].iter().product();
                let (la, lb) = (sa[axis], sb[axis]);
                let mut ga = Vec::with_capacity(outer * la * inner);
                let mut gb = Vec::with_capacity(outer * lb * inner);
                for o in 0..outer {
                    let row = &gout[o * (la + lb) * inner..][..(la + lb) * inner];
                    ga.extend_from_slice(&row[..la * inner]);
                    gb.extend_from_slice(&row[la * inner..]);
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Narrow { axis, start, len } => {
                let x = node.inputs[0];
                let xs = &self.nodes[x.0].tensor.shape;
                let outer: usize = xs[..axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let size = xs[axis];
                let mut gin = vec![0.0f32; self.nodes[x.0].tensor.numel()];
                for o in 0..outer {
                    let dst = &mut gin[(o * size + start) * inner..][..len * inner];
                    let src = &gout[o * len * inner..][..len * inner];
                    dst.copy_from_slice(src);
                }
                self.accumulate(grads, x, gin);
            }
            Op::Flatten => {
                self.accumulate(grads, node.inputs[0], gout.to_vec());
            }
            Op::Mean => {
                let x = node.inputs[0];
                let n = self.nodes[x.0].tensor.numel();
                let g = gout[0] / n as f32;
                self.accumulate(grads, x, vec![g; n]);
            }
            Op::Mse => {
                let (p, t) = (node.inputs[0], node.inputs[1]);
                let pd = &self.nodes[p.0].tensor.data;
                let td = &self.nodes[t.0].tensor.data;
                let n = pd.len() as f32;
                let scale = 2.0 * gout[0] / n;
                if self.requires(p) {
                    let gp: Vec<f32> = pd.iter().zip(td).map(|(&a, &b)| scale * (a - b)).collect();
                    self.accumulate(grads, p, gp);
                }
                if self.requires(t) {
                    let gt: Vec<f32> = pd.iter().zip(td).map(|(&a, &b)| -scale * (a - b)).collect();
                    self.accumulate(grads, t, gt);
                }
            }
        }
    }
}
