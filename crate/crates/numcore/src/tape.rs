//! Reverse-mode automatic differentiation on a Wengert list.
//!
//! A [`Tape`] owns an append-only arena of nodes. Every operation pushes the
//! node that produced its result, so node indices are already a topological
//! order and [`Tape::backward`] is a single reverse sweep. Gradients
//! accumulate per node; a node that lies on no path to the loss keeps an
//! exactly-zero gradient.
//!
//! The tape is confined to one thread; tensors themselves are shareable
//! values (see [`crate::tensor::Tensor`]).

use crate::error::NumError;
use crate::params::ParamSet;
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `[.., d] + [d]`, bias broadcast over leading axes.
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    /// Softmax over the last axis.
    Softmax(NodeId),
    /// Softmax over the last axis with positions masked out entirely
    /// (mask 0 ⇒ probability exactly 0). The backward rule only needs the
    /// output probabilities, so the mask is not kept.
    MaskedSoftmax(NodeId),
    MeanAxis(NodeId, usize),
    /// Argmax per output element recorded for the backward route.
    MaxAxis(NodeId, usize, Vec<usize>),
    MeanAll(NodeId),
    SumAll(NodeId),
    Concat(Vec<NodeId>, usize),
    /// Stack rank-1 tensors of equal length into a matrix.
    StackRows(Vec<NodeId>),
    /// Keep mask recorded; kept activations were scaled by 1/(1-p).
    Dropout(NodeId, f64, Vec<u8>),
    /// Row gather from a rank-2 tensor.
    GatherRows(NodeId, Vec<usize>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        /// Per-row (mean, inv_std) cached from the forward pass.
        stats: Vec<(f64, f64)>,
    },
    Transpose(NodeId),
    Reshape(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
}

/// Reverse-mode tape.
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    /// Parameter name → leaf node, in binding order.
    bindings: Vec<(String, NodeId)>,
}

impl Tape {
    /// Tape that records provenance for backward passes.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, bindings: Vec::new() }
    }

    /// Forward-only tape: results are stored as leaves and cannot be
    /// differentiated.
    pub fn new_eval() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, bindings: Vec::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let op = if self.grad_enabled { op } else { Op::Leaf };
        self.nodes.push(Node { op, value, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a constant/input leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Bind a named parameter as a leaf and remember the binding so its
    /// gradient can later be pushed back into the [`ParamSet`].
    pub fn bind_param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId, NumError> {
        let tensor = params
            .get(name)
            .ok_or_else(|| NumError::UnknownParameter { name: name.to_string() })?
            .value
            .clone();
        let id = self.leaf(tensor);
        self.bindings.push((name.to_string(), id));
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass(es) w.r.t. `id`.
    ///
    /// Exactly zero for nodes on no path to the loss.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.shape()),
        }
    }

    /// Add the gradients of all bound parameters into the param set.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet) -> Result<(), NumError> {
        for (name, id) in &self.bindings {
            params.accumulate_grad(name, &self.grad(*id))?;
        }
        Ok(())
    }

    fn add_into(slot: &mut Option<Tensor>, shape: &[usize], update: impl Fn(&mut [f64])) {
        let grad = slot.get_or_insert_with(|| Tensor::zeros(shape));
        update(grad.data_mut());
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Each call runs on fresh scratch buffers and then adds the result into
    /// the per-node accumulators, so calling twice without a reset doubles
    /// every gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NumError> {
        if !self.grad_enabled {
            return Err(NumError::GradModeOff);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NumError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut scratch: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        scratch[loss.0] = Some(Tensor::scalar(1.0));

        // Node indices are a topological order by construction, so the
        // reverse index sweep visits consumers strictly before producers.
        for idx in (0..self.nodes.len()).rev() {
            let out_grad = match &scratch[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.propagate(idx, &out_grad, &mut scratch);
        }
        for (node, sg) in self.nodes.iter_mut().zip(scratch) {
            if let Some(sg) = sg {
                let shape = node.value.shape().to_vec();
                Self::add_into(&mut node.grad, &shape, |g| {
                    for (gi, si) in g.iter_mut().zip(sg.data()) {
                        *gi += si;
                    }
                });
            }
        }
        Ok(())
    }

    fn propagate(&self, out_idx: usize, dz: &Tensor, scratch: &mut [Option<Tensor>]) {
        let op = &self.nodes[out_idx].op;
        let g = dz.data();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].value.shape()[1];
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                // dA = dC · Bᵀ
                let shape_a = av.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape_a, |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv.data()[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                // dB = Aᵀ · dC
                let shape_b = bv.shape().to_vec();
                Self::add_into(&mut scratch[b.0], &shape_b, |db| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av.data()[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] += s;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    let shape = self.nodes[id.0].value.shape().to_vec();
                    Self::add_into(&mut scratch[id.0], &shape, |d| {
                        for (di, gi) in d.iter_mut().zip(g) {
                            *di += gi;
                        }
                    });
                }
            }
            Op::AddBias(a, b) => {
                let shape_a = self.nodes[a.0].value.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape_a, |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
                let shape_b = self.nodes[b.0].value.shape().to_vec();
                let d = shape_b[0];
                Self::add_into(&mut scratch[b.0], &shape_b, |db| {
                    for (i, gi) in g.iter().enumerate() {
                        db[i % d] += gi;
                    }
                });
            }
            Op::Sub(a, b) => {
                let shape_a = self.nodes[a.0].value.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape_a, |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
                let shape_b = self.nodes[b.0].value.shape().to_vec();
                Self::add_into(&mut scratch[b.0], &shape_b, |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di -= gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let shape = av.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv.data()[i];
                    }
                });
                Self::add_into(&mut scratch[b.0], &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av.data()[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * c;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[out_idx].value.clone();
                let shape = y.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..d.len() {
                        let yi = y.data()[i];
                        d[i] += g[i] * (1.0 - yi * yi);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[out_idx].value.clone();
                let shape = y.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..d.len() {
                        let yi = y.data()[i];
                        d[i] += g[i] * yi * (1.0 - yi);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.nodes[a.0].value.clone();
                let shape = x.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * if x.data()[i] > 0.0 { 1.0 } else { *slope };
                    }
                });
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                let y = self.nodes[out_idx].value.clone();
                let shape = y.shape().to_vec();
                let cols = *shape.last().unwrap();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for row in 0..y.numel() / cols {
                        let o = row * cols;
                        let mut dot = 0.0;
                        for j in 0..cols {
                            dot += g[o + j] * y.data()[o + j];
                        }
                        for j in 0..cols {
                            d[o + j] += y.data()[o + j] * (g[o + j] - dot);
                        }
                    }
                });
            }
            Op::MeanAxis(a, axis) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let (rows, cols) = (shape[0], shape[1]);
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    if *axis == 0 {
                        for i in 0..rows {
                            for j in 0..cols {
                                d[i * cols + j] += g[j] / rows as f64;
                            }
                        }
                    } else {
                        for i in 0..rows {
                            for j in 0..cols {
                                d[i * cols + j] += g[i] / cols as f64;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis(a, _axis, argmax) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for (out, &src) in argmax.iter().enumerate() {
                        d[src] += g[out];
                    }
                });
            }
            Op::MeanAll(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let n: usize = shape.iter().product();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for di in d.iter_mut() {
                        *di += g[0] / n as f64;
                    }
                });
            }
            Op::SumAll(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for di in d.iter_mut() {
                        *di += g[0];
                    }
                });
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for id in parts {
                        let shape = self.nodes[id.0].value.shape().to_vec();
                        let n = self.nodes[id.0].value.numel();
                        Self::add_into(&mut scratch[id.0], &shape, |d| {
                            for i in 0..n {
                                d[i] += g[offset + i];
                            }
                        });
                        offset += n;
                    }
                } else {
                    // axis 1, rank-2 parts with equal row count
                    let rows = self.nodes[parts[0].0].value.shape()[0];
                    let total_cols: usize =
                        parts.iter().map(|id| self.nodes[id.0].value.shape()[1]).sum();
                    let mut col_offset = 0;
                    for id in parts {
                        let shape = self.nodes[id.0].value.shape().to_vec();
                        let cols = shape[1];
                        Self::add_into(&mut scratch[id.0], &shape, |d| {
                            for i in 0..rows {
                                for j in 0..cols {
                                    d[i * cols + j] += g[i * total_cols + col_offset + j];
                                }
                            }
                        });
                        col_offset += cols;
                    }
                }
            }
            Op::StackRows(parts) => {
                let cols = self.nodes[parts[0].0].value.numel();
                for (r, id) in parts.iter().enumerate() {
                    let shape = self.nodes[id.0].value.shape().to_vec();
                    Self::add_into(&mut scratch[id.0], &shape, |d| {
                        for j in 0..cols {
                            d[j] += g[r * cols + j];
                        }
                    });
                }
            }
            Op::Dropout(a, p, mask) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let keep = 1.0 / (1.0 - p);
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..d.len() {
                        if mask[i] == 1 {
                            d[i] += g[i] * keep;
                        }
                    }
                });
            }
            Op::GatherRows(a, indices) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let cols = shape[1];
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for (r, &src) in indices.iter().enumerate() {
                        for j in 0..cols {
                            d[src * cols + j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let xv = self.nodes[x.0].value.clone();
                let gv = self.nodes[gamma.0].value.clone();
                let cols = *xv.shape().last().unwrap();
                let rows = xv.numel() / cols;

                let shape_g = gv.shape().to_vec();
                Self::add_into(&mut scratch[gamma.0], &shape_g, |dg| {
                    for r in 0..rows {
                        let (mu, inv_std) = stats[r];
                        for j in 0..cols {
                            let xh = (xv.data()[r * cols + j] - mu) * inv_std;
                            dg[j] += g[r * cols + j] * xh;
                        }
                    }
                });
                let shape_b = self.nodes[beta.0].value.shape().to_vec();
                Self::add_into(&mut scratch[beta.0], &shape_b, |db| {
                    for r in 0..rows {
                        for j in 0..cols {
                            db[j] += g[r * cols + j];
                        }
                    }
                });
                let shape_x = xv.shape().to_vec();
                Self::add_into(&mut scratch[x.0], &shape_x, |dx| {
                    for r in 0..rows {
                        let (mu, inv_std) = stats[r];
                        let o = r * cols;
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xh = 0.0;
                        for j in 0..cols {
                            let dy = g[o + j] * gv.data()[j];
                            let xh = (xv.data()[o + j] - mu) * inv_std;
                            sum_dy += dy;
                            sum_dy_xh += dy * xh;
                        }
                        let nc = cols as f64;
                        for j in 0..cols {
                            let dy = g[o + j] * gv.data()[j];
                            let xh = (xv.data()[o + j] - mu) * inv_std;
                            dx[o + j] +=
                                inv_std * (dy - sum_dy / nc - xh * sum_dy_xh / nc);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                let (m, n) = (shape[0], shape[1]);
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                Self::add_into(&mut scratch[a.0], &shape, |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

// ── Forward operations ──────────────────────────────────────────────────────

impl Tape {
    fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumError {
        NumError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }

    /// `[m,k] · [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av.data()[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * bv.data()[p * n + j];
                }
            }
        }
        Ok(self.push(Op::Matmul(a, b), Tensor::from_vec(vec![m, n], out)?))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa != sb {
            return Err(Self::shape_err("add", &sa, &sb));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a, b), Tensor::from_vec(sa, out)?))
    }

    /// Broadcast a rank-1 bias over the last axis of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NumError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(bias).shape().to_vec());
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(Self::shape_err("add_bias", &sa, &sb));
        }
        let d = sb[0];
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + self.value(bias).data()[i % d])
            .collect();
        Ok(self.push(Op::AddBias(a, bias), Tensor::from_vec(sa, out)?))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa != sb {
            return Err(Self::shape_err("sub", &sa, &sb));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub(a, b), Tensor::from_vec(sa, out)?))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa != sb {
            return Err(Self::shape_err("mul", &sa, &sb));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a, b), Tensor::from_vec(sa, out)?))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), out)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), out)
    }

    /// Numerically stable softmax over the last axis (rank 1 or 2).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let shape = self.value(a).shape().to_vec();
        if shape.is_empty() {
            return Err(Self::shape_err("softmax", &shape, &[]));
        }
        let cols = *shape.last().unwrap();
        let v = self.value(a).clone();
        let mut out = vec![0.0; v.numel()];
        for row in 0..v.numel() / cols {
            let o = row * cols;
            softmax_row(&v.data()[o..o + cols], None, &mut out[o..o + cols]);
        }
        Ok(self.push(Op::Softmax(a), Tensor::from_vec(shape, out)?))
    }

    /// Softmax over the last axis where `mask[j] == 0` positions get
    /// probability exactly zero. At least one position per row must be valid.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &[u8]) -> Result<NodeId, NumError> {
        let shape = self.value(a).shape().to_vec();
        let cols = *shape.last().ok_or_else(|| Self::shape_err("masked_softmax", &shape, &[]))?;
        if mask.len() != cols {
            return Err(Self::shape_err("masked_softmax", &shape, &[mask.len()]));
        }
        if mask.iter().all(|&m| m == 0) {
            return Err(NumError::InvalidArgument {
                op: "masked_softmax",
                message: "mask has no valid positions".into(),
            });
        }
        let v = self.value(a).clone();
        let mut out = vec![0.0; v.numel()];
        for row in 0..v.numel() / cols {
            let o = row * cols;
            softmax_row(&v.data()[o..o + cols], Some(mask), &mut out[o..o + cols]);
        }
        Ok(self.push(Op::MaskedSoftmax(a), Tensor::from_vec(shape, out)?))
    }

    /// Mean over one axis of a rank-2 tensor.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, NumError> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(Self::shape_err("mean_axis", &shape, &[]));
        }
        if axis > 1 {
            return Err(NumError::BadAxis { op: "mean_axis", axis, rank: 2 });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let v = self.value(a).clone();
        let out = if axis == 0 {
            let mut out = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j] += v.data()[i * cols + j];
                }
            }
            for x in out.iter_mut() {
                *x /= rows as f64;
            }
            Tensor::from_vec(vec![cols], out)?
        } else {
            let mut out = vec![0.0; rows];
            for i in 0..rows {
                let mut s = 0.0;
                for j in 0..cols {
                    s += v.data()[i * cols + j];
                }
                out[i] = s / cols as f64;
            }
            Tensor::from_vec(vec![rows], out)?
        };
        Ok(self.push(Op::MeanAxis(a, axis), out))
    }

    /// Max over one axis of a rank-2 tensor (gradient routes to the first
    /// maximal element).
    pub fn max_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, NumError> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(Self::shape_err("max_axis", &shape, &[]));
        }
        if axis > 1 {
            return Err(NumError::BadAxis { op: "max_axis", axis, rank: 2 });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let v = self.value(a).clone();
        let (mut out, mut argmax);
        if axis == 0 {
            out = vec![f64::NEG_INFINITY; cols];
            argmax = vec![0usize; cols];
            for i in 0..rows {
                for j in 0..cols {
                    let x = v.data()[i * cols + j];
                    if x > out[j] {
                        out[j] = x;
                        argmax[j] = i * cols + j;
                    }
                }
            }
        } else {
            out = vec![f64::NEG_INFINITY; rows];
            argmax = vec![0usize; rows];
            for i in 0..rows {
                for j in 0..cols {
                    let x = v.data()[i * cols + j];
                    if x > out[i] {
                        out[i] = x;
                        argmax[i] = i * cols + j;
                    }
                }
            }
        }
        let len = out.len();
        Ok(self.push(
            Op::MaxAxis(a, axis, argmax),
            Tensor::from_vec(vec![len], out)?,
        ))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let mean = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::MeanAll(a), Tensor::scalar(mean))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let sum = v.data().iter().sum::<f64>();
        self.push(Op::SumAll(a), Tensor::scalar(sum))
    }

    /// Concatenate along `axis` (0 for any rank, 1 for rank-2).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, NumError> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "concat",
                message: "empty part list".into(),
            });
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis == 0 {
            let mut rows = 0usize;
            let mut data = Vec::new();
            for id in parts {
                let s = self.value(*id).shape();
                if s[1..] != first[1..] {
                    return Err(Self::shape_err("concat", &first, s));
                }
                rows += s.first().copied().unwrap_or(1);
                data.extend_from_slice(self.value(*id).data());
            }
            let mut shape = first.clone();
            if shape.is_empty() {
                shape = vec![rows];
            } else {
                shape[0] = rows;
            }
            Ok(self.push(Op::Concat(parts.to_vec(), 0), Tensor::from_vec(shape, data)?))
        } else if axis == 1 {
            let rows = first[0];
            let mut total_cols = 0usize;
            for id in parts {
                let s = self.value(*id).shape();
                if s.len() != 2 || s[0] != rows {
                    return Err(Self::shape_err("concat", &first, s));
                }
                total_cols += s[1];
            }
            let mut data = vec![0.0; rows * total_cols];
            let mut col_offset = 0;
            for id in parts {
                let v = self.value(*id).clone();
                let cols = v.shape()[1];
                for i in 0..rows {
                    for j in 0..cols {
                        data[i * total_cols + col_offset + j] = v.data()[i * cols + j];
                    }
                }
                col_offset += cols;
            }
            Ok(self.push(
                Op::Concat(parts.to_vec(), 1),
                Tensor::from_vec(vec![rows, total_cols], data)?,
            ))
        } else {
            Err(NumError::BadAxis { op: "concat", axis, rank: first.len() })
        }
    }

    /// Stack rank-1 tensors of equal length into an `[m, k]` matrix.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumError> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "stack_rows",
                message: "empty part list".into(),
            });
        }
        let k = self.value(parts[0]).numel();
        let mut data = Vec::with_capacity(parts.len() * k);
        for id in parts {
            let v = self.value(*id);
            if v.rank() != 1 || v.numel() != k {
                return Err(Self::shape_err("stack_rows", &[k], v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(
            Op::StackRows(parts.to_vec()),
            Tensor::from_vec(vec![parts.len(), k], data)?,
        ))
    }

    /// Inverted dropout. In eval mode (`train == false`) or at `p == 0` this
    /// is the identity and records nothing.
    pub fn dropout(
        &mut self,
        a: NodeId,
        p: f64,
        train: bool,
        rng: &mut DetRng,
    ) -> Result<NodeId, NumError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::InvalidArgument {
                op: "dropout",
                message: format!("p = {p} outside [0, 1)"),
            });
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let v = self.value(a).clone();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<u8> = (0..v.numel()).map(|_| u8::from(!rng.bernoulli(p))).collect();
        let out: Vec<f64> = v
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, &m)| if m == 1 { x * keep } else { 0.0 })
            .collect();
        let shape = v.shape().to_vec();
        Ok(self.push(Op::Dropout(a, p, mask), Tensor::from_vec(shape, out)?))
    }

    /// Gather rows of a rank-2 tensor: `out[r] = a[indices[r]]`.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId, NumError> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(Self::shape_err("gather_rows", &shape, &[indices.len()]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let v = self.value(a).clone();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &idx in indices {
            if idx >= rows {
                return Err(NumError::IndexOutOfRange { index: idx, rows });
            }
            data.extend_from_slice(&v.data()[idx * cols..(idx + 1) * cols]);
        }
        Ok(self.push(
            Op::GatherRows(a, indices.to_vec()),
            Tensor::from_vec(vec![indices.len(), cols], data)?,
        ))
    }

    /// Per-row layer normalization over the last axis with learnable scale
    /// and shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, NumError> {
        let shape = self.value(x).shape().to_vec();
        let cols = *shape.last().ok_or_else(|| Self::shape_err("layer_norm", &shape, &[]))?;
        let sg = self.value(gamma).shape().to_vec();
        let sb = self.value(beta).shape().to_vec();
        if sg != vec![cols] || sb != vec![cols] {
            return Err(Self::shape_err("layer_norm", &shape, &sg));
        }
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let rows = xv.numel() / cols;
        let mut out = vec![0.0; xv.numel()];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let o = r * cols;
            let row = &xv.data()[o..o + cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            stats.push((mu, inv_std));
            for j in 0..cols {
                out[o + j] = gv.data()[j] * (row[j] - mu) * inv_std + bv.data()[j];
            }
        }
        Ok(self.push(
            Op::LayerNorm { x, gamma, beta, stats },
            Tensor::from_vec(shape, out)?,
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumError> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(Self::shape_err("transpose", &shape, &[]));
        }
        let (m, n) = (shape[0], shape[1]);
        let v = self.value(a).clone();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = v.data()[i * n + j];
            }
        }
        Ok(self.push(Op::Transpose(a), Tensor::from_vec(vec![n, m], data)?))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NumError> {
        let old = self.value(a).shape().to_vec();
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() {
            return Err(Self::shape_err("reshape", &old, shape));
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(Op::Reshape(a), Tensor::from_vec(shape.to_vec(), data)?))
    }

    // ── Composites ──────────────────────────────────────────────────────

    /// `x · W + b` for a rank-1 input: `[in] · [in,out] + [out] → [out]`.
    pub fn linear(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId, NumError> {
        let in_dim = self.value(x).numel();
        let row = self.reshape(x, &[1, in_dim])?;
        let prod = self.matmul(row, w)?;
        let out_dim = self.value(prod).shape()[1];
        let biased = self.add_bias(prod, b)?;
        self.reshape(biased, &[out_dim])
    }

    /// Dot product of two rank-1 tensors as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumError> {
        let prod = self.mul(a, b)?;
        Ok(self.sum_all(prod))
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NumError> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean_all(sq))
    }
}

/// One row of stable softmax; `mask` positions with 0 get exactly 0.
fn softmax_row(x: &[f64], mask: Option<&[u8]>, out: &mut [f64]) {
    let valid = |j: usize| mask.map_or(true, |m| m[j] == 1);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in x.iter().enumerate() {
        if valid(j) && v > max {
            max = v;
        }
    }
    let mut denom = 0.0;
    for (j, &v) in x.iter().enumerate() {
        if valid(j) {
            let e = (v - max).exp();
            out[j] = e;
            denom += e;
        } else {
            out[j] = 0.0;
        }
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}
