//! Expression graph with reverse-mode differentiation.
//!
//! Nodes are appended in topological order (operands always precede their
//! consumers), so forward is a single sweep and backward a reverse sweep.
//! Values are cached per node; `invalidate` drops computed values so the
//! same graph can be re-evaluated after parameters change.

use alloc::vec::Vec;

use crate::error::DiffError;
use crate::math;
use crate::params::{ParameterStore, SlotId};
use crate::tensor::{Real, Tensor};

/// Clamp bound for probabilities inside binary cross-entropy.
#[cfg(not(feature = "f32"))]
const BCE_CLAMP: Real = 1e-12;
#[cfg(feature = "f32")]
const BCE_CLAMP: Real = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Bound or placeholder input; carries no gradient of interest.
    Input,
    /// Reference to a parameter slot; values read from the store.
    Param(SlotId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// Column-wise softmax.
    Softmax(NodeId),
    Hadamard(NodeId, NodeId),
    Add(NodeId, NodeId),
    ScalarMul(Real, NodeId),
    Transpose(NodeId),
    /// Identity forward, zero gradient flow.
    Detach(NodeId),
    /// Mean over all entries, scalar output.
    Mean(NodeId),
    /// Categorical cross-entropy of a logit column against a target
    /// distribution (log-softmax computed internally).
    CrossEntropy { logits: NodeId, target: NodeId },
    /// Mean element-wise binary cross-entropy of probabilities against
    /// targets in [0, 1].
    BinaryCrossEntropy { probs: NodeId, target: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: [usize; 2],
    /// Owned for inputs, cached for computed ops, absent for params and
    /// unbound placeholders.
    value: Option<Tensor>,
    /// True when `value` was produced by forward (and so cleared by
    /// `invalidate`); input bindings stay.
    computed: bool,
    grad: Option<Tensor>,
}

/// Receiver for parameter gradients produced by backward.
pub trait GradSink {
    fn accumulate(&mut self, slot: SlotId, grad: &Tensor);
}

/// Per-slot gradient accumulator detached from the store. Each worker in a
/// data-parallel reduction owns one; buffers merge into the store in a
/// fixed order so results do not depend on thread count.
pub struct GradBuffer {
    grads: Vec<Option<Tensor>>,
}

impl GradBuffer {
    pub fn new(slot_count: usize) -> Self {
        let mut grads = Vec::with_capacity(slot_count);
        grads.resize_with(slot_count, || None);
        GradBuffer { grads }
    }

    pub fn get(&self, slot: SlotId) -> Option<&Tensor> {
        self.grads.get(slot.index()).and_then(|g| g.as_ref())
    }

    pub fn entries(&self) -> impl Iterator<Item = (SlotId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (SlotId::from_index(i), t)))
    }
}

impl GradSink for GradBuffer {
    fn accumulate(&mut self, slot: SlotId, grad: &Tensor) {
        match &mut self.grads[slot.index()] {
            Some(acc) => add_in_place(acc, grad),
            entry @ None => *entry = Some(grad.clone()),
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape_of(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.idx()].shape
    }

    fn push(&mut self, op: Op, shape: [usize; 2], value: Option<Tensor>) -> NodeId {
        let computed = false;
        self.nodes.push(Node {
            op,
            shape,
            value,
            computed,
            grad: None,
        });
        NodeId((self.nodes.len() - 1) as u32)
    }

    /// Bound input node.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        let shape = [value.rows(), value.cols()];
        self.push(Op::Input, shape, Some(value))
    }

    /// Declared but unbound input; forward fails until `bind` is called.
    pub fn placeholder(&mut self, rows: usize, cols: usize) -> NodeId {
        self.push(Op::Input, [rows, cols], None)
    }

    pub fn bind(&mut self, id: NodeId, value: Tensor) -> Result<(), DiffError> {
        let node = &mut self.nodes[id.idx()];
        if !matches!(node.op, Op::Input) || node.shape != [value.rows(), value.cols()] {
            return Err(DiffError::ShapeMismatch {
                op: "bind",
                lhs: node.shape.to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        node.value = Some(value);
        Ok(())
    }

    pub fn param(&mut self, store: &ParameterStore, slot: SlotId) -> NodeId {
        let t = store.value(slot);
        self.push(Op::Param(slot), [t.rows(), t.cols()], None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(self.push(Op::MatMul(a, b), [sa[0], sb[1]], None))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape_of(x);
        self.push(Op::Relu(x), s, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let s = self.shape_of(x);
        self.push(Op::Sigmoid(x), s, None)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let s = self.shape_of(x);
        self.push(Op::Softmax(x), s, None)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op: "hadamard",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(self.push(Op::Hadamard(a, b), sa, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(self.push(Op::Add(a, b), sa, None))
    }

    pub fn scalar_mul(&mut self, k: Real, x: NodeId) -> NodeId {
        let s = self.shape_of(x);
        self.push(Op::ScalarMul(k, x), s, None)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let s = self.shape_of(x);
        self.push(Op::Transpose(x), [s[1], s[0]], None)
    }

    /// Captures the value of `x` as a constant: identical forward value,
    /// no gradient flow. The captured value is frozen across `invalidate`,
    /// so finite-difference probes see it as the constant it represents.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let s = self.shape_of(x);
        self.push(Op::Detach(x), s, None)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x), [1, 1], None)
    }

    pub fn cross_entropy(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId, DiffError> {
        let (sl, st) = (self.shape_of(logits), self.shape_of(target));
        if sl != st || sl[1] != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "cross-entropy",
                lhs: sl.to_vec(),
                rhs: st.to_vec(),
            });
        }
        Ok(self.push(Op::CrossEntropy { logits, target }, [1, 1], None))
    }

    pub fn binary_cross_entropy(
        &mut self,
        probs: NodeId,
        target: NodeId,
    ) -> Result<NodeId, DiffError> {
        let (sp, st) = (self.shape_of(probs), self.shape_of(target));
        if sp != st {
            return Err(DiffError::ShapeMismatch {
                op: "binary-cross-entropy",
                lhs: sp.to_vec(),
                rhs: st.to_vec(),
            });
        }
        Ok(self.push(Op::BinaryCrossEntropy { probs, target }, [1, 1], None))
    }

    /// Drops every computed value, keeping input bindings and captured
    /// detach constants. Re-running forward afterwards re-evaluates the
    /// graph against the current store.
    pub fn invalidate(&mut self) {
        for node in &mut self.nodes {
            if node.computed && !matches!(node.op, Op::Detach(_)) {
                node.value = None;
                node.computed = false;
            }
        }
    }

    /// Cached or bound value of a node (params live in the store and
    /// return `None` here).
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.idx()].value.as_ref()
    }

    /// Gradient recorded at a node by the latest backward pass.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.idx()].grad.as_ref()
    }

    fn value_ref<'a>(
        &'a self,
        id: NodeId,
        store: &'a ParameterStore,
    ) -> Result<&'a Tensor, DiffError> {
        let node = &self.nodes[id.idx()];
        match node.op {
            Op::Param(slot) => Ok(store.value(slot)),
            _ => node.value.as_ref().ok_or(DiffError::UnboundInput { node: id.idx() }),
        }
    }

    /// Evaluates every node up to `root`, caching values. Deterministic:
    /// the same bindings and parameters always produce the same bits.
    pub fn forward<'a>(
        &'a mut self,
        root: NodeId,
        store: &'a ParameterStore,
    ) -> Result<&'a Tensor, DiffError> {
        for i in 0..=root.idx() {
            if self.nodes[i].value.is_some() || matches!(self.nodes[i].op, Op::Param(_)) {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Input) {
                // Unbound placeholder: only an error if something reads it.
                continue;
            }
            let out = self.compute(i, store)?;
            let node = &mut self.nodes[i];
            node.value = Some(out);
            node.computed = true;
        }
        self.value_ref(root, store)
    }

    fn compute(&self, i: usize, store: &ParameterStore) -> Result<Tensor, DiffError> {
        let op = &self.nodes[i].op;
        Ok(match *op {
            Op::Input | Op::Param(_) => unreachable!("handled by forward"),
            Op::MatMul(a, b) => {
                let (a, b) = (self.value_ref(a, store)?, self.value_ref(b, store)?);
                matmul_nn(a, b)
            }
            Op::Relu(x) => map(self.value_ref(x, store)?, |v| if v > 0.0 { v } else { 0.0 }),
            Op::Sigmoid(x) => map(self.value_ref(x, store)?, sigmoid),
            Op::Softmax(x) => softmax_columns(self.value_ref(x, store)?),
            Op::Hadamard(a, b) => {
                let (a, b) = (self.value_ref(a, store)?, self.value_ref(b, store)?);
                zip(a, b, |x, y| x * y)
            }
            Op::Add(a, b) => {
                let (a, b) = (self.value_ref(a, store)?, self.value_ref(b, store)?);
                zip(a, b, |x, y| x + y)
            }
            Op::ScalarMul(k, x) => map(self.value_ref(x, store)?, |v| k * v),
            Op::Transpose(x) => self.value_ref(x, store)?.transposed(),
            Op::Detach(x) => self.value_ref(x, store)?.clone(),
            Op::Mean(x) => {
                let x = self.value_ref(x, store)?;
                let sum: Real = x.data().iter().sum();
                Tensor::scalar(sum / x.len() as Real)
            }
            Op::CrossEntropy { logits, target } => {
                let (l, t) = (self.value_ref(logits, store)?, self.value_ref(target, store)?);
                Tensor::scalar(cross_entropy_value(l, t))
            }
            Op::BinaryCrossEntropy { probs, target } => {
                let (p, t) = (self.value_ref(probs, store)?, self.value_ref(target, store)?);
                Tensor::scalar(bce_value(p, t))
            }
        })
    }

    /// Reverse sweep from a scalar root. Parameter gradients are added
    /// into `sink`; node gradients stay on the graph for inspection.
    /// Gradients accumulate across calls until the sink is cleared.
    pub fn backward(
        &mut self,
        root: NodeId,
        store: &ParameterStore,
        sink: &mut dyn GradSink,
    ) -> Result<(), DiffError> {
        {
            let node = &self.nodes[root.idx()];
            let value = match node.op {
                Op::Param(slot) => Some(store.value(slot)),
                _ => node.value.as_ref(),
            };
            let value = value.ok_or(DiffError::BackwardBeforeForward)?;
            if !value.is_scalar() {
                return Err(DiffError::NonScalarRoot {
                    shape: value.shape().to_vec(),
                });
            }
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.idx()].grad = Some(Tensor::scalar(1.0));

        for i in (0..=root.idx()).rev() {
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let mut deltas: Vec<(NodeId, Tensor)> = Vec::new();
            match self.nodes[i].op {
                Op::Input | Op::Detach(_) => {}
                Op::Param(slot) => sink.accumulate(slot, &g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value_ref(a, store)?, self.value_ref(b, store)?);
                    deltas.push((a, matmul_nt(&g, vb)));
                    deltas.push((b, matmul_tn(va, &g)));
                }
                Op::Relu(x) => {
                    let vx = self.value_ref(x, store)?;
                    deltas.push((x, zip(&g, vx, |gi, xi| if xi > 0.0 { gi } else { 0.0 })));
                }
                Op::Sigmoid(x) => {
                    let s = self.nodes[i].value.as_ref().expect("forward ran");
                    deltas.push((x, zip(&g, s, |gi, si| gi * si * (1.0 - si))));
                }
                Op::Softmax(x) => {
                    let s = self.nodes[i].value.as_ref().expect("forward ran");
                    deltas.push((x, softmax_backward(&g, s)));
                }
                Op::Hadamard(a, b) => {
                    let (va, vb) = (self.value_ref(a, store)?, self.value_ref(b, store)?);
                    deltas.push((a, zip(&g, vb, |gi, bi| gi * bi)));
                    deltas.push((b, zip(&g, va, |gi, ai| gi * ai)));
                }
                Op::Add(a, b) => {
                    deltas.push((a, g.clone()));
                    deltas.push((b, g.clone()));
                }
                Op::ScalarMul(k, x) => deltas.push((x, map(&g, |gi| k * gi))),
                Op::Transpose(x) => deltas.push((x, g.transposed())),
                Op::Mean(x) => {
                    let n = {
                        let s = self.shape_of(x);
                        (s[0] * s[1]) as Real
                    };
                    let gv = g.item() / n;
                    let s = self.shape_of(x);
                    deltas.push((x, Tensor::filled(s[0], s[1], gv)));
                }
                Op::CrossEntropy { logits, target } => {
                    let (l, t) = (self.value_ref(logits, store)?, self.value_ref(target, store)?);
                    let (dl, dt) = cross_entropy_backward(l, t, g.item());
                    deltas.push((logits, dl));
                    deltas.push((target, dt));
                }
                Op::BinaryCrossEntropy { probs, target } => {
                    let (p, t) = (self.value_ref(probs, store)?, self.value_ref(target, store)?);
                    let (dp, dt) = bce_backward(p, t, g.item());
                    deltas.push((probs, dp));
                    deltas.push((target, dt));
                }
            }
            self.nodes[i].grad = Some(g);
            for (child, delta) in deltas {
                match &mut self.nodes[child.idx()].grad {
                    Some(acc) => add_in_place(acc, &delta),
                    entry @ None => *entry = Some(delta),
                }
            }
        }
        Ok(())
    }

    /// Distinct parameter slots referenced by this graph.
    pub fn param_slots(&self) -> Vec<SlotId> {
        let mut out: Vec<SlotId> = Vec::new();
        for node in &self.nodes {
            if let Op::Param(slot) = node.op {
                if !out.contains(&slot) {
                    out.push(slot);
                }
            }
        }
        out
    }

    /// Backward pass that lands parameter gradients directly in the store,
    /// adding to whatever is already accumulated there.
    pub fn backward_into_store(
        &mut self,
        root: NodeId,
        store: &mut ParameterStore,
    ) -> Result<(), DiffError> {
        let mut buffer = GradBuffer::new(store.len());
        self.backward(root, store, &mut buffer)?;
        store.merge_grads(&buffer);
        Ok(())
    }
}

fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(Real) -> Real) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(Real, Real) -> Real) -> Tensor {
    debug_assert!(a.same_shape(b));
    let mut out = a.clone();
    for (o, y) in out.data_mut().iter_mut().zip(b.data()) {
        *o = f(*o, *y);
    }
    out
}

fn add_in_place(acc: &mut Tensor, delta: &Tensor) {
    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
        *a += d;
    }
}

/// C[m,n] = A[m,k] * B[k,n], row-major ikj order.
fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    let cd = c.data_mut();
    for i in 0..m {
        let crow = &mut cd[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T (row-dot-row).
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut c = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    let cd = c.data_mut();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            cd[i * n + j] = s;
        }
    }
    c
}

/// C[m,n] = A[k,m]^T * B[k,n].
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    let cd = c.data_mut();
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let crow = &mut cd[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Column-wise softmax with max subtraction.
fn softmax_columns(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    let d = out.data_mut();
    for j in 0..c {
        let mut mx = Real::NEG_INFINITY;
        for i in 0..r {
            mx = mx.max(d[i * c + j]);
        }
        let mut sum = 0.0;
        for i in 0..r {
            let e = math::exp(d[i * c + j] - mx);
            d[i * c + j] = e;
            sum += e;
        }
        for i in 0..r {
            d[i * c + j] /= sum;
        }
    }
    out
}

/// dx = s .* (g - <g, s> per column).
fn softmax_backward(g: &Tensor, s: &Tensor) -> Tensor {
    let (r, c) = (s.rows(), s.cols());
    let mut out = Tensor::zeros(r, c);
    for j in 0..c {
        let mut dot = 0.0;
        for i in 0..r {
            dot += g.get(i, j) * s.get(i, j);
        }
        for i in 0..r {
            out.set(i, j, s.get(i, j) * (g.get(i, j) - dot));
        }
    }
    out
}

/// L = sum_j t_j * (logsumexp(l) - l_j).
fn cross_entropy_value(logits: &Tensor, target: &Tensor) -> Real {
    let lse = log_sum_exp(logits.data());
    let mut loss = 0.0;
    for (l, t) in logits.data().iter().zip(target.data()) {
        if *t != 0.0 {
            loss += t * (lse - l);
        }
    }
    loss
}

fn cross_entropy_backward(logits: &Tensor, target: &Tensor, g: Real) -> (Tensor, Tensor) {
    let lse = log_sum_exp(logits.data());
    let t_sum: Real = target.data().iter().sum();
    let mut dl = logits.clone();
    let mut dt = target.clone();
    for ((dlv, dtv), (l, t)) in dl
        .data_mut()
        .iter_mut()
        .zip(dt.data_mut().iter_mut())
        .zip(logits.data().iter().zip(target.data()))
    {
        let p = math::exp(l - lse);
        *dlv = g * (p * t_sum - t);
        *dtv = g * (lse - l);
    }
    (dl, dt)
}

fn log_sum_exp(values: &[Real]) -> Real {
    let mx = values.iter().fold(Real::NEG_INFINITY, |a, &b| a.max(b));
    let sum: Real = values.iter().map(|v| math::exp(v - mx)).sum();
    mx + math::ln(sum)
}

fn clamp_prob(p: Real) -> Real {
    p.max(BCE_CLAMP).min(1.0 - BCE_CLAMP)
}

/// Mean element-wise binary cross-entropy with clamped probabilities.
fn bce_value(probs: &Tensor, target: &Tensor) -> Real {
    let n = probs.len() as Real;
    let mut loss = 0.0;
    for (p, y) in probs.data().iter().zip(target.data()) {
        let pc = clamp_prob(*p);
        loss -= y * math::ln(pc) + (1.0 - y) * math::ln(1.0 - pc);
    }
    loss / n
}

fn bce_backward(probs: &Tensor, target: &Tensor, g: Real) -> (Tensor, Tensor) {
    let n = probs.len() as Real;
    let mut dp = probs.clone();
    let mut dt = target.clone();
    for ((dpv, dtv), (p, y)) in dp
        .data_mut()
        .iter_mut()
        .zip(dt.data_mut().iter_mut())
        .zip(probs.data().iter().zip(target.data()))
    {
        if *p <= BCE_CLAMP || *p >= 1.0 - BCE_CLAMP {
            // The clamp makes the loss locally constant in p.
            *dpv = 0.0;
        } else {
            *dpv = g * (p - y) / (p * (1.0 - p) * n);
        }
        let pc = clamp_prob(*p);
        *dtv = g * (math::ln(1.0 - pc) - math::ln(pc)) / n;
    }
    (dp, dt)
}
