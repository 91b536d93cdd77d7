//! The neural module library.
//!
//! One differentiable formula per opcode, built from shared primitives:
//! learned projections of the text embedding t (dx1) and visual features
//! V (dxn), dot-product scoring against per-box features, Hadamard fusion,
//! and a softmax/sigmoid head. Parameters are per-opcode and shared across
//! every instance of that opcode; slots are named `<Opcode>.<Wk>`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{DiffError, ExecError};
use crate::graph::{Graph, NodeId};
use crate::params::{ParameterStore, SlotId};
use crate::program::{Catalog, Kind};
use crate::tensor::{Real, Tensor};

/// Additive mask value for excluded answer candidates. Large enough that
/// exp underflows to exactly zero after max subtraction.
const MASK_NEG: Real = -1e9;

/// Model dimensions that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    /// Feature dimension d (visual columns and text embeddings).
    pub d: usize,
    /// Number of candidate boxes n.
    pub n_boxes: usize,
    /// Answer vocabulary size.
    pub n_answers: usize,
}

/// Parameter slot names and shapes for an opcode, in creation order.
pub fn slot_shapes(op: &str, dims: &ModelDims) -> Vec<(String, [usize; 2])> {
    let (d, n, a) = (dims.d, dims.n_boxes, dims.n_answers);
    let shapes: &[[usize; 2]] = match op {
        "Select" => &[[d, d], [d, d], [n, n]],
        "RelateSub" | "RelateObj" | "FilterAttr" | "FilterName" => {
            &[[d, d], [d, d], [n, n], [d, d], [n, n], [n, n]]
        }
        "VerifyAttr" => &[[d, d], [d, d], [1, d]],
        "VerifyRel" => &[[d, d], [d, d], [d, d], [n, n], [d, d], [1, d]],
        "Exist" => &[[d, n], [1, d], [1, 1]],
        "QueryName" => &[[d, d], [a, d]],
        "QueryAttr" | "ChooseAttr" | "ChooseName" => &[[d, d], [d, d], [a, d]],
        "And" | "Or" => &[],
        _ => return Vec::new(),
    };
    shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("{op}.W{}", i + 1), *s))
        .collect()
}

/// Creates one seeded-uniform slot per parameter of every catalog opcode,
/// in catalog order.
pub fn register_parameters(
    store: &mut ParameterStore,
    catalog: &Catalog,
    dims: &ModelDims,
) -> Result<(), DiffError> {
    for op in catalog.iter() {
        for (name, shape) in slot_shapes(&op.name, dims) {
            store.create_uniform(&name, &shape)?;
        }
    }
    Ok(())
}

/// Checks that every slot an opcode needs exists with the expected shape.
pub fn verify_slots(
    store: &ParameterStore,
    catalog: &Catalog,
    dims: &ModelDims,
) -> Result<(), DiffError> {
    for op in catalog.iter() {
        for (name, shape) in slot_shapes(&op.name, dims) {
            let id = store.id(&name)?;
            let have = store.value(id);
            if have.rows() != shape[0] || have.cols() != shape[1] {
                return Err(DiffError::ShapeMismatch {
                    op: "verify_slots",
                    lhs: have.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// Wiring inputs for one module instance. Dependency nodes carry the kind
/// of the step that produced them.
pub struct ModuleIo {
    /// Text-argument embedding, dx1.
    pub text: Option<NodeId>,
    /// Visual features, dxn.
    pub visual: NodeId,
    /// Dependency values in program order.
    pub deps: Vec<(NodeId, Kind)>,
    /// For ChooseAttr/ChooseName: additive logit mask over the answer
    /// vocabulary (0 for candidates, large negative otherwise).
    pub choose_mask: Option<Tensor>,
    /// For Exist: permutation matrix sorting the input attention in
    /// descending order (computed from the materialized input value).
    pub exist_perm: Option<Tensor>,
}

/// A module's pre-activation logits and post-activation value.
#[derive(Clone, Copy, Debug)]
pub struct ModuleOutput {
    pub kind: Kind,
    pub logits: NodeId,
    pub value: NodeId,
}

struct Ctx<'a> {
    g: &'a mut Graph,
    store: &'a ParameterStore,
    op: &'a str,
}

impl<'a> Ctx<'a> {
    fn slot(&mut self, k: usize) -> Result<NodeId, ExecError> {
        let name = format!("{}.W{k}", self.op);
        let id: SlotId = self.store.id(&name)?;
        Ok(self.g.param(self.store, id))
    }

    fn bad(&self, reason: &str) -> ExecError {
        ExecError::BadModuleInput {
            op: self.op.to_string(),
            reason: reason.to_string(),
        }
    }

    fn text(&self, io: &ModuleIo) -> Result<NodeId, ExecError> {
        io.text.ok_or_else(|| self.bad("missing text argument"))
    }

    fn dep(&self, io: &ModuleIo, i: usize, want: Kind) -> Result<NodeId, ExecError> {
        match io.deps.get(i) {
            None => Err(self.bad("missing dependency")),
            Some((node, kind)) if *kind == want => Ok(*node),
            Some((_, kind)) => Err(self.bad(&format!("dependency {i} is {kind}, needs {want}"))),
        }
    }
}

/// Builds the named opcode's expression over `io`, returning its logits
/// and activated value.
pub fn build_module(
    g: &mut Graph,
    store: &ParameterStore,
    op: &str,
    io: &ModuleIo,
) -> Result<ModuleOutput, ExecError> {
    let mut cx = Ctx { g, store, op };
    match op {
        "Select" => select(&mut cx, io),
        "RelateSub" | "RelateObj" | "FilterAttr" | "FilterName" => relate_like(&mut cx, io),
        "VerifyAttr" => verify_attr(&mut cx, io),
        "VerifyRel" => verify_rel(&mut cx, io),
        "Exist" => exist(&mut cx, io),
        "And" => and_or(&mut cx, io, true),
        "Or" => and_or(&mut cx, io, false),
        "QueryName" => query_name(&mut cx, io),
        "QueryAttr" | "ChooseAttr" | "ChooseName" => query_like(&mut cx, io),
        _ => Err(ExecError::BadModuleInput {
            op: op.to_string(),
            reason: "not in the module library".to_string(),
        }),
    }
}

/// x = r(W1 t); Y = r(W2 V); logits = W3 (Y^T x); value = softmax.
fn select(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let t = cx.text(io)?;
    let (w1, w2, w3) = (cx.slot(1)?, cx.slot(2)?, cx.slot(3)?);
    let g = &mut *cx.g;
    let x = {
        let m = g.matmul(w1, t)?;
        g.relu(m)
    };
    let y = {
        let m = g.matmul(w2, io.visual)?;
        g.relu(m)
    };
    let yt = g.transpose(y);
    let scores = g.matmul(yt, x)?;
    let logits = g.matmul(w3, scores)?;
    let value = g.softmax(logits);
    Ok(ModuleOutput {
        kind: Kind::Attention,
        logits,
        value,
    })
}

/// Shared template for RelateSub/RelateObj/FilterAttr/FilterName:
/// x = r(W1 t); Y = r(W2 V); z = S(W3 (Y^T x)); y = r(W4 (V a));
/// logits = W6 (W5(Y^T x) .* W5(Y^T y) .* z); value = softmax.
fn relate_like(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let t = cx.text(io)?;
    let a = cx.dep(io, 0, Kind::Attention)?;
    let (w1, w2, w3, w4, w5, w6) = (
        cx.slot(1)?,
        cx.slot(2)?,
        cx.slot(3)?,
        cx.slot(4)?,
        cx.slot(5)?,
        cx.slot(6)?,
    );
    let g = &mut *cx.g;
    let x = {
        let m = g.matmul(w1, t)?;
        g.relu(m)
    };
    let y_mat = {
        let m = g.matmul(w2, io.visual)?;
        g.relu(m)
    };
    let yt = g.transpose(y_mat);
    let scores_x = g.matmul(yt, x)?;
    let z = {
        let m = g.matmul(w3, scores_x)?;
        g.softmax(m)
    };
    let attended = g.matmul(io.visual, a)?;
    let y = {
        let m = g.matmul(w4, attended)?;
        g.relu(m)
    };
    let scores_y = g.matmul(yt, y)?;
    let x_proj = g.matmul(w5, scores_x)?;
    let y_proj = g.matmul(w5, scores_y)?;
    let fused = {
        let xy = g.hadamard(x_proj, y_proj)?;
        g.hadamard(xy, z)?
    };
    let logits = g.matmul(w6, fused)?;
    let value = g.softmax(logits);
    Ok(ModuleOutput {
        kind: Kind::Attention,
        logits,
        value,
    })
}

/// value = sigmoid(W3 (r(W1 t) .* r(W2 (V a)))).
fn verify_attr(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let t = cx.text(io)?;
    let a = cx.dep(io, 0, Kind::Attention)?;
    let (w1, w2, w3) = (cx.slot(1)?, cx.slot(2)?, cx.slot(3)?);
    let g = &mut *cx.g;
    let x = {
        let m = g.matmul(w1, t)?;
        g.relu(m)
    };
    let attended = g.matmul(io.visual, a)?;
    let y = {
        let m = g.matmul(w2, attended)?;
        g.relu(m)
    };
    let fused = g.hadamard(x, y)?;
    let logits = g.matmul(w3, fused)?;
    let value = g.sigmoid(logits);
    Ok(ModuleOutput {
        kind: Kind::Boolean,
        logits,
        value,
    })
}

/// Relation verification with a two-stage attended input: a first stage
/// attends to candidate related objects conditioned on text and the
/// attended subject, a second stage verifies against that summary.
/// x = r(W1 t); Y = r(W2 V); y = r(W3 (V a));
/// z = S(W4 (Y^T (x .* y))); w = r(W5 (V z));
/// value = sigmoid(W6 (x .* y .* w)).
fn verify_rel(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let t = cx.text(io)?;
    let a = cx.dep(io, 0, Kind::Attention)?;
    let (w1, w2, w3, w4, w5, w6) = (
        cx.slot(1)?,
        cx.slot(2)?,
        cx.slot(3)?,
        cx.slot(4)?,
        cx.slot(5)?,
        cx.slot(6)?,
    );
    let g = &mut *cx.g;
    let x = {
        let m = g.matmul(w1, t)?;
        g.relu(m)
    };
    let y_mat = {
        let m = g.matmul(w2, io.visual)?;
        g.relu(m)
    };
    let attended = g.matmul(io.visual, a)?;
    let y = {
        let m = g.matmul(w3, attended)?;
        g.relu(m)
    };
    let xy = g.hadamard(x, y)?;
    let yt = g.transpose(y_mat);
    let scores = g.matmul(yt, xy)?;
    let z = {
        let m = g.matmul(w4, scores)?;
        g.softmax(m)
    };
    let second = g.matmul(io.visual, z)?;
    let w = {
        let m = g.matmul(w5, second)?;
        g.relu(m)
    };
    let fused = g.hadamard(xy, w)?;
    let logits = g.matmul(w6, fused)?;
    let value = g.sigmoid(logits);
    Ok(ModuleOutput {
        kind: Kind::Boolean,
        logits,
        value,
    })
}

/// value = sigmoid(W2 r(W1 sort_desc(a)) + W3), with the sort expressed as
/// a constant permutation matmul so gradients scatter back through it.
fn exist(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let a = cx.dep(io, 0, Kind::Attention)?;
    let perm = io
        .exist_perm
        .clone()
        .ok_or_else(|| cx.bad("missing sort permutation"))?;
    let (w1, w2, c) = (cx.slot(1)?, cx.slot(2)?, cx.slot(3)?);
    let g = &mut *cx.g;
    let p = g.input(perm);
    let sorted = g.matmul(p, a)?;
    let h = {
        let m = g.matmul(w1, sorted)?;
        g.relu(m)
    };
    let score = g.matmul(w2, h)?;
    let logits = g.add(score, c)?;
    let value = g.sigmoid(logits);
    Ok(ModuleOutput {
        kind: Kind::Boolean,
        logits,
        value,
    })
}

/// And: b1 * b2. Or: b1 + b2 - b1 * b2. Parameter-free; the logits node
/// is the value itself.
fn and_or(cx: &mut Ctx, io: &ModuleIo, is_and: bool) -> Result<ModuleOutput, ExecError> {
    let b1 = cx.dep(io, 0, Kind::Boolean)?;
    let b2 = cx.dep(io, 1, Kind::Boolean)?;
    if io.deps.len() != 2 {
        return Err(cx.bad("needs exactly two dependencies"));
    }
    let g = &mut *cx.g;
    let prod = g.hadamard(b1, b2)?;
    let value = if is_and {
        prod
    } else {
        let sum = g.add(b1, b2)?;
        let neg = g.scalar_mul(-1.0, prod);
        g.add(sum, neg)?
    };
    Ok(ModuleOutput {
        kind: Kind::Boolean,
        logits: value,
        value,
    })
}

/// value = softmax(W2 r(W1 (V a))) over the answer vocabulary.
fn query_name(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let a = cx.dep(io, 0, Kind::Attention)?;
    let (w1, w2) = (cx.slot(1)?, cx.slot(2)?);
    let g = &mut *cx.g;
    let attended = g.matmul(io.visual, a)?;
    let y = {
        let m = g.matmul(w1, attended)?;
        g.relu(m)
    };
    let logits = g.matmul(w2, y)?;
    let value = g.softmax(logits);
    Ok(ModuleOutput {
        kind: Kind::Answer,
        logits,
        value,
    })
}

/// QueryAttr/ChooseAttr/ChooseName:
/// value = softmax(W3 (r(W1 t) .* r(W2 (V a)))), with choose variants
/// masking non-candidate logits before the softmax.
fn query_like(cx: &mut Ctx, io: &ModuleIo) -> Result<ModuleOutput, ExecError> {
    let t = cx.text(io)?;
    let a = cx.dep(io, 0, Kind::Attention)?;
    let is_choose = cx.op.starts_with("Choose");
    if is_choose && io.choose_mask.is_none() {
        return Err(cx.bad("missing candidate mask"));
    }
    let (w1, w2, w3) = (cx.slot(1)?, cx.slot(2)?, cx.slot(3)?);
    let mask = io.choose_mask.clone();
    let g = &mut *cx.g;
    let x = {
        let m = g.matmul(w1, t)?;
        g.relu(m)
    };
    let attended = g.matmul(io.visual, a)?;
    let y = {
        let m = g.matmul(w2, attended)?;
        g.relu(m)
    };
    let fused = g.hadamard(x, y)?;
    let raw = g.matmul(w3, fused)?;
    let logits = match mask {
        Some(m) if is_choose => {
            let mn = g.input(m);
            g.add(raw, mn)?
        }
        _ => raw,
    };
    let value = g.softmax(logits);
    Ok(ModuleOutput {
        kind: Kind::Answer,
        logits,
        value,
    })
}

/// Additive candidate mask over the answer vocabulary.
pub fn choose_mask(candidates: &[usize], n_answers: usize) -> Tensor {
    let mut data = vec![MASK_NEG; n_answers];
    for &c in candidates {
        data[c] = 0.0;
    }
    Tensor::column(&data)
}

/// Permutation matrix that sorts `attention` in descending order (stable:
/// ties keep the lower index first).
pub fn sort_permutation(attention: &Tensor) -> Tensor {
    let n = attention.len();
    let v = attention.data();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap_or(core::cmp::Ordering::Equal));
    let mut p = Tensor::zeros(n, n);
    for (row, &src) in order.iter().enumerate() {
        p.set(row, src, 1.0);
    }
    p
}
