//! Central finite-difference verification of analytic gradients.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::DiffError;
use crate::graph::{GradBuffer, Graph, NodeId};
use crate::params::{ParameterStore, SlotId};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step h; the probe is (f(x+h) - f(x-h)) / 2h.
    pub step: Real,
    /// Entries probed per slot, evenly spaced over the flat data.
    pub max_entries_per_slot: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            #[cfg(not(feature = "f32"))]
            step: 1e-6,
            #[cfg(feature = "f32")]
            step: 1e-3,
            max_entries_per_slot: 16,
        }
    }
}

/// Pass tolerance on the worst relative error, per scalar width.
#[cfg(not(feature = "f32"))]
pub const GRADCHECK_TOLERANCE: Real = 1e-4;
#[cfg(feature = "f32")]
pub const GRADCHECK_TOLERANCE: Real = 1e-2;

#[derive(Clone, Debug)]
pub struct SlotCheck {
    pub name: String,
    pub worst: Real,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over every probed entry.
    pub worst: Real,
    pub slots: Vec<SlotCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: Real) -> bool {
        self.worst < tolerance
    }
}

/// Relative error with an absolute floor, so agreement of near-zero
/// gradients is not drowned by finite-difference noise.
fn relative_error(analytic: Real, numeric: Real) -> Real {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Compares analytic parameter gradients of the scalar `root` against
/// central finite differences, probing a deterministic sample of entries
/// per slot. The store is perturbed in place and restored bit-exactly.
pub fn check_gradients(
    graph: &mut Graph,
    root: NodeId,
    store: &mut ParameterStore,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, DiffError> {
    graph.invalidate();
    graph.forward(root, store)?;
    let mut analytic = GradBuffer::new(store.len());
    graph.backward(root, store, &mut analytic)?;

    let slots: BTreeSet<SlotId> = graph.param_slots().into_iter().collect();
    let mut report = GradCheckReport {
        worst: 0.0,
        slots: Vec::new(),
    };

    for slot in slots {
        let len = store.value(slot).len();
        let k = cfg.max_entries_per_slot.min(len).max(1);
        let mut slot_worst: Real = 0.0;
        let mut checked = 0;
        for i in 0..k {
            let flat = i * len / k;
            let original = store.entry(slot, flat);

            store.set_entry(slot, flat, original + cfg.step);
            graph.invalidate();
            let f_plus = graph.forward(root, store)?.item();

            store.set_entry(slot, flat, original - cfg.step);
            graph.invalidate();
            let f_minus = graph.forward(root, store)?.item();

            store.set_entry(slot, flat, original);

            let numeric = (f_plus - f_minus) / (2.0 * cfg.step);
            let a = analytic.get(slot).map_or(0.0, |t| t.data()[flat]);
            slot_worst = slot_worst.max(relative_error(a, numeric));
            checked += 1;
        }
        report.worst = report.worst.max(slot_worst);
        report.slots.push(SlotCheck {
            name: store.name(slot).to_string(),
            worst: slot_worst,
            checked,
        });
    }
    graph.invalidate();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    

    #[test]
    fn composite_expression_passes() {
        // softmax + matmul + relu + cross-entropy chain.
        let mut store = ParameterStore::new(9);
        let w = store.create_uniform("W", &[4, 3]).unwrap();
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let x = g.input(Tensor::column(&[0.3, -0.2, 0.9]));
        let h = g.matmul(wn, x).unwrap();
        let r = g.relu(h);
        let target = g.input(Tensor::column(&[0.0, 1.0, 0.0, 0.0]));
        let loss = g.cross_entropy(r, target).unwrap();
        let report = check_gradients(
            &mut g,
            loss,
            &mut store,
            &GradCheckConfig {
                max_entries_per_slot: 12,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.passes(GRADCHECK_TOLERANCE), "worst = {}", report.worst);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParameterStore::new(1);
        let w = store.create_uniform("W", &[2, 2]).unwrap();
        let mut g = Graph::new();
        let _unused = g.param(&store, w);
        let c = g.input(Tensor::scalar(3.0));
        let loss = g.mean(c);
        let report = check_gradients(&mut g, loss, &mut store, &GradCheckConfig::default()).unwrap();
        assert_eq!(report.worst, 0.0);
    }

    #[test]
    fn detached_paths_agree_on_zero() {
        // With every path through detach, the analytic gradient is zero and
        // the frozen capture makes the finite-difference probe zero too.
        let mut store = ParameterStore::new(2);
        let w = store.create_uniform("W", &[3, 3]).unwrap();
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let x = g.input(Tensor::column(&[1.0, 2.0, 3.0]));
        let y = g.matmul(wn, x).unwrap();
        let d = g.detach(y);
        let sq = g.hadamard(d, d).unwrap();
        let loss = g.mean(sq);
        let report = check_gradients(&mut g, loss, &mut store, &GradCheckConfig::default()).unwrap();
        assert_eq!(report.worst, 0.0);
    }

    #[test]
    fn perturbation_restores_store_bit_exactly() {
        let mut store = ParameterStore::new(3);
        let w = store.create_uniform("W", &[4, 4]).unwrap();
        let before = store.value(w).clone();
        let mut g = Graph::new();
        let wn = g.param(&store, w);
        let x = g.input(Tensor::column(&[0.1, 0.2, 0.3, 0.4]));
        let y = g.matmul(wn, x).unwrap();
        let loss = g.mean(y);
        check_gradients(&mut g, loss, &mut store, &GradCheckConfig::default()).unwrap();
        assert_eq!(store.value(w), &before);
    }
}
