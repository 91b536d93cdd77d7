//! Named parameter slots with gradients and optimizer state.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::DiffError;
use crate::graph::GradBuffer;
use crate::math;
use crate::rng::{self, ChaCha8Rng, Purpose};
use crate::tensor::{Real, Tensor};

/// Opaque handle to a parameter slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId(u32);

impl SlotId {
    pub(crate) fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        SlotId(i as u32)
    }
}

struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    moment1: Tensor,
    moment2: Tensor,
}

/// Parameter store. Slot names are unique and shapes are immutable after
/// creation; slot order is creation order, which also fixes checkpoint
/// layout and seeded-init draws.
pub struct ParameterStore {
    slots: Vec<Slot>,
    by_name: BTreeMap<String, SlotId>,
    rng: ChaCha8Rng,
    seed: u64,
    adam_step: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            slots: Vec::new(),
            by_name: BTreeMap::new(),
            rng: rng::stream(seed, Purpose::ParamInit, 0, 0),
            seed,
            adam_step: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn insert(&mut self, name: &str, value: Tensor) -> Result<SlotId, DiffError> {
        if self.by_name.contains_key(name) {
            return Err(DiffError::DuplicateSlot {
                name: name.to_string(),
            });
        }
        let id = SlotId(self.slots.len() as u32);
        let (r, c) = (value.rows(), value.cols());
        self.slots.push(Slot {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            moment1: Tensor::zeros(r, c),
            moment2: Tensor::zeros(r, c),
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Zero-initialized slot.
    pub fn create(&mut self, name: &str, shape: &[usize; 2]) -> Result<SlotId, DiffError> {
        self.insert(name, Tensor::zeros(shape[0], shape[1]))
    }

    /// Slot initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
    /// where fan_in is the column count.
    pub fn create_uniform(&mut self, name: &str, shape: &[usize; 2]) -> Result<SlotId, DiffError> {
        let bound = 1.0 / math::sqrt(shape[1] as Real);
        let mut data = Vec::with_capacity(shape[0] * shape[1]);
        for _ in 0..shape[0] * shape[1] {
            let u: f64 = self.rng.gen();
            data.push((2.0 * u as Real - 1.0) * bound);
        }
        let t = Tensor::new([shape[0], shape[1]].to_vec(), data).expect("shape matches data");
        self.insert(name, t)
    }

    /// Rebuilds a store from named tensors (checkpoint load). Optimizer
    /// state starts fresh.
    pub fn from_slots(seed: u64, slots: Vec<(String, Tensor)>) -> Result<Self, DiffError> {
        let mut store = ParameterStore::new(seed);
        for (name, value) in slots {
            store.insert(&name, value)?;
        }
        Ok(store)
    }

    pub fn lookup(&self, name: &str) -> Option<SlotId> {
        self.by_name.get(name).copied()
    }

    pub fn id(&self, name: &str) -> Result<SlotId, DiffError> {
        self.lookup(name).ok_or_else(|| DiffError::UnknownSlot {
            name: name.to_string(),
        })
    }

    pub fn name(&self, id: SlotId) -> &str {
        &self.slots[id.index()].name
    }

    pub fn value(&self, id: SlotId) -> &Tensor {
        &self.slots[id.index()].value
    }

    /// Replaces a slot value; the shape is immutable.
    pub fn set_value(&mut self, id: SlotId, value: Tensor) -> Result<(), DiffError> {
        let slot = &mut self.slots[id.index()];
        if !slot.value.same_shape(&value) {
            return Err(DiffError::ShapeMismatch {
                op: "set_value",
                lhs: slot.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub(crate) fn entry(&self, id: SlotId, flat: usize) -> Real {
        self.slots[id.index()].value.data()[flat]
    }

    pub(crate) fn set_entry(&mut self, id: SlotId, flat: usize, v: Real) {
        self.slots[id.index()].value.data_mut()[flat] = v;
    }

    pub fn grad(&self, id: SlotId) -> &Tensor {
        &self.slots[id.index()].grad
    }

    pub fn accumulate_grad(&mut self, id: SlotId, grad: &Tensor) {
        let acc = &mut self.slots[id.index()].grad;
        debug_assert!(acc.same_shape(grad));
        for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
            *a += g;
        }
    }

    /// Adds buffered worker gradients in slot order.
    pub fn merge_grads(&mut self, buffer: &GradBuffer) {
        let entries: Vec<(SlotId, Tensor)> = buffer
            .entries()
            .map(|(id, t)| (id, t.clone()))
            .collect();
        for (id, t) in entries {
            self.accumulate_grad(id, &t);
        }
    }

    pub fn clear_grads(&mut self) {
        for slot in &mut self.slots {
            for g in slot.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Slots in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    /// Applies one optimizer update to every slot, then clears gradients.
    pub fn optimizer_step(&mut self, cfg: &OptimizerConfig) -> Result<(), DiffError> {
        if !(cfg.lr > 0.0) {
            return Err(DiffError::InvalidLearningRate);
        }
        match cfg.kind {
            OptimizerKind::Sgd => {
                for slot in &mut self.slots {
                    for (v, g) in slot.value.data_mut().iter_mut().zip(slot.grad.data()) {
                        *v -= cfg.lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.adam_step += 1;
                let t = self.adam_step as i32;
                let bc1 = 1.0 - math::powf(beta1, t as Real);
                let bc2 = 1.0 - math::powf(beta2, t as Real);
                for slot in &mut self.slots {
                    let m = slot.moment1.data_mut();
                    let v2 = slot.moment2.data_mut();
                    let g = slot.grad.data();
                    for (i, v) in slot.value.data_mut().iter_mut().enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v2[i] = beta2 * v2[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v2[i] / bc2;
                        *v -= cfg.lr * m_hat / (math::sqrt(v_hat) + eps);
                    }
                }
            }
        }
        self.clear_grads();
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: Real, beta2: Real, eps: Real },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub lr: Real,
    pub kind: OptimizerKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            kind: OptimizerKind::adam_default(),
        }
    }
}
