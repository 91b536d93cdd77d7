//! Teacher-guidance machinery: ground-truth targets from IoU box
//! matching, the epsilon decay schedule, and the frequency-normalized
//! multi-task loss over executed traces.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, ExecError};
use crate::executor::{AnswerTarget, Execution, FeatureSet};
use crate::graph::NodeId;
use crate::math;
use crate::program::{Catalog, Kind, Program};
use crate::synthdata::{OracleStep, OracleTruth};
use crate::tensor::{Real, Tensor};

/// Axis-aligned box, normalized coordinates with x1 < x2 and y1 < y2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }
}

/// Intersection over union. Degenerate boxes contribute zero overlap, and
/// a zero-area union yields 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchConfig {
    pub mode: MatchMode,
    /// IoU threshold for soft matching; hard matching ignores it.
    pub tau: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            mode: MatchMode::Soft,
            tau: 0.5,
        }
    }
}

/// Attention target over detector boxes. Hard matching yields the
/// argmax-IoU index per ground-truth box (one-hot-like, multiple ground
/// truths make it multi-hot); soft matching marks every detector box
/// whose IoU with some ground-truth box exceeds tau (multi-label).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTarget {
    /// Matched detector indices, sorted ascending.
    pub indices: Vec<usize>,
    pub n_boxes: usize,
    pub soft: bool,
}

impl AttentionTarget {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Uniform distribution over the matched set, used both as the hard
    /// cross-entropy target and as the value fed under teacher forcing.
    pub fn fed_distribution(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_boxes, 1);
        let w = 1.0 / self.indices.len() as Real;
        for &i in &self.indices {
            t.data_mut()[i] = w;
        }
        t
    }

    /// Multi-hot vector for the soft per-box binary cross-entropy.
    pub fn multi_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_boxes, 1);
        for &i in &self.indices {
            t.data_mut()[i] = 1.0;
        }
        t
    }
}

/// Argmax-IoU matching: each ground-truth box maps to the detector box of
/// highest IoU (ties to the lowest index); boxes with zero best IoU drop.
pub fn hard_match(gt_boxes: &[BBox], det_boxes: &[BBox]) -> AttentionTarget {
    let mut indices: Vec<usize> = Vec::new();
    for gt in gt_boxes {
        let mut best = 0usize;
        let mut best_iou = 0.0;
        for (j, det) in det_boxes.iter().enumerate() {
            let v = iou(gt, det);
            if v > best_iou {
                best_iou = v;
                best = j;
            }
        }
        if best_iou > 0.0 && !indices.contains(&best) {
            indices.push(best);
        }
    }
    indices.sort_unstable();
    AttentionTarget {
        indices,
        n_boxes: det_boxes.len(),
        soft: false,
    }
}

/// Threshold matching: marks every detector box with IoU above `tau`
/// against any ground-truth box.
pub fn soft_match(gt_boxes: &[BBox], det_boxes: &[BBox], tau: f64) -> AttentionTarget {
    let indices = det_boxes
        .iter()
        .enumerate()
        .filter(|(_, det)| gt_boxes.iter().any(|gt| iou(gt, det) > tau))
        .map(|(j, _)| j)
        .collect();
    AttentionTarget {
        indices,
        n_boxes: det_boxes.len(),
        soft: true,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Exponential,
    InverseSigmoid,
    Constant,
}

/// Epsilon decay policy: fully guided at epoch 0, decaying toward `floor`
/// over `horizon` epochs (constant schedules sit at `floor` throughout).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub horizon: u32,
    pub floor: f64,
}

/// Steepness of the inverse-sigmoid decay over one horizon.
const INVERSE_SIGMOID_RATE: f64 = 5.0;

/// Probability of selecting the ground-truth output at `epoch`. Monotone
/// non-increasing and bounded in [floor, 1].
pub fn epsilon_schedule(epoch: u32, cfg: &ScheduleConfig) -> Result<f64, DataError> {
    if cfg.horizon == 0 {
        return Err(DataError::InvalidConfig("schedule horizon must be >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&cfg.floor) {
        return Err(DataError::InvalidConfig("schedule floor must be in [0, 1]".to_string()));
    }
    let e = epoch as f64;
    let horizon = cfg.horizon as f64;
    let eps = match cfg.kind {
        ScheduleKind::Linear => 1.0 - e / horizon,
        ScheduleKind::Exponential => {
            let k = math::powf64(cfg.floor, 1.0 / horizon);
            math::powf64(k, e)
        }
        ScheduleKind::InverseSigmoid => {
            let norm = (horizon + 1.0) / horizon;
            norm * horizon / (horizon + math::exp64(INVERSE_SIGMOID_RATE * e / horizon))
        }
        ScheduleKind::Constant => cfg.floor,
    };
    Ok(eps.max(cfg.floor).min(1.0))
}

/// Scaling factors of the multi-task loss L = alpha*L_att + beta*L_bool +
/// gamma*L_answer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(DataError::InvalidConfig(
                "loss weights must not all be zero".to_string(),
            ));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(DataError::InvalidConfig(
                "loss weights must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Ground truth for one step: an attention target over detector boxes or
/// a boolean value.
#[derive(Clone, Debug, PartialEq)]
pub enum StepTarget {
    Attention(AttentionTarget),
    Boolean(f64),
}

/// Per-step targets plus the final answer target for one example.
#[derive(Clone, Debug)]
pub struct StepTargets {
    pub steps: Vec<Option<StepTarget>>,
    pub answer: Option<AnswerTarget>,
}

/// Builds step targets from oracle truth: oracle attention sets are
/// matched from scene boxes onto detector boxes with the configured
/// matching mode; empty matches yield no target (the step's loss is
/// skipped and teacher forcing falls back to the prediction).
pub fn build_targets(
    program: &Program,
    catalog: &Catalog,
    oracle: &OracleTruth,
    gt_boxes: &[BBox],
    features: &FeatureSet,
    cfg: &MatchConfig,
) -> Result<StepTargets, ExecError> {
    let mut steps = Vec::with_capacity(program.steps.len());
    for step in &oracle.steps {
        let target = match step {
            OracleStep::Attention(objects) => {
                let boxes: Vec<BBox> = objects.iter().map(|&i| gt_boxes[i]).collect();
                if boxes.is_empty() {
                    None
                } else {
                    let target = match cfg.mode {
                        MatchMode::Hard => hard_match(&boxes, &features.boxes),
                        MatchMode::Soft => soft_match(&boxes, &features.boxes, cfg.tau),
                    };
                    if target.is_empty() {
                        None
                    } else {
                        Some(StepTarget::Attention(target))
                    }
                }
            }
            OracleStep::Boolean(b) => Some(StepTarget::Boolean(if *b { 1.0 } else { 0.0 })),
            OracleStep::Answer(_) => None,
        };
        steps.push(target);
    }

    let terminal_kind = program
        .steps
        .last()
        .and_then(|s| catalog.get(&s.op))
        .map(|s| s.kind);
    let answer = match terminal_kind {
        Some(Kind::Answer) => Some(AnswerTarget::Index(
            features
                .answer_index(&oracle.answer)
                .ok_or_else(|| ExecError::VocabMismatch {
                    what: alloc::format!("answer `{}` not in vocabulary", oracle.answer),
                })?,
        )),
        Some(Kind::Boolean) => Some(AnswerTarget::YesNo(oracle.answer == "yes")),
        _ => None,
    };
    Ok(StepTargets { steps, answer })
}

/// Boolean targets inferable from the final answer alone, for data without
/// oracle intermediates: the terminal boolean is the yes/no answer;
/// And(1) implies both inputs 1; Or(0) implies both inputs 0.
pub fn infer_boolean_targets(
    program: &Program,
    catalog: &Catalog,
    answer: &str,
) -> Vec<Option<f64>> {
    let mut targets: Vec<Option<f64>> = vec![None; program.steps.len()];
    if program.steps.is_empty() {
        return targets;
    }
    let last = program.steps.len() - 1;
    if let Some(spec) = catalog.get(&program.steps[last].op) {
        if spec.kind == Kind::Boolean {
            targets[last] = Some(if answer == "yes" { 1.0 } else { 0.0 });
        }
    }
    // Propagate certainty downward through And/Or chains.
    for t in (0..program.steps.len()).rev() {
        let Some(value) = targets[t] else { continue };
        let step = &program.steps[t];
        let implied = match (step.op.as_str(), value) {
            ("And", v) if v == 1.0 => Some(1.0),
            ("Or", v) if v == 0.0 => Some(0.0),
            _ => None,
        };
        if let Some(v) = implied {
            for &d in &step.deps {
                targets[d] = Some(v);
            }
        }
    }
    targets
}

/// One per-opcode group term of the loss.
#[derive(Clone, Debug)]
pub struct GroupTerm {
    pub opcode: String,
    pub role: Kind,
    pub mean: f64,
    pub count: usize,
}

/// Loss breakdown for a batch. `total` is computed as the weighted sum of
/// the three category means, so zero weights drop their terms exactly.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub attention: f64,
    pub boolean: f64,
    pub answer: f64,
    pub groups: Vec<GroupTerm>,
    /// True when no step in the batch carried a usable target.
    pub all_empty: bool,
}

type GroupKey = (String, Kind);

enum InstanceLoss {
    AttentionHard,
    AttentionSoft,
    Boolean(f64),
    AnswerCe(usize),
    AnswerBce(bool),
}

/// Assembles the multi-task loss over a batch of executions.
///
/// Each (opcode, role) group contributes the mean of its instance losses
/// (frequency normalization: duplicating an opcode's instances leaves its
/// term unchanged); each category is the mean of its groups; the total is
/// the alpha/beta/gamma-weighted category sum. Loss nodes are appended to
/// each execution's graph and `loss_root` is set for backward.
pub fn multitask_loss(
    execs: &mut [Execution],
    weights: &LossWeights,
    store: &crate::params::ParameterStore,
) -> Result<LossBreakdown, ExecError> {
    debug_assert!(weights.validate().is_ok());

    // Pass 1: instance inventory and group counts.
    let mut group_counts: BTreeMap<GroupKey, usize> = BTreeMap::new();
    let mut instances: Vec<(usize, usize, GroupKey, InstanceLoss)> = Vec::new();
    for (e, exec) in execs.iter().enumerate() {
        let last = exec.trace.steps.len() - 1;
        for (t, step) in exec.trace.steps.iter().enumerate() {
            let entry = if t == last {
                match exec.trace.answer_target.as_ref() {
                    Some(AnswerTarget::Index(i)) => Some((
                        (step.op.clone(), Kind::Answer),
                        InstanceLoss::AnswerCe(*i),
                    )),
                    Some(AnswerTarget::YesNo(y)) => Some((
                        (step.op.clone(), Kind::Answer),
                        InstanceLoss::AnswerBce(*y),
                    )),
                    None => None,
                }
            } else {
                match step.target.as_ref() {
                    Some(StepTarget::Attention(at)) if !at.is_empty() => {
                        let loss = if at.soft {
                            InstanceLoss::AttentionSoft
                        } else {
                            InstanceLoss::AttentionHard
                        };
                        Some(((step.op.clone(), Kind::Attention), loss))
                    }
                    Some(StepTarget::Boolean(b)) => {
                        Some(((step.op.clone(), Kind::Boolean), InstanceLoss::Boolean(*b)))
                    }
                    _ => None,
                }
            };
            if let Some((key, loss)) = entry {
                *group_counts.entry(key.clone()).or_insert(0) += 1;
                instances.push((e, t, key, loss));
            }
        }
    }

    if instances.is_empty() {
        for exec in execs.iter_mut() {
            exec.loss_root = None;
        }
        return Ok(LossBreakdown {
            total: 0.0,
            attention: 0.0,
            boolean: 0.0,
            answer: 0.0,
            groups: Vec::new(),
            all_empty: true,
        });
    }

    let groups_in = |role: Kind| group_counts.keys().filter(|(_, r)| *r == role).count();
    let (g_att, g_bool, g_ans) = (
        groups_in(Kind::Attention),
        groups_in(Kind::Boolean),
        groups_in(Kind::Answer),
    );
    let role_weight = |role: Kind| match role {
        Kind::Attention => weights.alpha,
        Kind::Boolean => weights.beta,
        Kind::Answer => weights.gamma,
    };
    let role_groups = |role: Kind| match role {
        Kind::Attention => g_att,
        Kind::Boolean => g_bool,
        Kind::Answer => g_ans,
    };

    // Pass 2: build loss nodes and per-execution roots.
    let mut instance_nodes: Vec<(GroupKey, usize, NodeId)> = Vec::new();
    let mut roots: Vec<Option<NodeId>> = vec![None; execs.len()];
    for (e, t, key, loss) in instances {
        let exec = &mut execs[e];
        let graph = &mut exec.graph;
        let step = &exec.trace.steps[t];
        let node = match loss {
            InstanceLoss::AttentionHard => {
                let target = match step.target.as_ref() {
                    Some(StepTarget::Attention(at)) => at.fed_distribution(),
                    _ => unreachable!(),
                };
                let tn = graph.input(target);
                graph.cross_entropy(step.logits, tn)?
            }
            InstanceLoss::AttentionSoft => {
                let target = match step.target.as_ref() {
                    Some(StepTarget::Attention(at)) => at.multi_hot(),
                    _ => unreachable!(),
                };
                let sig = graph.sigmoid(step.logits);
                let tn = graph.input(target);
                graph.binary_cross_entropy(sig, tn)?
            }
            InstanceLoss::Boolean(b) => {
                let tn = graph.input(Tensor::scalar(b as Real));
                graph.binary_cross_entropy(step.value, tn)?
            }
            InstanceLoss::AnswerCe(idx) => {
                let n = graph.shape_of(step.logits)[0];
                let mut one_hot = Tensor::zeros(n, 1);
                one_hot.data_mut()[idx] = 1.0;
                let tn = graph.input(one_hot);
                graph.cross_entropy(step.logits, tn)?
            }
            InstanceLoss::AnswerBce(yes) => {
                let tn = graph.input(Tensor::scalar(if yes { 1.0 } else { 0.0 }));
                graph.binary_cross_entropy(step.value, tn)?
            }
        };
        let coef = role_weight(key.1) / (role_groups(key.1) as f64 * group_counts[&key] as f64);
        let term = graph.scalar_mul(coef as Real, node);
        roots[e] = Some(match roots[e] {
            None => term,
            Some(prev) => graph.add(prev, term)?,
        });
        instance_nodes.push((key, e, node));
    }

    // Pass 3: evaluate and fold the breakdown.
    for (e, exec) in execs.iter_mut().enumerate() {
        exec.loss_root = roots[e];
        if let Some(root) = roots[e] {
            exec.graph.forward(root, store)?;
        }
    }
    let mut group_sums: BTreeMap<GroupKey, f64> = BTreeMap::new();
    for (key, e, node) in instance_nodes {
        let v = execs[e]
            .graph
            .value(node)
            .expect("loss node evaluated")
            .item() as f64;
        *group_sums.entry(key).or_insert(0.0) += v;
    }
    let mut groups = Vec::new();
    let mut role_sum: BTreeMap<Kind, f64> = BTreeMap::new();
    for (key, sum) in &group_sums {
        let count = group_counts[key];
        let mean = sum / count as f64;
        *role_sum.entry(key.1).or_insert(0.0) += mean;
        groups.push(GroupTerm {
            opcode: key.0.clone(),
            role: key.1,
            mean,
            count,
        });
    }
    let category = |role: Kind| {
        let g = role_groups(role);
        if g == 0 {
            0.0
        } else {
            role_sum.get(&role).copied().unwrap_or(0.0) / g as f64
        }
    };
    let attention = category(Kind::Attention);
    let boolean = category(Kind::Boolean);
    let answer = category(Kind::Answer);
    let total = weights.alpha * attention + weights.beta * boolean + weights.gamma * answer;
    Ok(LossBreakdown {
        total,
        attention,
        boolean,
        answer,
        groups,
        all_empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn iou_known_values() {
        let unit = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &b(2.0, 2.0, 3.0, 3.0)), 0.0);
        let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-12, "got {v}");
        // degenerate box contributes zero overlap
        assert_eq!(iou(&b(0.5, 0.5, 0.5, 0.9), &unit), 0.0);
    }

    #[test]
    fn hard_match_picks_argmax_and_drops_disjoint() {
        // 36 detector boxes; gt identical to box 7.
        let det: Vec<BBox> = (0..36)
            .map(|i| {
                let x = (i % 6) as f64 * 0.16;
                let y = (i / 6) as f64 * 0.16;
                b(x, y, x + 0.14, y + 0.14)
            })
            .collect();
        let t = hard_match(&[det[7]], &det);
        assert_eq!(t.indices, vec![7]);

        // gt overlaps box 0 more than box 1.
        let det2 = [b(0.0, 0.0, 1.0, 1.0), b(0.6, 0.0, 1.6, 1.0)];
        let t = hard_match(&[b(0.0, 0.0, 0.9, 1.0)], &det2);
        assert_eq!(t.indices, vec![0]);

        // two gt objects -> two-hot target
        let t = hard_match(&[det[2], det[9]], &det);
        assert_eq!(t.indices, vec![2, 9]);

        // gt disjoint from every detector box -> empty target
        let t = hard_match(&[b(0.0, 0.0, 0.01, 0.01)], &det2[1..].to_vec());
        assert!(t.is_empty());
    }

    #[test]
    fn hard_match_breaks_ties_low() {
        let det = [b(0.0, 0.0, 1.0, 1.0), b(0.0, 0.0, 1.0, 1.0)];
        let t = hard_match(&[b(0.0, 0.0, 1.0, 1.0)], &det);
        assert_eq!(t.indices, vec![0]);
    }

    #[test]
    fn soft_match_thresholds() {
        let det = [b(0.0, 0.0, 2.0, 2.0), b(5.0, 5.0, 6.0, 6.0)];
        let gt = [b(0.0, 0.0, 2.0, 2.0)];
        let t = soft_match(&gt, &det, 0.5);
        assert_eq!(t.indices, vec![0]);

        // IoU 1/7 stays below tau = 0.5
        let t = soft_match(&[b(1.0, 1.0, 3.0, 3.0)], &[b(0.0, 0.0, 2.0, 2.0)], 0.5);
        assert!(t.is_empty());

        // tau -> 0 marks every overlapping box
        let t = soft_match(&[b(1.0, 1.0, 3.0, 3.0)], &det, 1e-9);
        assert_eq!(t.indices, vec![0]);
    }

    #[test]
    fn soft_match_is_monotone_in_tau() {
        let gt = [b(0.1, 0.1, 0.5, 0.6)];
        let det: Vec<BBox> = (0..10)
            .map(|i| {
                let o = i as f64 * 0.05;
                b(o, 0.1, o + 0.4, 0.6)
            })
            .collect();
        let mut prev = usize::MAX;
        for tau in [0.01, 0.2, 0.4, 0.6, 0.8, 0.99] {
            let n = soft_match(&gt, &det, tau).indices.len();
            assert!(n <= prev, "bits must not grow as tau rises");
            prev = n;
        }
    }

    /// Brute-force oracle: exhaustive IoU recomputation with an
    /// independent formula, exhaustive argmax / thresholding.
    fn brute_force_iou(a: &BBox, b: &BBox) -> f64 {
        let overlap = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| -> f64 {
            let lo = if lo1 > lo2 { lo1 } else { lo2 };
            let hi = if hi1 < hi2 { hi1 } else { hi2 };
            if hi > lo {
                hi - lo
            } else {
                0.0
            }
        };
        let inter = overlap(a.x1, a.x2, b.x1, b.x2) * overlap(a.y1, a.y2, b.y1, b.y2);
        let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
        let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
        let union = area_a + area_b - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    #[test]
    fn matching_agrees_with_brute_force_on_random_boxes() {
        use rand::Rng;
        let mut rng = crate::rng::stream(99, crate::rng::Purpose::Probe, 0, 0);
        let rand_box = |rng: &mut crate::rng::ChaCha8Rng| {
            let x1: f64 = rng.gen::<f64>() * 0.8;
            let y1: f64 = rng.gen::<f64>() * 0.8;
            let w: f64 = rng.gen::<f64>() * 0.3 + 0.01;
            let h: f64 = rng.gen::<f64>() * 0.3 + 0.01;
            b(x1, y1, (x1 + w).min(1.0), (y1 + h).min(1.0))
        };
        for _ in 0..100 {
            let n_det = rng.gen_range(1..=12);
            let n_gt = rng.gen_range(1..=4);
            let det: Vec<BBox> = (0..n_det).map(|_| rand_box(&mut rng)).collect();
            let gt: Vec<BBox> = (0..n_gt).map(|_| rand_box(&mut rng)).collect();
            let tau = rng.gen::<f64>() * 0.9 + 0.05;

            let mut expect_hard: Vec<usize> = Vec::new();
            for g in &gt {
                let mut best = 0;
                let mut best_v = 0.0;
                for (j, d) in det.iter().enumerate() {
                    let v = brute_force_iou(g, d);
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                if best_v > 0.0 && !expect_hard.contains(&best) {
                    expect_hard.push(best);
                }
            }
            expect_hard.sort_unstable();
            assert_eq!(hard_match(&gt, &det).indices, expect_hard);

            let expect_soft: Vec<usize> = (0..n_det)
                .filter(|&j| gt.iter().any(|g| brute_force_iou(g, &det[j]) > tau))
                .collect();
            assert_eq!(soft_match(&gt, &det, tau).indices, expect_soft);
        }
    }

    #[test]
    fn linear_schedule_values() {
        let cfg = ScheduleConfig {
            kind: ScheduleKind::Linear,
            horizon: 10,
            floor: 0.0,
        };
        assert_eq!(epsilon_schedule(0, &cfg).unwrap(), 1.0);
        assert_eq!(epsilon_schedule(5, &cfg).unwrap(), 0.5);
        assert_eq!(epsilon_schedule(10, &cfg).unwrap(), 0.0);
        assert_eq!(epsilon_schedule(30, &cfg).unwrap(), 0.0);

        let floored = ScheduleConfig {
            floor: 0.2,
            ..cfg
        };
        assert_eq!(epsilon_schedule(10, &floored).unwrap(), 0.2);
    }

    #[test]
    fn schedules_start_at_one_and_decay_monotonically() {
        for kind in [
            ScheduleKind::Linear,
            ScheduleKind::Exponential,
            ScheduleKind::InverseSigmoid,
        ] {
            let cfg = ScheduleConfig {
                kind,
                horizon: 12,
                floor: 0.05,
            };
            let first = epsilon_schedule(0, &cfg).unwrap();
            assert!((first - 1.0).abs() < 1e-12, "{kind:?} starts at {first}");
            let mut prev = first;
            for e in 1..40 {
                let eps = epsilon_schedule(e, &cfg).unwrap();
                assert!(eps <= prev + 1e-12, "{kind:?} must not increase");
                assert!((cfg.floor..=1.0).contains(&eps));
                prev = eps;
            }
            assert!(
                (epsilon_schedule(39, &cfg).unwrap() - cfg.floor).abs() < 0.05,
                "{kind:?} approaches the floor"
            );
        }
    }

    #[test]
    fn constant_schedule_and_bad_horizon() {
        let cfg = ScheduleConfig {
            kind: ScheduleKind::Constant,
            horizon: 1,
            floor: 0.3,
        };
        for e in 0..5 {
            assert_eq!(epsilon_schedule(e, &cfg).unwrap(), 0.3);
        }
        let bad = ScheduleConfig {
            kind: ScheduleKind::Linear,
            horizon: 0,
            floor: 0.0,
        };
        assert!(epsilon_schedule(0, &bad).is_err());
    }

    #[test]
    fn boolean_inference_from_answers() {
        use crate::program::parse_program;
        let c = Catalog::standard();
        let p = parse_program(
            r#"{"steps":[
                {"op":"Select","arg":"cat"},
                {"op":"VerifyAttr","deps":[0],"arg":"red"},
                {"op":"Select","arg":"dog"},
                {"op":"VerifyAttr","deps":[2],"arg":"small"},
                {"op":"And","deps":[1,3]}]}"#,
            &c,
        )
        .unwrap();
        let t = infer_boolean_targets(&p, &c, "yes");
        assert_eq!(t[4], Some(1.0));
        assert_eq!(t[1], Some(1.0), "And(1) implies both inputs");
        assert_eq!(t[3], Some(1.0));
        assert_eq!(t[0], None, "attention steps have no boolean target");

        let t = infer_boolean_targets(&p, &c, "no");
        assert_eq!(t[4], Some(0.0));
        assert_eq!(t[1], None, "And(0) leaves inputs unknown");

        let p_or = parse_program(
            r#"{"steps":[
                {"op":"Select","arg":"cat"},
                {"op":"Exist","deps":[0]},
                {"op":"Select","arg":"dog"},
                {"op":"Exist","deps":[2]},
                {"op":"Or","deps":[1,3]}]}"#,
            &c,
        )
        .unwrap();
        let t = infer_boolean_targets(&p_or, &c, "no");
        assert_eq!(t[1], Some(0.0), "Or(0) implies both inputs 0");
        assert_eq!(t[3], Some(0.0));
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            alpha: -1.0,
            beta: 1.0,
            gamma: 1.0
        }
        .validate()
        .is_err());
    }
}
