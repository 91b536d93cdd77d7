//! Program execution over a feature set.
//!
//! A plan binds each program step to its module, parameter slots, and
//! dependency wiring. Execution runs steps in order against a memory
//! buffer of step outputs, deciding per dependency edge whether the module
//! consumes the predicted value or the ground-truth value (teacher
//! forcing). Ground truth enters the graph through `detach`, so gradient
//! flow is interrupted at the first ground-truth input, while predicted
//! intermediates stay in the graph in continuous form.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ExecError;
use crate::graph::{Graph, NodeId};
use crate::guidance::{BBox, StepTarget, StepTargets};
use crate::modules::{self, ModelDims, ModuleIo};
use crate::params::ParameterStore;
use crate::program::{validate_program, Catalog, Kind, Program};
use crate::rng::ChaCha8Rng;
use crate::tensor::{Real, Tensor};

/// Visual features, boxes, text-argument embeddings, and the answer
/// vocabulary for one example.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    /// Detector boxes, normalized to [0,1]; one per visual column.
    pub boxes: Vec<BBox>,
    /// Visual features, d x n_boxes.
    pub visual: Tensor,
    /// Text-argument embeddings, d x 1 each.
    pub text_args: BTreeMap<String, Tensor>,
    /// Ordered answer strings.
    pub answer_vocab: Vec<String>,
}

impl FeatureSet {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.visual.rows(),
            n_boxes: self.visual.cols(),
            n_answers: self.answer_vocab.len(),
        }
    }

    pub fn answer_index(&self, answer: &str) -> Option<usize> {
        self.answer_vocab.iter().position(|a| a == answer)
    }
}

/// Whether a dependency edge consumed the module's own prediction or the
/// substituted ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Predicted,
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Train,
    Inference,
}

/// Coin-flip granularity: one draw per dependency edge, or one draw per
/// program execution applied to every edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TfGranularity {
    Edge,
    Program,
}

/// Teacher-forcing input policy. Inference mode forces epsilon to zero:
/// at test time the model relies on its own predictions even when ground
/// truth is available.
pub struct GuidancePolicy {
    pub epsilon: f64,
    pub mode: ExecMode,
    pub granularity: TfGranularity,
    /// Debug switch: route ground truth through the predicted node
    /// (identical forward value) so the gradient cut can be falsified.
    pub debug_no_detach: bool,
    rng: ChaCha8Rng,
    program_coin: Option<bool>,
}

impl GuidancePolicy {
    pub fn train(epsilon: f64, rng: ChaCha8Rng) -> Self {
        GuidancePolicy {
            epsilon,
            mode: ExecMode::Train,
            granularity: TfGranularity::Edge,
            debug_no_detach: false,
            rng,
            program_coin: None,
        }
    }

    pub fn inference(rng: ChaCha8Rng) -> Self {
        GuidancePolicy {
            epsilon: 0.0,
            mode: ExecMode::Inference,
            granularity: TfGranularity::Edge,
            debug_no_detach: false,
            rng,
            program_coin: None,
        }
    }

    pub fn effective_epsilon(&self) -> f64 {
        match self.mode {
            ExecMode::Train => self.epsilon,
            ExecMode::Inference => 0.0,
        }
    }

    fn begin_execution(&mut self) {
        self.program_coin = match self.granularity {
            TfGranularity::Edge => None,
            TfGranularity::Program => {
                let u: f64 = self.rng.gen();
                Some(u < self.effective_epsilon())
            }
        };
    }
}

/// One coin flip for a dependency edge: ground truth wins when the draw
/// lands below epsilon AND ground truth exists for that dependency.
pub fn select_input(policy: &mut GuidancePolicy, gt_available: bool) -> Provenance {
    let take_gt = match policy.granularity {
        TfGranularity::Edge => {
            let u: f64 = policy.rng.gen();
            u < policy.effective_epsilon()
        }
        TfGranularity::Program => policy.program_coin.unwrap_or(false),
    };
    if take_gt && gt_available {
        Provenance::GroundTruth
    } else {
        Provenance::Predicted
    }
}

#[derive(Debug)]
struct PlannedStep {
    op: String,
    kind: Kind,
    deps: Vec<usize>,
    text_arg: Option<String>,
    text_embedding: Option<Tensor>,
    candidates: Option<Vec<usize>>,
}

/// A program bound to features, module ops, and parameter slots. Creation
/// performs no numerics.
#[derive(Debug)]
pub struct ExecutablePlan<'a> {
    pub program: &'a Program,
    pub features: &'a FeatureSet,
    steps: Vec<PlannedStep>,
}

impl ExecutablePlan<'_> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminal_kind(&self) -> Kind {
        self.steps.last().expect("plans are non-empty").kind
    }
}

/// Binds a validated program to `features` and checks that every module
/// it uses has parameter slots of the right shape in `store`.
pub fn instantiate<'a>(
    program: &'a Program,
    features: &'a FeatureSet,
    catalog: &Catalog,
    store: &ParameterStore,
) -> Result<ExecutablePlan<'a>, ExecError> {
    let diags = validate_program(program, catalog);
    if let Some(d) = diags.first() {
        return Err(ExecError::InvalidProgram {
            step: d.step,
            reason: d.to_string(),
        });
    }
    let dims = features.dims();
    modules::verify_slots(store, catalog, &dims)?;

    let mut steps = Vec::with_capacity(program.steps.len());
    for step in &program.steps {
        let spec = catalog.get(&step.op).expect("validated opcode");
        let text_embedding = match &step.text_arg {
            None => None,
            Some(arg) => Some(
                features
                    .text_args
                    .get(arg)
                    .cloned()
                    .ok_or_else(|| ExecError::MissingEmbedding { arg: arg.clone() })?,
            ),
        };
        let candidates = if step.op.starts_with("Choose") {
            let arg = step.text_arg.as_deref().unwrap_or("");
            let mut idx = Vec::new();
            for part in arg.split('|') {
                let i = features.answer_index(part).ok_or_else(|| ExecError::VocabMismatch {
                    what: alloc::format!("candidate `{part}` not in answer vocabulary"),
                })?;
                idx.push(i);
            }
            if idx.len() < 2 {
                return Err(ExecError::VocabMismatch {
                    what: alloc::format!("choose argument `{arg}` needs at least 2 candidates"),
                });
            }
            Some(idx)
        } else {
            None
        };
        steps.push(PlannedStep {
            op: step.op.clone(),
            kind: spec.kind,
            deps: step.deps.clone(),
            text_arg: step.text_arg.clone(),
            text_embedding,
            candidates,
        });
    }
    Ok(ExecutablePlan {
        program,
        features,
        steps,
    })
}

/// Per-step record of an execution.
#[derive(Debug)]
pub struct StepRecord {
    pub op: String,
    pub kind: Kind,
    pub text_arg: Option<String>,
    /// Input provenance per dependency edge, in dependency order.
    pub provenance: Vec<Provenance>,
    pub logits: NodeId,
    pub value: NodeId,
    /// Materialized module output.
    pub output: Tensor,
    /// Ground-truth target for this step, when available.
    pub target: Option<StepTarget>,
}

/// Label space of the final answer distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnswerSpace {
    /// Distribution over the feature set's answer vocabulary.
    Vocab,
    /// [p(yes), p(no)] from the terminal boolean adapter.
    YesNo,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnswerTarget {
    /// Index into the answer vocabulary.
    Index(usize),
    /// Terminal boolean target: true for "yes".
    YesNo(bool),
}

#[derive(Debug)]
pub struct Trace {
    pub id: String,
    pub steps: Vec<StepRecord>,
    pub answer_space: AnswerSpace,
    pub answer_dist: Vec<Real>,
    pub predicted: String,
    pub answer_target: Option<AnswerTarget>,
}

/// One executed example: its expression graph, trace, and (after the loss
/// pass) the scalar loss root for backward.
#[derive(Debug)]
pub struct Execution {
    pub graph: Graph,
    pub trace: Trace,
    pub loss_root: Option<NodeId>,
}

fn feed_value(target: &StepTarget) -> Tensor {
    match target {
        StepTarget::Attention(t) => t.fed_distribution(),
        StepTarget::Boolean(b) => Tensor::scalar(*b as Real),
    }
}

/// Runs the plan step by step. For every dependency edge, `select_input`
/// decides predicted vs ground truth; substituted values enter through
/// `detach`. The trace records outputs, provenance, and targets.
pub fn execute(
    plan: &ExecutablePlan,
    policy: &mut GuidancePolicy,
    gt: Option<&StepTargets>,
    store: &ParameterStore,
) -> Result<Execution, ExecError> {
    if policy.effective_epsilon() > 0.0 && gt.is_none() {
        return Err(ExecError::GtRequired { step: 0 });
    }
    policy.begin_execution();

    let mut g = Graph::new();
    let visual = g.input(plan.features.visual.clone());
    let n_answers = plan.features.answer_vocab.len();

    // Memory buffer: output node, kind, and materialized value per step.
    let mut memory: Vec<(NodeId, Kind, Tensor)> = Vec::with_capacity(plan.steps.len());
    let mut records: Vec<StepRecord> = Vec::with_capacity(plan.steps.len());

    for (t, ps) in plan.steps.iter().enumerate() {
        let mut provenance = Vec::with_capacity(ps.deps.len());
        let mut deps = Vec::with_capacity(ps.deps.len());
        let mut feed_values: Vec<Tensor> = Vec::with_capacity(ps.deps.len());

        for &d in &ps.deps {
            let (pred_node, kind, pred_value) = {
                let m = &memory[d];
                (m.0, m.1, m.2.clone())
            };
            let gt_tensor = gt
                .and_then(|s| s.steps[d].as_ref())
                .map(feed_value);
            let prov = select_input(policy, gt_tensor.is_some());
            match prov {
                Provenance::Predicted => {
                    deps.push((pred_node, kind));
                    feed_values.push(pred_value);
                }
                Provenance::GroundTruth => {
                    let gt_tensor = gt_tensor.expect("gt availability checked");
                    let node = if policy.debug_no_detach {
                        // Same forward value, but gradient reaches the
                        // predicted subgraph: gt = pred + (gt - pred).
                        let mut delta = gt_tensor.clone();
                        for (dv, pv) in delta.data_mut().iter_mut().zip(pred_value.data()) {
                            *dv -= pv;
                        }
                        let dn = g.input(delta);
                        g.add(pred_node, dn)?
                    } else {
                        let inp = g.input(gt_tensor.clone());
                        g.detach(inp)
                    };
                    deps.push((node, kind));
                    feed_values.push(gt_tensor);
                }
            }
            provenance.push(prov);
        }

        let text = ps.text_embedding.as_ref().map(|e| g.input(e.clone()));
        let choose_mask = ps
            .candidates
            .as_ref()
            .map(|c| modules::choose_mask(c, n_answers));
        let exist_perm = if ps.op == "Exist" {
            Some(modules::sort_permutation(&feed_values[0]))
        } else {
            None
        };
        let io = ModuleIo {
            text,
            visual,
            deps,
            choose_mask,
            exist_perm,
        };
        let out = modules::build_module(&mut g, store, &ps.op, &io)?;
        let value = g.forward(out.value, store)?.clone();
        if !value.all_finite() {
            return Err(ExecError::NonFinite { step: t });
        }
        memory.push((out.value, ps.kind, value.clone()));
        records.push(StepRecord {
            op: ps.op.clone(),
            kind: ps.kind,
            text_arg: ps.text_arg.clone(),
            provenance,
            logits: out.logits,
            value: out.value,
            output: value,
            target: gt.and_then(|s| s.steps[t].clone()),
        });
    }

    let trace = finish_trace(plan, &memory, records, gt);
    Ok(Execution {
        graph: g,
        trace,
        loss_root: None,
    })
}

fn finish_trace(
    plan: &ExecutablePlan,
    memory: &[(NodeId, Kind, Tensor)],
    steps: Vec<StepRecord>,
    gt: Option<&StepTargets>,
) -> Trace {
    let (_, kind, output) = memory.last().expect("plans are non-empty");
    let (answer_space, answer_dist, predicted) = match kind {
        Kind::Answer => {
            let dist = output.data().to_vec();
            let idx = output.argmax();
            (
                AnswerSpace::Vocab,
                dist,
                plan.features.answer_vocab[idx].clone(),
            )
        }
        Kind::Boolean => {
            let b = output.item();
            let predicted = if b >= 0.5 { "yes" } else { "no" };
            (AnswerSpace::YesNo, vec![b, 1.0 - b], predicted.to_string())
        }
        Kind::Attention => unreachable!("terminal kind validated"),
    };
    Trace {
        id: plan.program.id.clone(),
        steps,
        answer_space,
        answer_dist,
        predicted,
        answer_target: gt.and_then(|s| s.answer.clone()),
    }
}

/// Executes the plan with every module output replaced by its ground-truth
/// value: the symbolic answer travels through the executor's wiring
/// (memory buffer, terminal adapter, argmax) untouched by any parameters.
pub fn oracle_substitute(
    plan: &ExecutablePlan,
    targets: &StepTargets,
) -> Result<Execution, ExecError> {
    let n = plan.features.visual.cols();
    let n_answers = plan.features.answer_vocab.len();
    let last = plan.steps.len() - 1;
    let mut g = Graph::new();
    let mut memory: Vec<(NodeId, Kind, Tensor)> = Vec::with_capacity(plan.steps.len());
    let mut records = Vec::with_capacity(plan.steps.len());

    for (t, ps) in plan.steps.iter().enumerate() {
        let value = match targets.steps[t].as_ref() {
            Some(target) => feed_value(target),
            None => match ps.kind {
                // An empty attention set has no distribution; downstream
                // outputs are substituted anyway, so feed uniform.
                Kind::Attention => Tensor::filled(n, 1, 1.0 / n as Real),
                Kind::Boolean => return Err(ExecError::GtMissingForStep { step: t }),
                Kind::Answer => match targets.answer.as_ref() {
                    Some(AnswerTarget::Index(i)) => {
                        let mut one_hot = vec![0.0; n_answers];
                        one_hot[*i] = 1.0;
                        Tensor::column(&one_hot)
                    }
                    _ => return Err(ExecError::GtMissingForStep { step: t }),
                },
            },
        };
        // Terminal boolean: the boolean target is the answer itself.
        let value = if t == last && ps.kind == Kind::Boolean {
            match targets.answer.as_ref() {
                Some(AnswerTarget::YesNo(yes)) => Tensor::scalar(if *yes { 1.0 } else { 0.0 }),
                _ => value,
            }
        } else {
            value
        };
        let node = g.input(value.clone());
        memory.push((node, ps.kind, value.clone()));
        records.push(StepRecord {
            op: ps.op.clone(),
            kind: ps.kind,
            text_arg: ps.text_arg.clone(),
            provenance: vec![Provenance::GroundTruth; ps.deps.len()],
            logits: node,
            value: node,
            output: value,
            target: targets.steps[t].clone(),
        });
    }
    let trace = finish_trace(plan, &memory, records, Some(targets));
    Ok(Execution {
        graph: g,
        trace,
        loss_root: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::AttentionTarget;
    use crate::modules::register_parameters;
    use crate::program::parse_program;
    use crate::rng::{stream, Purpose};

    fn features() -> FeatureSet {
        let d = 6;
        let n = 4;
        let mut text_args = BTreeMap::new();
        for (i, arg) in ["cat", "red", "right-of"].iter().enumerate() {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e[(i + 2) % d] = -0.5;
            text_args.insert(arg.to_string(), Tensor::column(&e));
        }
        let visual_data: Vec<Real> = (0..d * n)
            .map(|i| ((i * 29 % 13) as Real) / 13.0 - 0.5)
            .collect();
        FeatureSet {
            boxes: (0..n)
                .map(|i| BBox {
                    x1: 0.1 * i as f64,
                    y1: 0.1,
                    x2: 0.1 * i as f64 + 0.2,
                    y2: 0.4,
                })
                .collect(),
            visual: Tensor::new(vec![d, n], visual_data).unwrap(),
            text_args,
            answer_vocab: ["yes", "no", "cat", "dog", "laptop"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    fn store_for(f: &FeatureSet) -> ParameterStore {
        let mut store = ParameterStore::new(7);
        register_parameters(&mut store, &Catalog::standard(), &f.dims()).unwrap();
        store
    }

    fn chain_program() -> Program {
        parse_program(
            r#"{"id":"t1","steps":[
                {"op":"Select","arg":"cat"},
                {"op":"FilterAttr","deps":[0],"arg":"red"},
                {"op":"QueryName","deps":[1]}]}"#,
            &Catalog::standard(),
        )
        .unwrap()
    }

    fn full_targets() -> StepTargets {
        StepTargets {
            steps: vec![
                Some(StepTarget::Attention(AttentionTarget {
                    indices: vec![1],
                    n_boxes: 4,
                    soft: false,
                })),
                Some(StepTarget::Attention(AttentionTarget {
                    indices: vec![1],
                    n_boxes: 4,
                    soft: false,
                })),
                None,
            ],
            answer: Some(AnswerTarget::Index(2)),
        }
    }

    #[test]
    fn instantiate_binds_all_steps() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan.terminal_kind(), Kind::Answer);
    }

    #[test]
    fn missing_embedding_is_reported() {
        let f = features();
        let store = store_for(&f);
        let p = parse_program(
            r#"{"steps":[{"op":"Select","arg":"zebra"},{"op":"QueryName","deps":[0]}]}"#,
            &Catalog::standard(),
        )
        .unwrap();
        let err = instantiate(&p, &f, &Catalog::standard(), &store).unwrap_err();
        assert_eq!(
            err,
            ExecError::MissingEmbedding {
                arg: "zebra".to_string()
            }
        );
    }

    #[test]
    fn invalid_program_rejected_at_instantiate() {
        let f = features();
        let store = store_for(&f);
        let p = Program {
            id: "x".to_string(),
            question: None,
            steps: vec![],
        };
        let err = instantiate(&p, &f, &Catalog::standard(), &store).unwrap_err();
        assert!(matches!(err, ExecError::InvalidProgram { .. }));
    }

    #[test]
    fn epsilon_zero_runs_fully_predicted_and_deterministic() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();

        let run = || {
            let mut policy = GuidancePolicy::train(0.0, stream(1, Purpose::TeacherForcing, 0, 0));
            execute(&plan, &mut policy, Some(&full_targets()), &store).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.trace.steps.len(), 3);
        for step in &a.trace.steps {
            assert!(step.provenance.iter().all(|p| *p == Provenance::Predicted));
        }
        assert_eq!(a.trace.predicted, b.trace.predicted);
        for (sa, sb) in a.trace.steps.iter().zip(&b.trace.steps) {
            assert_eq!(sa.output, sb.output, "bit-identical traces");
        }
    }

    #[test]
    fn epsilon_one_feeds_ground_truth_everywhere() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        let mut policy = GuidancePolicy::train(1.0, stream(2, Purpose::TeacherForcing, 0, 0));
        let exec = execute(&plan, &mut policy, Some(&full_targets()), &store).unwrap();
        for step in &exec.trace.steps {
            assert!(step
                .provenance
                .iter()
                .all(|p| *p == Provenance::GroundTruth));
        }
    }

    #[test]
    fn gt_required_when_epsilon_positive() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        let mut policy = GuidancePolicy::train(0.5, stream(3, Purpose::TeacherForcing, 0, 0));
        let err = execute(&plan, &mut policy, None, &store).unwrap_err();
        assert!(matches!(err, ExecError::GtRequired { .. }));
    }

    #[test]
    fn inference_ignores_ground_truth() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        let mut policy = GuidancePolicy::inference(stream(4, Purpose::TeacherForcing, 0, 0));
        policy.epsilon = 1.0; // ignored in inference mode
        let exec = execute(&plan, &mut policy, Some(&full_targets()), &store).unwrap();
        for step in &exec.trace.steps {
            assert!(step.provenance.iter().all(|p| *p == Provenance::Predicted));
        }
    }

    #[test]
    fn select_input_frequency_tracks_epsilon() {
        let mut policy = GuidancePolicy::train(0.5, stream(5, Purpose::TeacherForcing, 0, 0));
        let draws = 10_000;
        let gt = (0..draws)
            .filter(|_| select_input(&mut policy, true) == Provenance::GroundTruth)
            .count();
        let frac = gt as f64 / draws as f64;
        assert!((frac - 0.5).abs() < 0.02, "gt fraction {frac}");
    }

    #[test]
    fn program_granularity_uses_one_coin() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        for seed in 0..20 {
            let mut policy =
                GuidancePolicy::train(0.5, stream(seed, Purpose::TeacherForcing, 0, 0));
            policy.granularity = TfGranularity::Program;
            let exec = execute(&plan, &mut policy, Some(&full_targets()), &store).unwrap();
            let provs: Vec<Provenance> = exec
                .trace
                .steps
                .iter()
                .flat_map(|s| s.provenance.iter().copied())
                .collect();
            assert!(
                provs.iter().all(|p| *p == provs[0]),
                "all edges share the program coin"
            );
        }
    }

    #[test]
    fn non_finite_output_aborts_with_step_index() {
        let f = features();
        let mut store = store_for(&f);
        // Infinite logit weights force the softmax to inf - inf = NaN.
        let id = store.id("FilterAttr.W6").unwrap();
        let shape = [store.value(id).rows(), store.value(id).cols()];
        store
            .set_value(id, Tensor::filled(shape[0], shape[1], Real::INFINITY))
            .unwrap();
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        let mut policy = GuidancePolicy::train(0.0, stream(6, Purpose::TeacherForcing, 0, 0));
        let err = execute(&plan, &mut policy, None, &store).unwrap_err();
        assert_eq!(err, ExecError::NonFinite { step: 1 });
    }

    #[test]
    fn oracle_substitution_reproduces_the_answer() {
        let f = features();
        let store = store_for(&f);
        let p = chain_program();
        let plan = instantiate(&p, &f, &Catalog::standard(), &store).unwrap();
        let exec = oracle_substitute(&plan, &full_targets()).unwrap();
        assert_eq!(exec.trace.predicted, "cat");
        assert_eq!(exec.trace.steps.len(), 3);

        // Boolean-terminal program goes through the yes/no adapter.
        let pb = parse_program(
            r#"{"steps":[
                {"op":"Select","arg":"cat"},
                {"op":"Exist","deps":[0]}]}"#,
            &Catalog::standard(),
        )
        .unwrap();
        let planb = instantiate(&pb, &f, &Catalog::standard(), &store).unwrap();
        let targets = StepTargets {
            steps: vec![
                Some(StepTarget::Attention(AttentionTarget {
                    indices: vec![0],
                    n_boxes: 4,
                    soft: false,
                })),
                Some(StepTarget::Boolean(1.0)),
            ],
            answer: Some(AnswerTarget::YesNo(true)),
        };
        let exec = oracle_substitute(&planb, &targets).unwrap();
        assert_eq!(exec.trace.predicted, "yes");
        assert_eq!(exec.trace.answer_space, AnswerSpace::YesNo);
    }
}
