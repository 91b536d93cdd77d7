//! Evaluation: overall and per-template answer accuracy plus per-opcode
//! intermediate accuracy (attention argmax against the matched target
//! set, booleans thresholded at 0.5).

use std::collections::BTreeMap;

use anyhow::Result;
use serde::Serialize;

use nmn_core::executor::{
    execute, instantiate, oracle_substitute, AnswerTarget, GuidancePolicy, Trace,
};
use nmn_core::guidance::{build_targets, MatchConfig, StepTarget, StepTargets};
use nmn_core::params::ParameterStore;
use nmn_core::program::{Catalog, Kind};
use nmn_core::rng::{stream, Purpose};

use crate::config::TrainConfig;
use crate::dataset::{Dataset, Example};
use crate::parallel::parallel_map;

#[derive(Clone, Debug, Default, Serialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Accuracy {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        if ok {
            self.correct += 1;
        }
        self.accuracy = self.correct as f64 / self.total as f64;
    }
}

/// The knobs that define an ablation row.
#[derive(Clone, Debug, Serialize)]
pub struct AblationFields {
    pub tf: bool,
    pub mt: bool,
    #[serde(rename = "match")]
    pub match_mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl AblationFields {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        AblationFields {
            tf: cfg.tf_enabled(),
            mt: cfg.mt_enabled(),
            match_mode: cfg.match_mode.clone(),
            alpha: cfg.alpha,
            beta: cfg.beta,
            gamma: cfg.gamma,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub n_examples: usize,
    /// Accuracy on the yes/no-answer subset.
    pub binary_accuracy: Accuracy,
    pub per_template: BTreeMap<String, Accuracy>,
    pub per_opcode: BTreeMap<String, Accuracy>,
    pub ablation: AblationFields,
    pub oracle_substituted: bool,
    /// Up to 50 failing example ids, for trace inspection.
    pub failing: Vec<String>,
}

pub struct EvalOptions {
    pub oracle_substitute: bool,
    pub match_cfg: MatchConfig,
    pub ablation: AblationFields,
    pub threads: usize,
}

struct ExampleOutcome {
    id: String,
    correct: bool,
    binary: Option<bool>,
    template: String,
    steps: Vec<(String, Option<bool>)>,
}

fn step_correct(trace: &Trace, targets: &StepTargets, t: usize, last: usize) -> Option<bool> {
    let step = &trace.steps[t];
    if t == last {
        return match (&trace.answer_target, step.kind) {
            (Some(AnswerTarget::Index(i)), Kind::Answer) => Some(step.output.argmax() == *i),
            (Some(AnswerTarget::YesNo(y)), Kind::Boolean) => {
                Some((step.output.item() >= 0.5) == *y)
            }
            _ => None,
        };
    }
    match targets.steps[t].as_ref() {
        Some(StepTarget::Attention(at)) => Some(at.indices.contains(&step.output.argmax())),
        Some(StepTarget::Boolean(b)) => Some((step.output.item() as f64 >= 0.5) == (*b >= 0.5)),
        None => None,
    }
}

/// Evaluates a checkpoint (or the oracle-substituted executor) over a
/// dataset split with epsilon = 0.
pub fn evaluate(
    dataset: &Dataset,
    store: &ParameterStore,
    catalog: &Catalog,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let outcomes = parallel_map(&dataset.examples, opts.threads, |ex| -> Result<ExampleOutcome> {
        let plan = instantiate(&ex.program, &ex.features, catalog, store)?;
        let targets = build_targets(
            &ex.program,
            catalog,
            &ex.oracle,
            &ex.gt_boxes,
            &ex.features,
            &opts.match_cfg,
        )?;
        let exec = if opts.oracle_substitute {
            oracle_substitute(&plan, &targets)?
        } else {
            let mut policy = GuidancePolicy::inference(stream(0, Purpose::TeacherForcing, 0, 0));
            execute(&plan, &mut policy, Some(&targets), store)?
        };
        let trace = exec.trace;
        let last = trace.steps.len() - 1;
        let steps = (0..trace.steps.len())
            .map(|t| {
                (
                    trace.steps[t].op.clone(),
                    step_correct(&trace, &targets, t, last),
                )
            })
            .collect();
        let correct = trace.predicted == ex.oracle.answer;
        let binary = matches!(ex.oracle.answer.as_str(), "yes" | "no").then_some(correct);
        Ok(ExampleOutcome {
            id: ex.id.clone(),
            correct,
            binary,
            template: ex.template.clone(),
            steps,
        })
    });

    let mut overall = Accuracy::default();
    let mut binary = Accuracy::default();
    let mut per_template: BTreeMap<String, Accuracy> = BTreeMap::new();
    let mut per_opcode: BTreeMap<String, Accuracy> = BTreeMap::new();
    let mut failing = Vec::new();
    for outcome in outcomes {
        let o: ExampleOutcome = outcome?;
        if !o.correct && failing.len() < 50 {
            failing.push(o.id.clone());
        }
        overall.add(o.correct);
        if let Some(b) = o.binary {
            binary.add(b);
        }
        per_template.entry(o.template).or_default().add(o.correct);
        for (op, ok) in o.steps {
            if let Some(ok) = ok {
                per_opcode.entry(op).or_default().add(ok);
            }
        }
    }
    Ok(EvalReport {
        overall_accuracy: overall.accuracy,
        n_examples: overall.total,
        binary_accuracy: binary,
        per_template,
        per_opcode,
        ablation: opts.ablation.clone(),
        oracle_substituted: opts.oracle_substitute,
        failing,
    })
}

/// Convenience for tests: evaluate a subset of examples.
pub fn subset<'a>(dataset: &'a Dataset, ids: &[&str]) -> Vec<&'a Example> {
    ids.iter().filter_map(|id| dataset.find(id)).collect()
}
