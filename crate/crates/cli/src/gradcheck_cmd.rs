//! Gradient-check runner: every opcode under every loss it can feed,
//! plus a full multi-step program with mixed input provenance.

use std::collections::BTreeMap;

use anyhow::{bail, Result};

use nmn_core::executor::{execute, instantiate, GuidancePolicy, Provenance};
use nmn_core::gradcheck::{check_gradients, GradCheckConfig, GRADCHECK_TOLERANCE};
use nmn_core::graph::{Graph, NodeId};
use nmn_core::guidance::{
    build_targets, multitask_loss, LossWeights, MatchConfig, MatchMode,
};
use nmn_core::modules::{
    build_module, choose_mask, register_parameters, sort_permutation, ModelDims, ModuleIo,
};
use nmn_core::params::ParameterStore;
use nmn_core::program::{Catalog, Kind};
use nmn_core::rng::{stream, Purpose};
use nmn_core::synthdata::{
    encode_features, generate_example, program_args, projection_matrix, ExampleConfig,
    FeatureSynthConfig, Vocabulary,
};
use nmn_core::tensor::{Real, Tensor};

pub struct CheckLine {
    pub scope: String,
    pub worst: f64,
    pub pass: bool,
}

pub struct GradcheckOutcome {
    pub tolerance: f64,
    pub worst: f64,
    pub pass: bool,
    pub lines: Vec<CheckLine>,
}

const DIMS: ModelDims = ModelDims {
    d: 12,
    n_boxes: 6,
    n_answers: 8,
};

fn fresh_store(seed: u64) -> ParameterStore {
    let mut store = ParameterStore::new(seed);
    register_parameters(&mut store, &Catalog::standard(), &DIMS).unwrap();
    store
}

fn module_io(g: &mut Graph, takes_text: bool, needs_attention: bool) -> ModuleIo {
    let visual_data: Vec<Real> = (0..DIMS.d * DIMS.n_boxes)
        .map(|i| ((i * 31 % 17) as Real) / 17.0 - 0.45)
        .collect();
    let visual = g.input(Tensor::new(vec![DIMS.d, DIMS.n_boxes], visual_data).unwrap());
    let text = takes_text.then(|| {
        let data: Vec<Real> = (0..DIMS.d).map(|i| ((i * 7 % 5) as Real) / 5.0 - 0.3).collect();
        g.input(Tensor::column(&data))
    });
    let deps = if needs_attention {
        let a = g.input(Tensor::column(&[0.4, 0.3, 0.12, 0.1, 0.05, 0.03]));
        vec![(a, Kind::Attention)]
    } else {
        vec![]
    };
    ModuleIo {
        text,
        visual,
        deps,
        choose_mask: None,
        exist_perm: None,
    }
}

fn check_opcodes(cfg: &GradCheckConfig, lines: &mut Vec<CheckLine>) -> Result<()> {
    let catalog = Catalog::standard();
    for spec in catalog.iter() {
        if spec.name == "And" || spec.name == "Or" {
            continue; // parameter-free
        }
        let losses: &[&str] = match spec.kind {
            Kind::Attention => &["hard-ce", "soft-bce"],
            Kind::Boolean => &["bce"],
            Kind::Answer => &["answer-ce"],
        };
        for loss_name in losses {
            let mut store = fresh_store(1717);
            let mut g = Graph::new();
            let needs_attention = spec.name != "Select";
            let mut io = module_io(&mut g, spec.takes_text_arg, needs_attention);
            if spec.name == "Exist" {
                io.exist_perm = Some(sort_permutation(&Tensor::column(&[
                    0.4, 0.3, 0.12, 0.1, 0.05, 0.03,
                ])));
            }
            if spec.name.starts_with("Choose") {
                io.choose_mask = Some(choose_mask(&[1, 4], DIMS.n_answers));
            }
            let out = build_module(&mut g, &store, &spec.name, &io)?;
            let root: NodeId = match *loss_name {
                "hard-ce" => {
                    let target = g.input(Tensor::column(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
                    g.cross_entropy(out.logits, target)?
                }
                "soft-bce" => {
                    let target = g.input(Tensor::column(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
                    let sig = g.sigmoid(out.logits);
                    g.binary_cross_entropy(sig, target)?
                }
                "bce" => {
                    let target = g.input(Tensor::scalar(1.0));
                    g.binary_cross_entropy(out.value, target)?
                }
                "answer-ce" => {
                    let mut one_hot = vec![0.0; DIMS.n_answers];
                    one_hot[4] = 1.0;
                    let target = g.input(Tensor::column(&one_hot));
                    g.cross_entropy(out.logits, target)?
                }
                _ => unreachable!(),
            };
            let report = check_gradients(&mut g, root, &mut store, cfg)?;
            lines.push(CheckLine {
                scope: format!("{} / {}", spec.name, loss_name),
                worst: report.worst as f64,
                pass: report.worst < GRADCHECK_TOLERANCE,
            });
        }
    }
    Ok(())
}

/// Checks a generated multi-step program executed with a mix of predicted
/// and ground-truth inputs, under the full multi-task loss.
fn check_mixed_program(cfg: &GradCheckConfig, lines: &mut Vec<CheckLine>) -> Result<()> {
    let vocab = Vocabulary::desk_default();
    let catalog = Catalog::standard();
    let ex_cfg = ExampleConfig {
        n_boxes: DIMS.n_boxes,
        min_objects: 3,
        max_objects: 4,
    };
    let synth = FeatureSynthConfig {
        d: DIMS.d,
        noise_sigma: 0.0,
        seed: 5,
    };
    let projection = projection_matrix(&vocab, &synth);

    // Find an example with >= 3 steps, then a seed whose coin flips mix
    // provenance across edges.
    for index in 0..400u64 {
        let ex = generate_example(5, 0, index, &vocab, &catalog, &ex_cfg, "gc")?;
        if ex.program.steps.len() < 3 {
            continue;
        }
        let mut noise = stream(5, Purpose::FeatureNoise, 0, index);
        let features = encode_features(
            &ex.scene,
            &program_args(&ex.program),
            &vocab,
            &synth,
            &projection,
            &mut noise,
        )?;
        let mut store = ParameterStore::new(2024);
        register_parameters(
            &mut store,
            &catalog,
            &ModelDims {
                d: DIMS.d,
                n_boxes: DIMS.n_boxes,
                n_answers: features.answer_vocab.len(),
            },
        )?;
        let targets = build_targets(
            &ex.program,
            &catalog,
            &ex.oracle,
            &ex.scene.object_boxes(),
            &features,
            &MatchConfig {
                mode: MatchMode::Hard,
                tau: 0.5,
            },
        )?;
        let plan = instantiate(&ex.program, &features, &catalog, &store)?;
        for tf_seed in 0..64u64 {
            let mut policy =
                GuidancePolicy::train(0.5, stream(tf_seed, Purpose::TeacherForcing, 0, 0));
            let mut exec = execute(&plan, &mut policy, Some(&targets), &store)?;
            let provs: Vec<Provenance> = exec
                .trace
                .steps
                .iter()
                .flat_map(|s| s.provenance.iter().copied())
                .collect();
            let mixed = provs.contains(&Provenance::Predicted)
                && provs.contains(&Provenance::GroundTruth);
            if !mixed {
                continue;
            }
            let mut batch = core::slice::from_mut(&mut exec);
            multitask_loss(&mut batch, &LossWeights::default(), &store)?;
            let root = exec.loss_root.expect("targets exist");
            let report = check_gradients(&mut exec.graph, root, &mut store, cfg)?;
            lines.push(CheckLine {
                scope: format!(
                    "program[{} steps, mixed provenance] / multitask",
                    ex.program.steps.len()
                ),
                worst: report.worst as f64,
                pass: report.worst < GRADCHECK_TOLERANCE,
            });
            return Ok(());
        }
    }
    bail!("no mixed-provenance program found");
}

pub fn run_gradcheck(entries_per_slot: usize) -> Result<GradcheckOutcome> {
    let cfg = GradCheckConfig {
        max_entries_per_slot: entries_per_slot,
        ..GradCheckConfig::default()
    };
    let mut lines = Vec::new();
    check_opcodes(&cfg, &mut lines)?;
    check_mixed_program(&cfg, &mut lines)?;
    let worst = lines.iter().fold(0.0f64, |a, l| a.max(l.worst));
    let mut counts: BTreeMap<bool, usize> = BTreeMap::new();
    for l in &lines {
        *counts.entry(l.pass).or_insert(0) += 1;
    }
    Ok(GradcheckOutcome {
        tolerance: GRADCHECK_TOLERANCE as f64,
        worst,
        pass: counts.get(&false).copied().unwrap_or(0) == 0,
        lines,
    })
}
