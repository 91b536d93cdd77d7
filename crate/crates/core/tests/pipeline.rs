//! Cross-module behavior: target construction from the oracle, guided
//! execution, the teacher-forcing gradient cut, and multi-task loss
//! semantics over real generated examples.

use nmn_core::executor::{
    execute, instantiate, oracle_substitute, ExecutablePlan, Execution, FeatureSet,
    GuidancePolicy, Provenance,
};
use nmn_core::gradcheck::{check_gradients, GradCheckConfig, GRADCHECK_TOLERANCE};
use nmn_core::graph::GradBuffer;
use nmn_core::guidance::{
    build_targets, multitask_loss, LossWeights, MatchConfig, MatchMode, StepTargets,
};
use nmn_core::modules::register_parameters;
use nmn_core::params::ParameterStore;
use nmn_core::program::{validate_program, Catalog, Program};
use nmn_core::rng::{stream, ChaCha8Rng, Purpose};
use nmn_core::synthdata::{
    encode_features, generate_example, projection_matrix, ExampleConfig, FeatureSynthConfig,
    GeneratedExample, Vocabulary,
};

struct Fixture {
    example: GeneratedExample,
    features: FeatureSet,
    catalog: Catalog,
}

fn fixture(seed: u64, index: u64) -> Fixture {
    let vocab = Vocabulary::desk_default();
    let catalog = Catalog::standard();
    let cfg = ExampleConfig {
        n_boxes: 8,
        min_objects: 3,
        max_objects : 5,
    };
    let example = generate_example(seed, 0, index, &vocab, &catalog, &cfg, "fx").unwrap();
    let synth = FeatureSynthConfig {
        d: 24,
        noise_sigma: 0.0,
        seed,
    };
    let projection = projection_matrix(&vocab, &synth);
    let mut noise = stream(seed, Purpose::FeatureNoise, 0, index);
    let features = encode_features(
        &example.scene,
        &nmn_core::synthdata::program_args(&example.program),
        &vocab,
        &synth,
        &projection,
        &mut noise,
    )
    .unwrap();
    Fixture {
        example,
        features,
        catalog,
    }
}

fn store_for(f: &Fixture, seed: u64) -> ParameterStore {
    let mut store = ParameterStore::new(seed);
    register_parameters(&mut store, &f.catalog, &f.features.dims()).unwrap();
    store
}

fn targets_for(f: &Fixture, mode: MatchMode) -> StepTargets {
    build_targets(
        &f.example.program,
        &f.catalog,
        &f.example.oracle,
        &f.example.scene.object_boxes(),
        &f.features,
        &MatchConfig { mode, tau: 0.5 },
    )
    .unwrap()
}

fn tf_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Purpose::TeacherForcing, 0, 0)
}

/// Finds a generated example whose program is a chain of at least three
/// steps (so the gradient cut has something upstream to cut).
fn chain_fixture() -> Fixture {
    for i in 0..200 {
        let f = fixture(31, i);
        let p = &f.example.program;
        if p.steps.len() >= 3 && p.steps.iter().all(|s| s.deps.len() <= 1) {
            let all_feedable = f
                .example
                .oracle
                .steps
                .iter()
                .take(p.steps.len() - 1)
                .all(|s| !matches!(s, nmn_core::synthdata::OracleStep::Attention(v) if v.is_empty()));
            if all_feedable {
                return f;
            }
        }
    }
    panic!("no chain example found");
}

#[test]
fn targets_follow_oracle_sets_exactly_on_synthetic_boxes() {
    // Detector boxes equal scene boxes, so hard matching recovers the
    // oracle attention sets verbatim.
    for i in 0..50 {
        let f = fixture(3, i);
        let targets = targets_for(&f, MatchMode::Hard);
        for (t, step) in f.example.oracle.steps.iter().enumerate() {
            if let nmn_core::synthdata::OracleStep::Attention(objs) = step {
                match targets.steps[t].as_ref() {
                    Some(nmn_core::guidance::StepTarget::Attention(at)) => {
                        assert_eq!(&at.indices, objs, "example {i} step {t}");
                    }
                    None => assert!(objs.is_empty(), "example {i} step {t} dropped"),
                    other => panic!("unexpected target {other:?}"),
                }
            }
        }
    }
}

#[test]
fn soft_targets_cover_hard_targets() {
    for i in 0..50 {
        let f = fixture(4, i);
        let hard = targets_for(&f, MatchMode::Hard);
        let soft = targets_for(&f, MatchMode::Soft);
        for (h, s) in hard.steps.iter().zip(&soft.steps) {
            if let (
                Some(nmn_core::guidance::StepTarget::Attention(h)),
                Some(nmn_core::guidance::StepTarget::Attention(s)),
            ) = (h.as_ref(), s.as_ref())
            {
                for idx in &h.indices {
                    assert!(
                        s.indices.contains(idx),
                        "an identical box always exceeds tau = 0.5"
                    );
                }
            }
        }
    }
}

#[test]
fn oracle_substitution_matches_oracle_answers() {
    for i in 0..100 {
        let f = fixture(5, i);
        let store = store_for(&f, 1);
        let plan = instantiate(&f.example.program, &f.features, &f.catalog, &store).unwrap();
        let targets = targets_for(&f, MatchMode::Hard);
        let exec = oracle_substitute(&plan, &targets).unwrap();
        assert_eq!(
            exec.trace.predicted, f.example.oracle.answer,
            "example {i}: oracle substitution must reproduce the answer"
        );
    }
}

#[test]
fn full_guidance_uses_ground_truth_on_every_feedable_edge() {
    let f = chain_fixture();
    let store = store_for(&f, 2);
    let plan = instantiate(&f.example.program, &f.features, &f.catalog, &store).unwrap();
    let targets = targets_for(&f, MatchMode::Hard);
    let mut policy = GuidancePolicy::train(1.0, tf_rng(1));
    let exec = execute(&plan, &mut policy, Some(&targets), &store).unwrap();
    for (t, step) in exec.trace.steps.iter().enumerate() {
        for (slot, prov) in step.provenance.iter().enumerate() {
            let dep = f.example.program.steps[t].deps[slot];
            if targets.steps[dep].is_some() {
                assert_eq!(*prov, Provenance::GroundTruth);
            }
        }
    }
}

fn answer_only_loss(
    plan: &ExecutablePlan,
    policy: &mut GuidancePolicy,
    targets: &StepTargets,
    store: &ParameterStore,
) -> Execution {
    let mut exec = execute(plan, policy, Some(targets), store).unwrap();
    let mut batch = core::slice::from_mut(&mut exec);
    multitask_loss(
        &mut batch,
        &LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
        },
        store,
    )
    .unwrap();
    exec
}

#[test]
fn gradient_cut_blocks_upstream_parameters_under_full_guidance() {
    let f = chain_fixture();
    let mut store = store_for(&f, 3);
    let plan = instantiate(&f.example.program, &f.features, &f.catalog, &store).unwrap();
    let targets = targets_for(&f, MatchMode::Hard);
    let first_op = f.example.program.steps[0].op.clone();
    let last_op = f.example.program.steps.last().unwrap().op.clone();

    // Fully guided: the answer loss sees only detached inputs, so no
    // gradient reaches the first module's parameters.
    let mut policy = GuidancePolicy::train(1.0, tf_rng(2));
    let mut exec = answer_only_loss(&plan, &mut policy, &targets, &store);
    let root = exec.loss_root.expect("answer loss exists");
    let mut grads = GradBuffer::new(store.len());
    exec.graph.backward(root, &store, &mut grads).unwrap();
    fn slot_grad_norm(store: &ParameterStore, grads: &GradBuffer, op: &str) -> f64 {
        let mut sum = 0.0;
        for (slot, g) in grads.entries() {
            if store.name(slot).starts_with(&format!("{op}.")) {
                sum += g.data().iter().map(|v| (v * v) as f64).sum::<f64>();
            }
        }
        sum
    }
    assert_eq!(
        slot_grad_norm(&store, &grads, &first_op),
        0.0,
        "upstream gradients must be exactly zero under full guidance"
    );
    assert!(
        slot_grad_norm(&store, &grads, &last_op) > 0.0,
        "the answer module itself still trains"
    );

    // The same check via finite differences on the whole program.
    let report = check_gradients(
        &mut exec.graph,
        root,
        &mut store,
        &GradCheckConfig {
            max_entries_per_slot: 4,
            ..GradCheckConfig::default()
        },
    )
    .unwrap();
    assert!(
        report.passes(GRADCHECK_TOLERANCE),
        "worst rel err {}",
        report.worst
    );

    // Without guidance the answer loss reaches the first module.
    let mut policy = GuidancePolicy::train(0.0, tf_rng(3));
    let mut exec = answer_only_loss(&plan, &mut policy, &targets, &store);
    let root = exec.loss_root.unwrap();
    let mut grads = GradBuffer::new(store.len());
    exec.graph.backward(root, &store, &mut grads).unwrap();
    assert!(
        slot_grad_norm(&store, &grads, &first_op) > 0.0,
        "answer gradients must reach the first module without guidance"
    );

    // Negative control: routing gt through the predicted node (identical
    // forward values) leaks gradient upstream, so the cut is falsifiable.
    let mut policy = GuidancePolicy::train(1.0, tf_rng(4));
    policy.debug_no_detach = true;
    let mut exec = answer_only_loss(&plan, &mut policy, &targets, &store);
    let root = exec.loss_root.unwrap();
    let mut grads = GradBuffer::new(store.len());
    exec.graph.backward(root, &store, &mut grads).unwrap();
    assert!(
        slot_grad_norm(&store, &grads, &first_op) > 0.0,
        "without detach the gradient-cut invariant must fail"
    );
}

fn executed_batch(
    fixtures: &[Fixture],
    stores_seed: u64,
    epsilon: f64,
) -> (Vec<Execution>, ParameterStore) {
    let store = store_for(&fixtures[0], stores_seed);
    let mut execs = Vec::new();
    for (i, f) in fixtures.iter().enumerate() {
        let plan = instantiate(&f.example.program, &f.features, &f.catalog, &store).unwrap();
        let targets = targets_for(f, MatchMode::Hard);
        let mut policy = GuidancePolicy::train(epsilon, tf_rng(100 + i as u64));
        execs.push(execute(&plan, &mut policy, Some(&targets), &store).unwrap());
    }
    (execs, store)
}

#[test]
fn answer_only_weights_reduce_total_to_gamma_answer_exactly() {
    let fixtures: Vec<Fixture> = (0..6).map(|i| fixture(11, i)).collect();
    let (mut execs, store) = executed_batch(&fixtures, 5, 0.5);
    let gamma = 0.7;
    let breakdown = multitask_loss(
        &mut execs,
        &LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma,
        },
        &store,
    )
    .unwrap();
    assert!(breakdown.answer > 0.0);
    assert_eq!(
        breakdown.total.to_bits(),
        (gamma * breakdown.answer).to_bits(),
        "zero-weight categories must drop out to machine precision"
    );
}

#[test]
fn duplicating_instances_leaves_group_terms_unchanged() {
    let fixtures: Vec<Fixture> = (0..4).map(|i| fixture(13, i)).collect();
    let (mut execs, store) = executed_batch(&fixtures, 6, 1.0);
    let base = multitask_loss(&mut execs, &LossWeights::default(), &store).unwrap();

    // duplicate the whole batch: every opcode's instance list doubles
    let (mut once, _) = executed_batch(&fixtures, 6, 1.0);
    let (twice, _) = executed_batch(&fixtures, 6, 1.0);
    once.extend(twice);
    let doubled = multitask_loss(&mut once, &LossWeights::default(), &store).unwrap();

    for (a, b) in base.groups.iter().zip(&doubled.groups) {
        assert_eq!(a.opcode, b.opcode);
        assert_eq!(2 * a.count, b.count);
        assert!(
            (a.mean - b.mean).abs() < 1e-12,
            "group {} mean changed: {} vs {}",
            a.opcode,
            a.mean,
            b.mean
        );
    }
    assert!((base.total - doubled.total).abs() < 1e-12);
}

#[test]
fn empty_batch_flags_zero_loss() {
    let f = fixture(17, 0);
    let store = store_for(&f, 7);
    let plan = instantiate(&f.example.program, &f.features, &f.catalog, &store).unwrap();
    // No targets at all: execute without gt, then ask for the loss.
    let mut policy = GuidancePolicy::train(0.0, tf_rng(9));
    let mut exec = execute(&plan, &mut policy, None, &store).unwrap();
    let mut batch = core::slice::from_mut(&mut exec);
    let breakdown = multitask_loss(&mut batch, &LossWeights::default(), &store).unwrap();
    assert!(breakdown.all_empty);
    assert_eq!(breakdown.total, 0.0);
    assert!(exec.loss_root.is_none());
}

#[test]
fn multitask_gradients_pass_finite_differences_through_all_branches() {
    let f = chain_fixture();
    let mut store = store_for(&f, 8);
    let plan = instantiate(&f.example.program, &f.features, &f.catalog, &store).unwrap();
    for mode in [MatchMode::Hard, MatchMode::Soft] {
        let targets = targets_for(&f, mode);
        let mut policy = GuidancePolicy::train(0.5, tf_rng(20));
        let mut exec = execute(&plan, &mut policy, Some(&targets), &store).unwrap();
        let mut batch = core::slice::from_mut(&mut exec);
        multitask_loss(&mut batch, &LossWeights::default(), &store).unwrap();
        let root = exec.loss_root.expect("loss exists");
        let report = check_gradients(
            &mut exec.graph,
            root,
            &mut store,
            &GradCheckConfig {
                max_entries_per_slot: 4,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(
            report.passes(GRADCHECK_TOLERANCE),
            "{mode:?}: worst rel err {}",
            report.worst
        );
    }
}

#[test]
fn generated_programs_round_trip_through_json() {
    let vocab = Vocabulary::desk_default();
    let catalog = Catalog::standard();
    let cfg = ExampleConfig::default();
    for i in 0..300 {
        let ex = generate_example(23, 1, i, &vocab, &catalog, &cfg, &format!("rt-{i}")).unwrap();
        let json = ex.program.to_json();
        let parsed: Program = nmn_core::program::parse_program(&json, &catalog).unwrap();
        assert_eq!(parsed, ex.program);
        assert!(validate_program(&parsed, &catalog).is_empty());
    }
}
