//! Training driver: per epoch, compute the guidance epsilon, execute
//! batches under teacher forcing, assemble the multi-task loss, reduce
//! worker gradients in example order, and step the optimizer. Metrics go
//! to a JSON-lines log; checkpoints are written at the eval cadence.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use nmn_core::executor::{execute, instantiate, Execution, GuidancePolicy};
use nmn_core::graph::GradBuffer;
use nmn_core::guidance::{build_targets, epsilon_schedule, multitask_loss, StepTargets};
use nmn_core::modules::register_parameters;
use nmn_core::params::ParameterStore;
use nmn_core::program::Catalog;
use nmn_core::rng::{stream, Purpose, SliceRandom};

use crate::config::TrainConfig;
use crate::dataset::{load_dataset, Dataset, Example};
use crate::formats::write_checkpoint;
use crate::parallel::{parallel_map, parallel_map_mut, worker_count};

/// Marker for numeric failures (exit code 3): non-finite loss or module
/// outputs during training.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numeric failure: {}", self.0)
    }
}

impl std::error::Error for NumericFailure {}

/// One metrics-log line. Field order is the wire order.
#[derive(Clone, Debug, Serialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub epsilon: f64,
    pub loss: f64,
    pub loss_att: f64,
    pub loss_bool: f64,
    pub loss_answer: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub struct TrainOutcome {
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub store: ParameterStore,
}

/// Answer accuracy under inference (epsilon = 0, predictions only).
pub fn answer_accuracy(
    examples: &[&Example],
    store: &ParameterStore,
    catalog: &Catalog,
    threads: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let outcomes = parallel_map(examples, threads, |ex| -> Result<bool> {
        let plan = instantiate(&ex.program, &ex.features, catalog, store)?;
        let mut policy = GuidancePolicy::inference(stream(0, Purpose::TeacherForcing, 0, 0));
        let exec = execute(&plan, &mut policy, None, store)?;
        Ok(exec.trace.predicted == ex.oracle.answer)
    });
    let mut correct = 0usize;
    for o in outcomes {
        if o? {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

fn precompute_targets(
    dataset: &Dataset,
    catalog: &Catalog,
    cfg: &TrainConfig,
) -> Result<Vec<StepTargets>> {
    let match_cfg = cfg.match_config()?;
    dataset
        .examples
        .iter()
        .map(|ex| {
            build_targets(
                &ex.program,
                catalog,
                &ex.oracle,
                &ex.gt_boxes,
                &ex.features,
                &match_cfg,
            )
            .map_err(Into::into)
        })
        .collect()
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let schedule = cfg.schedule()?;
    let weights = cfg.loss_weights()?;
    let optimizer = cfg.optimizer()?;
    let granularity = cfg.granularity()?;
    let catalog = Catalog::standard();
    let threads = worker_count();

    let train_set = load_dataset(&cfg.data, "train").context("loading train split")?;
    let test_set = load_dataset(&cfg.data, "test").context("loading test split")?;
    if train_set.examples.is_empty() {
        bail!("train split is empty");
    }
    let targets = precompute_targets(&train_set, &catalog, cfg)?;
    let dims = train_set.examples[0].features.dims();

    let mut store = ParameterStore::new(cfg.seed);
    register_parameters(&mut store, &catalog, &dims)?;

    fs::create_dir_all(&cfg.out)?;
    let metrics_path = cfg.out.join("metrics.jsonl");
    let mut metrics_file = BufWriter::new(File::create(&metrics_path)?);
    let final_ckpt = cfg.out.join("model.nmnp");

    let n_train = cfg
        .train_subset
        .map(|s| s.min(train_set.examples.len()))
        .unwrap_or(train_set.examples.len());
    let base_indices: Vec<usize> = (0..n_train).collect();

    let eval_train: Vec<&Example> = train_set
        .examples
        .iter()
        .take(cfg.eval_train_subset.min(n_train))
        .collect();
    let eval_test: Vec<&Example> = test_set.examples.iter().collect();

    let mut last = EpochMetrics {
        epoch: 0,
        epsilon: 0.0,
        loss: 0.0,
        loss_att: 0.0,
        loss_bool: 0.0,
        loss_answer: 0.0,
        train_acc: 0.0,
        test_acc: 0.0,
    };

    for epoch in 0..cfg.epochs {
        let epsilon = epsilon_schedule(epoch, &schedule)?;
        let mut order = base_indices.clone();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch as u64, 0));

        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Execute the batch in parallel; each worker owns its graph.
            let results = parallel_map(batch, threads, |&idx| -> Result<Execution> {
                let ex = &train_set.examples[idx];
                let plan = instantiate(&ex.program, &ex.features, &catalog, &store)?;
                let mut policy = GuidancePolicy::train(
                    epsilon,
                    stream(cfg.seed, Purpose::TeacherForcing, epoch as u64, idx as u64),
                );
                policy.granularity = granularity;
                Ok(execute(&plan, &mut policy, Some(&targets[idx]), &store)?)
            });
            let mut execs = Vec::with_capacity(batch.len());
            for r in results {
                execs.push(r?);
            }

            let breakdown = multitask_loss(&mut execs, &weights, &store)?;
            if !breakdown.total.is_finite() {
                return Err(NumericFailure(format!(
                    "non-finite loss at epoch {epoch}; last checkpoint retained"
                ))
                .into());
            }

            // Backward in parallel into per-example buffers, then merge in
            // example order so results do not depend on thread count.
            let slot_count = store.len();
            let store_ref = &store;
            let buffers: Vec<Option<GradBuffer>> =
                parallel_map_mut(&mut execs, threads, |exec| {
                    exec.loss_root.map(|root| {
                        let mut buf = GradBuffer::new(slot_count);
                        exec.graph
                            .backward(root, store_ref, &mut buf)
                            .expect("loss was evaluated");
                        buf
                    })
                });
            for buf in buffers.into_iter().flatten() {
                store.merge_grads(&buf);
            }
            store.optimizer_step(&optimizer)?;

            let b = batch.len() as f64;
            sums.0 += breakdown.total * b;
            sums.1 += breakdown.attention * b;
            sums.2 += breakdown.boolean * b;
            sums.3 += breakdown.answer * b;
            seen += batch.len();
        }

        let denom = seen.max(1) as f64;
        let train_acc = answer_accuracy(&eval_train, &store, &catalog, threads)?;
        let test_acc = answer_accuracy(&eval_test, &store, &catalog, threads)?;
        last = EpochMetrics {
            epoch,
            epsilon,
            loss: sums.0 / denom,
            loss_att: sums.1 / denom,
            loss_bool: sums.2 / denom,
            loss_answer: sums.3 / denom,
            train_acc,
            test_acc,
        };
        let line = serde_json::to_string(&last)?;
        writeln!(metrics_file, "{line}")?;
        metrics_file.flush()?;
        println!("{line}");

        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            let path = cfg.out.join(format!("ckpt-{:04}.nmnp", epoch + 1));
            let mut w = BufWriter::new(File::create(path)?);
            write_checkpoint(&mut w, &store)?;
            w.flush()?;
        }
    }

    let mut w = BufWriter::new(File::create(&final_ckpt)?);
    write_checkpoint(&mut w, &store)?;
    w.flush()?;

    Ok(TrainOutcome {
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        checkpoint: final_ckpt,
        metrics: metrics_path,
        store,
    })
}
