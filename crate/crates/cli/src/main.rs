//! Command-line surface: gen-data, train, eval, trace, gradcheck.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use nmn_cli::config::TrainConfig;
use nmn_cli::dataset::{generate_dataset, load_dataset, GenSpec};
use nmn_cli::evalcmd::{evaluate, AblationFields, EvalOptions};
use nmn_cli::formats::read_checkpoint;
use nmn_cli::gradcheck_cmd::run_gradcheck;
use nmn_cli::parallel::worker_count;
use nmn_cli::trace_render::{render_html, trace_to_json};
use nmn_cli::train::{train, NumericFailure};

use nmn_core::executor::{execute, instantiate, GuidancePolicy};
use nmn_core::program::Catalog;
use nmn_core::rng::{stream, Purpose};

#[derive(Parser)]
#[command(name = "nmn", version, about = "Compositional visual-reasoning engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (scenes, programs, features, oracle).
    GenData {
        /// Generation spec (JSON); defaults are the desk-scale dataset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train with teacher guidance and the multi-task loss.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (overrides the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Repeatable key=value override using config-file key names.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint: answer accuracy and intermediate accuracy.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the JSON report here (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Substitute oracle outputs for every module.
        #[arg(long)]
        oracle: bool,
        /// Train config supplying the ablation fields of the report.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render the reasoning trace of one example.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Example id, e.g. test-000007.
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "json", value_parser = ["json", "html"])]
        render: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks for every module and a mixed program.
    Gradcheck {
        /// Entries probed per parameter slot.
        #[arg(long, default_value_t = 8)]
        sample: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<NumericFailure>().is_some() {
                ExitCode::from(3)
            } else if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: String) -> anyhow::Error {
    anyhow!(UsageError(msg))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData { config, out, seed } => {
            let mut spec = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<GenSpec>(&text)
                        .map_err(|e| usage(format!("invalid gen spec: {e}")))?
                }
                None => GenSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let summary = generate_dataset(&spec, &out)?;
            println!(
                "wrote {} train / {} test examples to {}",
                summary.train,
                summary.test,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train {
            config,
            data,
            out,
            seed,
            set,
        } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            for s in &set {
                cfg.apply_set(s).map_err(|e| usage(e.to_string()))?;
            }
            if let Some(d) = data {
                cfg.data = d;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = train(&cfg)?;
            println!(
                "done: test accuracy {:.4}, checkpoint {}",
                outcome.final_test_acc,
                outcome.checkpoint.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval {
            checkpoint,
            data,
            split,
            out,
            oracle,
            config,
        } => {
            let dataset = load_dataset(&data, &split)?;
            let catalog = Catalog::standard();
            let cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => TrainConfig::default(),
            };
            let store = match &checkpoint {
                Some(path) => {
                    let mut r = BufReader::new(
                        File::open(path)
                            .with_context(|| format!("opening {}", path.display()))?,
                    );
                    read_checkpoint(&mut r)?
                }
                None if oracle => {
                    // oracle substitution touches no parameters; shapes only
                    let dims = dataset
                        .examples
                        .first()
                        .map(|e| e.features.dims())
                        .ok_or_else(|| anyhow!("empty split"))?;
                    let mut store = nmn_core::params::ParameterStore::new(0);
                    nmn_core::modules::register_parameters(&mut store, &catalog, &dims)?;
                    store
                }
                None => return Err(usage("--checkpoint required unless --oracle".into())),
            };
            let report = evaluate(
                &dataset,
                &store,
                &catalog,
                &EvalOptions {
                    oracle_substitute: oracle,
                    match_cfg: cfg.match_config()?,
                    ablation: AblationFields::from_config(&cfg),
                    threads: worker_count(),
                },
            )?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Trace {
            checkpoint,
            data,
            split,
            id,
            render,
            out,
        } => {
            let dataset = load_dataset(&data, &split)?;
            let example = dataset
                .find(&id)
                .ok_or_else(|| anyhow!("unknown example `{id}` in split `{split}`"))?;
            let catalog = Catalog::standard();
            let mut r = BufReader::new(File::open(&checkpoint)?);
            let store = read_checkpoint(&mut r)?;
            let plan = instantiate(&example.program, &example.features, &catalog, &store)?;
            let mut policy = GuidancePolicy::inference(stream(0, Purpose::TeacherForcing, 0, 0));
            let targets = nmn_core::guidance::build_targets(
                &example.program,
                &catalog,
                &example.oracle,
                &example.gt_boxes,
                &example.features,
                &nmn_core::guidance::MatchConfig::default(),
            )?;
            let exec = execute(&plan, &mut policy, Some(&targets), &store)?;
            let question = example.program.question.as_deref();
            let mut w = BufWriter::new(File::create(&out)?);
            match render.as_str() {
                "json" => {
                    let value = trace_to_json(&exec.trace, &example.features, question);
                    writeln!(w, "{}", serde_json::to_string_pretty(&value)?)?;
                }
                "html" => {
                    w.write_all(render_html(&exec.trace, &example.features, question).as_bytes())?;
                }
                other => bail!(usage(format!("unknown render mode `{other}`"))),
            }
            w.flush()?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gradcheck { sample } => {
            let outcome = run_gradcheck(sample)?;
            for line in &outcome.lines {
                println!(
                    "{} {:<52} worst rel err {:.3e}",
                    if line.pass { "ok  " } else { "FAIL" },
                    line.scope,
                    line.worst
                );
            }
            println!(
                "gradcheck: worst {:.3e}, tolerance {:.0e}: {}",
                outcome.worst,
                outcome.tolerance,
                if outcome.pass { "PASS" } else { "FAIL" }
            );
            if outcome.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(NumericFailure(format!(
                    "gradient check failed: worst {:.3e}",
                    outcome.worst
                ))
                .into())
            }
        }
    }
}
