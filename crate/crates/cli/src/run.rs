//! Experiment orchestration: data generation, training with periodic
//! checkpoints, and side-by-side evaluation against VCG.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jam_core::data::generate_profiles;
use jam_core::evaluator::{evaluate, EvalReport, LearnedMechanism, VcgMechanism};
use jam_core::model::{InstanceContext, ModelParams, SortMode};
use jam_core::stats::paired_t_test;
use jam_core::trainer::{resume, StepLog, TrainState};
use jam_core::BidProfile;
use log::info;

use crate::checkpoint::{self, Checkpoint, TrainingMeta};
use crate::dataset;
use crate::error::{CliError, CliResult};
use crate::results::{self, ResultRow};
use crate::spec::ExperimentSpec;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CHECKPOINT_FILE: &str = "model.jtnc";
pub const LOG_FILE: &str = "train_log.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const REPORTS_FILE: &str = "reports.json";

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn train_set(spec: &ExperimentSpec) -> CliResult<Vec<BidProfile>> {
    Ok(generate_profiles(
        &spec.config()?,
        &spec.distribution,
        spec.train_size,
        spec.train_seed(),
    )?)
}

pub fn test_set(spec: &ExperimentSpec) -> CliResult<Vec<BidProfile>> {
    Ok(generate_profiles(
        &spec.config()?,
        &spec.distribution,
        spec.test_size,
        spec.test_seed(),
    )?)
}

/// Writes both datasets into `out`.
pub fn generate(spec: &ExperimentSpec, out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    ensure_dir(out)?;
    let (tr, te) = (out.join(TRAIN_FILE), out.join(TEST_FILE));
    dataset::write_jsonl(&tr, &train_set(spec)?)?;
    dataset::write_jsonl(&te, &test_set(spec)?)?;
    Ok((tr, te))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub checkpoint: PathBuf,
    /// Iterations between resumable checkpoints; 0 saves only at the end.
    pub save_every: usize,
    /// Continue from `checkpoint` when it exists and belongs to this spec.
    pub resume: bool,
    pub log: Option<PathBuf>,
}

/// Trains per `spec`, checkpointing along the way. Returns the final checkpoint.
pub fn train(spec: &ExperimentSpec, opts: &TrainOptions) -> CliResult<Checkpoint> {
    let config = spec.config()?;
    let run_key = spec.run_key()?;
    let ctx = InstanceContext::new(&config, spec.arch.width)?;
    let (state, mut meta) = match opts.resume.then(|| checkpoint::load(&opts.checkpoint, Some(&config))) {
        Some(Ok(ck)) if ck.meta.run_key == run_key && ck.has_optimizer => {
            info!("resuming from iteration {}", ck.state.iteration);
            (ck.state, ck.meta)
        }
        Some(Ok(_)) => {
            return Err(CliError::Spec(format!(
                "{} was produced by a different experiment; remove it or drop --resume",
                opts.checkpoint.display()
            )))
        }
        Some(Err(CliError::Io { .. })) | None => {
            let params = ModelParams::init(spec.arch, spec.init_seed())?;
            let meta = TrainingMeta {
                iteration: 0,
                seed: spec.seed,
                wall_seconds: 0.0,
                run_key,
            };
            (TrainState::new(params, config.num_bidders()), meta)
        }
        Some(Err(e)) => return Err(e),
    };
    let data = train_set(spec)?;
    let mut log_writer = match &opts.log {
        Some(path) => {
            let append = state.iteration > 0 && path.exists();
            let file = fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(path)
                .map_err(|e| CliError::io(path, e))?;
            Some(csv::WriterBuilder::new().has_headers(!append).from_writer(file))
        }
        None => None,
    };
    let base_seconds = meta.wall_seconds;
    let start = Instant::now();
    let mut failure: Option<CliError> = None;
    let total = spec.train.iterations;
    let outcome = resume(state, &ctx, &data, &spec.train, |step: &StepLog, st: &TrainState| {
        if failure.is_some() {
            return;
        }
        if let Some(w) = log_writer.as_mut() {
            if let Err(e) = w.serialize(step) {
                failure = Some(e.into());
                return;
            }
        }
        if step.iteration.is_multiple_of(100) {
            info!(
                "iteration {}/{total}: loss {:.5} revenue {:.4} regret {:.5}",
                step.iteration, step.loss, step.revenue, step.mean_regret
            );
        }
        if opts.save_every > 0 && step.iteration.is_multiple_of(opts.save_every) && step.iteration < total {
            let m = TrainingMeta {
                wall_seconds: base_seconds + start.elapsed().as_secs_f64(),
                ..meta.clone()
            };
            let flushed = log_writer.as_mut().map_or(Ok(()), |w| w.flush());
            if let Err(e) = flushed {
                failure = Some(CliError::io(&opts.checkpoint, e));
            } else if let Err(e) = checkpoint::save(&opts.checkpoint, &config, st, &m, true) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(w) = log_writer.as_mut() {
        w.flush()
            .map_err(|e| CliError::io(opts.log.as_deref().unwrap_or(Path::new("")), e))?;
    }
    meta.wall_seconds = base_seconds + start.elapsed().as_secs_f64();
    meta.iteration = outcome.state.iteration;
    checkpoint::save(&opts.checkpoint, &config, &outcome.state, &meta, true)?;
    Ok(Checkpoint {
        config,
        meta,
        state: outcome.state,
        has_optimizer: true,
    })
}

/// Evaluation results of one experiment.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rows: Vec<ResultRow>,
    pub vcg: EvalReport,
    pub learned: Option<EvalReport>,
}

/// Evaluates VCG and, when given, the learned mechanism on the same test set.
pub fn evaluate_all(
    spec: &ExperimentSpec,
    learned: Option<(&ModelParams, SortMode)>,
    test: &[BidProfile],
) -> CliResult<Evaluation> {
    let config = spec.config()?;
    let label = spec.label();
    let vcg = evaluate(&VcgMechanism, &config, test, &spec.eval_grid)?;
    let mut rows = Vec::new();
    let learned_report = match learned {
        Some((params, mode)) => {
            let mech = LearnedMechanism::new(params.clone(), mode).with_instance(&config)?;
            let report = evaluate(&mech, &config, test, &spec.eval_grid)?;
            let p = if test.len() >= 2 {
                Some(paired_t_test(&report.per_sample_revenue, &vcg.per_sample_revenue)?.p_value)
            } else {
                None
            };
            rows.push(ResultRow::from_report(&label, &report, p));
            Some(report)
        }
        None => None,
    };
    rows.push(ResultRow::from_report(&label, &vcg, None));
    Ok(Evaluation {
        rows,
        vcg,
        learned: learned_report,
    })
}

/// Writes the result table and full reports into `out`.
pub fn write_evaluation(out: &Path, eval: &Evaluation) -> CliResult<()> {
    ensure_dir(out)?;
    results::write_csv(&out.join(RESULTS_FILE), &eval.rows)?;
    let reports: Vec<&EvalReport> = eval.learned.iter().chain(std::iter::once(&eval.vcg)).collect();
    let path = out.join(REPORTS_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&reports)?).map_err(|e| CliError::io(&path, e))
}

/// Full pipeline: train (unless `baseline_only`), then evaluate and write results.
pub fn run(spec: &ExperimentSpec, out: &Path, baseline_only: bool, save_every: usize) -> CliResult<Evaluation> {
    ensure_dir(out)?;
    let trained = if baseline_only {
        None
    } else {
        Some(train(
            spec,
            &TrainOptions {
                checkpoint: out.join(CHECKPOINT_FILE),
                save_every,
                resume: true,
                log: Some(out.join(LOG_FILE)),
            },
        )?)
    };
    let test = test_set(spec)?;
    let eval = evaluate_all(
        spec,
        trained.as_ref().map(|ck| (&ck.state.params, SortMode::Hard)),
        &test,
    )?;
    write_evaluation(out, &eval)?;
    Ok(eval)
}
