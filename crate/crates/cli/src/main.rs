use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jam_cli::run::{self, TrainOptions};
use jam_cli::spec::ExperimentSpec;
use jam_cli::{checkpoint, dataset, results, CliError, CliResult};
use jam_core::feasibility::{infeasibility_survey, Sampler};
use jam_core::model::SortMode;

#[derive(Parser)]
#[command(
    name = "jam",
    version,
    about = "Learned joint ad auctions: data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Soft,
    Hard,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the experiment file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write train and test profiles as JSONL.
    Gen(Common),
    /// Train the network and write a checkpoint plus a per-iteration log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path (default: <out>/model.jtnc). Resumed when it matches the experiment.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Constant sort temperature for training, replacing the configured schedule.
        #[arg(long)]
        tau: Option<f64>,
        /// Iterations between resumable checkpoints (0: only at the end).
        #[arg(long, default_value_t = 500)]
        save_every: usize,
    },
    /// Evaluate a checkpoint and VCG on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Hard)]
        mode: Mode,
        /// Temperature for soft-mode evaluation.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Test profiles (JSONL) instead of the generated test set.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Evaluate VCG only.
    Vcg(Common),
    /// Train then evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip training and report the baseline only.
        #[arg(long)]
        baseline_only: bool,
        #[arg(long, default_value_t = 500)]
        save_every: usize,
    },
    /// Fraction of sampled allocation matrices that are not lotteries over full allocations.
    FeasSurvey {
        #[arg(long, default_value_t = 3)]
        bundles: usize,
        #[arg(long, default_value_t = 2)]
        slots: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// uniform, column-stochastic or hard.
        #[arg(long, default_value = "uniform")]
        sampler: Sampler,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the result table found in a directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_spec(common: &Common) -> CliResult<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(&common.spec)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn print_table(out: &Path) -> CliResult<()> {
    let rows = results::read_csv(&out.join(run::RESULTS_FILE))?;
    print!("{}", results::render(&rows));
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(common) => {
            let spec = load_spec(&common)?;
            let (tr, te) = run::generate(&spec, &common.out)?;
            println!("{}\n{}", tr.display(), te.display());
        }
        Command::Train {
            common,
            checkpoint,
            tau,
            save_every,
        } => {
            let mut spec = load_spec(&common)?;
            if let Some(t) = tau {
                spec.train.tau.start = t;
                spec.train.tau.end = t;
                spec.validate()?;
            }
            run::ensure_dir(&common.out)?;
            let path = checkpoint.unwrap_or_else(|| common.out.join(run::CHECKPOINT_FILE));
            let ck = run::train(
                &spec,
                &TrainOptions {
                    checkpoint: path.clone(),
                    save_every,
                    resume: true,
                    log: Some(common.out.join(run::LOG_FILE)),
                },
            )?;
            println!(
                "{} after {} iterations ({:.0} s)",
                path.display(),
                ck.meta.iteration,
                ck.meta.wall_seconds
            );
        }
        Command::Eval {
            common,
            checkpoint: ck_path,
            mode,
            tau,
            test,
        } => {
            let spec = load_spec(&common)?;
            let config = spec.config()?;
            let path = ck_path.unwrap_or_else(|| common.out.join(run::CHECKPOINT_FILE));
            let ck = checkpoint::load(&path, Some(&config))?;
            let mode = match mode {
                Mode::Hard => SortMode::Hard,
                Mode::Soft => SortMode::Soft { tau },
            };
            let test = match test {
                Some(p) => dataset::read_jsonl(&p, Some(&config))?,
                None => run::test_set(&spec)?,
            };
            let eval = run::evaluate_all(&spec, Some((&ck.state.params, mode)), &test)?;
            run::write_evaluation(&common.out, &eval)?;
            print_table(&common.out)?;
        }
        Command::Vcg(common) => {
            let spec = load_spec(&common)?;
            let eval = run::evaluate_all(&spec, None, &run::test_set(&spec)?)?;
            run::write_evaluation(&common.out, &eval)?;
            print_table(&common.out)?;
        }
        Command::Run {
            common,
            baseline_only,
            save_every,
        } => {
            let spec = load_spec(&common)?;
            run::run(&spec, &common.out, baseline_only, save_every)?;
            print_table(&common.out)?;
        }
        Command::FeasSurvey {
            bundles,
            slots,
            samples,
            sampler,
            seed,
            out,
        } => {
            let survey = infeasibility_survey(bundles, slots, samples, sampler, seed)?;
            run::ensure_dir(&out)?;
            let path = out.join("feasibility.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["C", "K", "samples", "infeasible_fraction"])?;
            w.write_record([
                bundles.to_string(),
                slots.to_string(),
                samples.to_string(),
                survey.infeasible_fraction.to_string(),
            ])?;
            w.flush().map_err(|e| CliError::io(&path, e))?;
            println!(
                "C={bundles} K={slots} samples={samples} infeasible_fraction={}",
                survey.infeasible_fraction
            );
        }
        Command::Report { out } => print_table(&out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
