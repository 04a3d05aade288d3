use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gnn_comm::checks::{run_suite, SUITES};
use gnn_comm::constraints::ConstraintAxis;
use gnn_comm::marl::{EvalReport, TrainSummary};
use gnn_comm::methods::{instantiate, write_sweep_csv, ExperimentConfig, ResolvedExperiment};
use gnn_comm::numeric::ParamStore;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gnn-comm", version, about = "Train, evaluate and stress-test GNN communication for multi-agent RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed; writes a checkpoint, a JSON Lines log and a summary per seed.
    Train(RunArgs),
    /// Evaluate a checkpoint over the seed list and print a metrics JSON.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint under a channel degraded along one axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// CR, LB, NM or CL.
        #[arg(long)]
        axis: ConstraintAxis,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
    },
    /// Run an oracle suite and print a pass/fail report.
    Check {
        /// One of: gradients, equivariance, receptive_field, proxy_equivalence, channel.
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed list.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    seed: Vec<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ResolvedExperiment> {
        let mut exp = ExperimentConfig::load(&self.config)
            .with_context(|| format!("invalid experiment config {}", self.config.display()))?;
        if !self.seed.is_empty() {
            exp.seeds.clone_from(&self.seed);
        }
        if let Some(out) = &self.out {
            exp.out.clone_from(out);
        }
        Ok(exp)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    method: &'a str,
    seed: u64,
    #[serde(flatten)]
    train: TrainSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval: Option<EvalReport>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let exp = args.load()?;
    for &seed in &exp.seeds {
        let dir = exp.out.join(format!("seed{seed}"));
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut train_cfg = exp.train.clone();
        train_cfg.seed = seed;
        let mut run = instantiate(&exp.spec, &exp.env, &train_cfg)?;
        let log_path = dir.join("train.jsonl");
        let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?);
        let start = Instant::now();
        let summary = run.train(&exp.channel, |rec| {
            serde_json::to_writer(&mut log, rec)?;
            log.write_all(b"\n")?;
            Ok(())
        })?;
        log.flush()?;
        run.store.save(&dir.join("checkpoint.bin"))?;
        let eval = if train_cfg.eval_episodes > 0 {
            Some(run.evaluate(&exp.channel, &[seed], train_cfg.eval_episodes)?.0)
        } else {
            None
        };
        eprintln!(
            "{} seed {seed}: {} episodes in {:.1}s{}",
            exp.spec.name,
            summary.episodes,
            start.elapsed().as_secs_f64(),
            eval.as_ref().map_or(String::new(), |e| format!(", eval return {:.3}", e.mean_return))
        );
        write_json(
            &dir.join("summary.json"),
            &RunSummary {
                method: &exp.spec.name,
                seed,
                train: summary,
                eval,
            },
        )?;
    }
    Ok(())
}

fn load_checkpoint(run: &mut gnn_comm::methods::Experiment, path: &Path) -> Result<()> {
    let params = ParamStore::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    run.load_params(&params)
        .with_context(|| format!("checkpoint {} does not fit the method", path.display()))
}

fn eval(args: &RunArgs, checkpoint: &Path) -> Result<()> {
    let exp = args.load()?;
    let mut run = instantiate(&exp.spec, &exp.env, &exp.train)?;
    load_checkpoint(&mut run, checkpoint)?;
    let episodes = exp.train.eval_episodes.max(1);
    let (report, _) = run.evaluate(&exp.channel, &exp.seeds, episodes)?;
    if args.out.is_some() {
        fs::create_dir_all(&exp.out)?;
        write_json(&exp.out.join("eval.json"), &report)?;
    }
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &report)?;
    writeln!(stdout)?;
    Ok(())
}

fn sweep(args: &RunArgs, checkpoint: &Path, axis: ConstraintAxis, values: &[f64]) -> Result<()> {
    let exp = args.load()?;
    let mut run = instantiate(&exp.spec, &exp.env, &exp.train)?;
    let episodes = exp.train.eval_episodes.max(1);
    let rows = run
        .constraint_sweep(checkpoint, &exp.channel, axis, values, &exp.seeds, episodes)
        .with_context(|| format!("sweep over {axis} with checkpoint {}", checkpoint.display()))?;
    if args.out.is_some() {
        fs::create_dir_all(&exp.out)?;
        let path = exp.out.join(format!("sweep_{axis}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        write_sweep_csv(&rows, &mut w)?;
        w.flush()?;
    }
    write_sweep_csv(&rows, io::stdout().lock())?;
    Ok(())
}

/// Returns whether every property passed.
fn check(suite: &str, seed: u64, out: Option<&Path>) -> Result<bool> {
    if !SUITES.contains(&suite) {
        bail!("unknown check suite `{suite}` (known: {})", SUITES.join(", "));
    }
    let report = run_suite(suite, seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(format!("check_{suite}.json")), &report)?;
    }
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &report)?;
    writeln!(stdout)?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args).map(|()| true),
        Command::Eval { run, checkpoint } => eval(run, checkpoint).map(|()| true),
        Command::Sweep {
            run,
            checkpoint,
            axis,
            values,
        } => sweep(run, checkpoint, *axis, values).map(|()| true),
        Command::Check { suite, seed, out } => check(suite, *seed, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
