use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polycomp::pipeline::{self, SearchKind, StagePaths};
use polycomp::{format, CliError, Result, RunConfig};
use polycomp_core::envs::TaskId;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "POLYCOMP_OUT";

#[derive(Parser, Debug)]
#[command(name = "polycomp", version, about = "Policy dataset generation, behavioral compression and latent PGPE")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set pgpe.center_lr=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (default: config `output_dir`, then $POLYCOMP_OUT, then `runs`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a random policy pool and keep its most novel fraction.
    GenDataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train the behavioral autoencoder on a dataset.
    TrainAe {
        #[command(flatten)]
        common: Common,
        /// Dataset file (default: `<out>/dataset.pcds`).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate the decoded latent grid and compute performance recovery.
    EvalLatent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Training report holding the train split (default: `<out>/train_report.json`).
        #[arg(long)]
        train_report: Option<PathBuf>,
    },
    /// Run PGPE on one task in latent or parameter space.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        space: SearchKind,
        /// Autoencoder for `--space latent` (default: `<out>/autoencoder.pcae`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Task name (default: first configured task).
        #[arg(long)]
        task: Option<String>,
    },
    /// Average recovery reports of several runs.
    MergeReports {
        /// Recovery JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn load(common: &Common) -> Result<(RunConfig, StagePaths)> {
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((cfg, StagePaths::new(out)))
}

fn or_default(p: &Option<PathBuf>, default: PathBuf) -> PathBuf {
    p.clone().unwrap_or(default)
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found"))))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::GenDataset { common } => {
            let (cfg, paths) = load(&common)?;
            let s = pipeline::gen_dataset(&cfg, &paths)?;
            println!("dataset {}: N={} P={}", s.path.display(), s.n, s.p);
            println!("novelty min={:.6} mean={:.6} max={:.6}", s.novelty_min, s.novelty_mean, s.novelty_max);
        }
        Command::TrainAe { common, dataset } => {
            let (cfg, paths) = load(&common)?;
            let ds = or_default(&dataset, paths.dataset());
            require_file(&ds, "dataset")?;
            let s = pipeline::train_ae(&cfg, &ds, &paths)?;
            println!("checkpoint {}: k={} epochs={}", s.path.display(), s.latent_dim, s.epochs);
            let best = s.best_epoch.map_or("init".to_string(), |e| e.to_string());
            println!("validation loss {:.6} -> {:.6} (best epoch {best})", s.initial_val_loss, s.best_val_loss);
        }
        Command::EvalLatent { common, checkpoint, dataset, train_report } => {
            let (cfg, paths) = load(&common)?;
            let ckpt = or_default(&checkpoint, paths.checkpoint());
            let ds = or_default(&dataset, paths.dataset());
            let rep = or_default(&train_report, paths.train_report());
            for (p, what) in [(&ckpt, "checkpoint"), (&ds, "dataset"), (&rep, "train report")] {
                require_file(p, what)?;
            }
            let s = pipeline::eval_latent(&cfg, &ckpt, &ds, &rep, &paths)?;
            println!("landscape {} ({} points)", s.landscape.display(), s.report.grid_points);
            for t in &s.report.tasks {
                let r = t.recovery.map_or("undefined".to_string(), |r| format!("{r:.3}"));
                println!(
                    "{:<12} dataset [{:.3}, {:.3}] latent [{:.3}, {:.3}] recovery {r}",
                    t.task.name(),
                    t.dataset.lower,
                    t.dataset.upper,
                    t.latent.lower,
                    t.latent.upper
                );
            }
        }
        Command::Finetune { common, space, checkpoint, task } => {
            let (cfg, paths) = load(&common)?;
            let task = match task {
                Some(t) => TaskId::parse(cfg.env, &t).map_err(|e| CliError::Validation(e.to_string()))?,
                None => cfg.task_ids()?[0],
            };
            let ckpt = match (space, checkpoint) {
                (SearchKind::Latent, None) => {
                    let p = paths.checkpoint();
                    if !p.is_file() {
                        return Err(CliError::Validation(
                            "latent fine-tuning needs --checkpoint (or a trained autoencoder in the output directory)".into(),
                        ));
                    }
                    Some(p)
                }
                (_, c) => c,
            };
            if let Some(p) = &ckpt {
                require_file(p, "checkpoint")?;
            }
            let f = pipeline::finetune(&cfg, space, ckpt.as_deref(), task, &paths)?;
            println!(
                "{} PGPE on {}: best return {:.3} after {} generations, {} env steps",
                space.name(),
                task.name(),
                f.result.best_return,
                f.result.log.len(),
                f.result.env_steps
            );
        }
        Command::MergeReports { reports, output } => {
            let merged = pipeline::merge_reports(&reports)?;
            format::write_json(&output, &merged)?;
            for t in &merged.tasks {
                let r = t.recovery.map_or("undefined".to_string(), |r| format!("{r:.3}"));
                println!("{:<12} recovery {r} over {} runs", t.task.name(), t.runs);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
