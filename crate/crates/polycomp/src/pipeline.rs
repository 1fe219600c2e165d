//! Pipeline stages as library functions; the binary is a thin wrapper.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use polycomp_core::compressor::{self, Autoencoder, TrainReport};
use polycomp_core::dataset::{generate_dataset, GenerationConfig, PolicyDataset, ReturnBounds};
use polycomp_core::envs::{EnvKind, TaskId};
use polycomp_core::landscape::{self, fit_grid, points_per_dim, TaskRecovery};
use polycomp_core::pgpe::{self, LatentSpace, ParameterSpace, PgpeConfig, PgpeResult};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::format;
use crate::heatmap;
use crate::manifest::{file_name, sha256_file, verify_against_manifest, RunManifest, StageRecord};

pub const DATASET_FILE: &str = "dataset.pcds";
pub const CHECKPOINT_FILE: &str = "autoencoder.pcae";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const LANDSCAPE_FILE: &str = "landscape.csv";
pub const RECOVERY_FILE: &str = "recovery.json";

/// Where a stage reads its inputs and writes its outputs.
#[derive(Debug, Clone)]
pub struct StagePaths {
    pub out_dir: PathBuf,
}

impl StagePaths {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.out_dir.join(DATASET_FILE)
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.out_dir.join(CHECKPOINT_FILE)
    }
    pub fn train_report(&self) -> PathBuf {
        self.out_dir.join(TRAIN_REPORT_FILE)
    }
    pub fn landscape(&self) -> PathBuf {
        self.out_dir.join(LANDSCAPE_FILE)
    }
    pub fn recovery(&self) -> PathBuf {
        self.out_dir.join(RECOVERY_FILE)
    }
    pub fn finetune(&self, space: SearchKind, task: TaskId) -> PathBuf {
        self.out_dir.join(format!("finetune_{}_{}.json", space.name(), task.name()))
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((file_name(p), sha256_file(p)?))).collect()
}

fn record(
    paths: &StagePaths,
    stage: &str,
    cfg: &RunConfig,
    started: Instant,
    inputs: &[&Path],
    outputs: &[&Path],
    env_steps: u64,
) -> Result<()> {
    let rec = StageRecord {
        wall_seconds: started.elapsed().as_secs_f64(),
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
        env_steps,
    };
    RunManifest::record(&paths.out_dir, stage, cfg.to_toml(), rec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub path: PathBuf,
    pub n: usize,
    pub p: usize,
    pub novelty_min: f64,
    pub novelty_mean: f64,
    pub novelty_max: f64,
}

pub fn generation_config(cfg: &RunConfig) -> GenerationConfig {
    GenerationConfig {
        pool_size: cfg.dataset.pool_size,
        fraction: cfg.dataset.filter_fraction,
        novelty_k: cfg.dataset.novelty_k,
        sample_scale: cfg.dataset.sample_scale,
        seed: cfg.stage_seed("dataset"),
    }
}

pub fn gen_dataset(cfg: &RunConfig, paths: &StagePaths) -> Result<DatasetSummary> {
    let started = Instant::now();
    let env = cfg.environment()?;
    let ds = generate_dataset(&cfg.arch()?, &env, &generation_config(cfg))?;
    let path = paths.dataset();
    format::save_dataset(&path, &ds)?;
    let side = format::DatasetSidecar::new(&ds);
    format::write_json(&sidecar(&path), &side)?;
    record(paths, "gen-dataset", cfg, started, &[], &[&path], 0)?;
    Ok(DatasetSummary {
        path,
        n: side.n,
        p: side.p,
        novelty_min: side.novelty_min,
        novelty_mean: side.novelty_mean,
        novelty_max: side.novelty_max,
    })
}

/// Loads a dataset after checking it against its manifest and the config.
pub fn load_checked_dataset(cfg: &RunConfig, path: &Path) -> Result<PolicyDataset> {
    verify_against_manifest(path)?;
    let ds = format::load_dataset(path)?;
    let arch = cfg.arch()?;
    if ds.probe.env != cfg.env || ds.arch != arch {
        return Err(CliError::Validation(format!(
            "dataset {} was built for {} with hidden layers {:?}; config asks for {} with {:?}",
            path.display(),
            ds.probe.env.name(),
            ds.arch.hidden(),
            cfg.env.name(),
            arch.hidden()
        )));
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub path: PathBuf,
    pub latent_dim: usize,
    pub epochs: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_epoch: Option<usize>,
}

pub fn train_ae(cfg: &RunConfig, dataset_path: &Path, paths: &StagePaths) -> Result<TrainSummary> {
    let started = Instant::now();
    let ds = load_checked_dataset(cfg, dataset_path)?;
    let (ae, report) = compressor::train(&ds, &cfg.compressor, cfg.stage_seed("compressor"))?;
    let path = paths.checkpoint();
    format::save_checkpoint(&path, cfg.env, &ae)?;
    format::write_json(&sidecar(&path), &format::CheckpointSidecar::new(cfg.env, &ae))?;
    format::write_json(&paths.train_report(), &report)?;
    record(paths, "train-ae", cfg, started, &[dataset_path], &[&path, &paths.train_report()], 0)?;
    Ok(TrainSummary {
        path,
        latent_dim: ae.latent_dim(),
        epochs: report.val_loss.len(),
        initial_val_loss: report.initial_val_loss,
        best_val_loss: report.best_val_loss,
        best_epoch: report.best_epoch,
    })
}

pub fn load_checked_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Autoencoder> {
    verify_against_manifest(path)?;
    let (env, ae) = format::load_checkpoint(path)?;
    if env != cfg.env {
        return Err(CliError::Validation(format!(
            "checkpoint {} is for {}, config is for {}",
            path.display(),
            env.name(),
            cfg.env.name()
        )));
    }
    Ok(ae)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryFile {
    pub env: EnvKind,
    pub latent_dim: usize,
    pub grid_points: usize,
    pub episodes: usize,
    pub seed: u64,
    pub tasks: Vec<TaskRecovery>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub landscape: PathBuf,
    pub recovery: PathBuf,
    pub report: RecoveryFile,
    pub images: Vec<PathBuf>,
    pub env_steps: u64,
}

/// Latent landscape over the IQR of the training codes, dataset bounds and
/// performance recovery per task.
pub fn eval_latent(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset_path: &Path,
    report_path: &Path,
    paths: &StagePaths,
) -> Result<EvalSummary> {
    let started = Instant::now();
    let ae = load_checked_checkpoint(cfg, checkpoint)?;
    let ds = load_checked_dataset(cfg, dataset_path)?;
    let report: TrainReport = format::read_json(report_path)?;
    if report.train_indices.iter().any(|&i| i >= ds.len()) {
        return Err(CliError::Validation(format!(
            "{} refers to policies outside {}",
            report_path.display(),
            dataset_path.display()
        )));
    }
    let env = cfg.environment()?;
    let tasks = cfg.task_ids()?;
    let seed = cfg.stage_seed("eval");
    let episodes = cfg.eval.episodes;

    let codes = ae.encode_all(&ds.params.select_rows(&report.train_indices))?;
    let grid = fit_grid(&codes, cfg.eval.span)?;
    for d in &grid.degenerate {
        eprintln!("warning: latent dimension {d} has zero interquartile range; widened by ±{}", landscape::DEGENERATE_HALF_WIDTH);
    }
    let result = landscape::evaluate_landscape(&ae, &grid, &env, &tasks, episodes, seed)?;
    let data_eval = landscape::evaluate_policies(&ds.arch, &ds.params, &env, &tasks, episodes, seed)?;
    let data_bounds = landscape::bounds_of(&data_eval.returns);
    let tasks_rec = landscape::recovery_report(&tasks, &data_bounds, &result.bounds())?;
    let rec = RecoveryFile {
        env: cfg.env,
        latent_dim: ae.latent_dim(),
        grid_points: grid.len(),
        episodes,
        seed,
        tasks: tasks_rec,
    };
    let lpath = paths.landscape();
    heatmap::write_csv(&lpath, &result)?;
    let images = heatmap::write_pgms(&paths.out_dir, "landscape", &result, points_per_dim(ae.latent_dim()))?;
    let rpath = paths.recovery();
    format::write_json(&rpath, &rec)?;
    let env_steps = result.env_steps + data_eval.env_steps;
    let mut outputs: Vec<&Path> = vec![&lpath, &rpath];
    outputs.extend(images.iter().map(PathBuf::as_path));
    record(paths, "eval-latent", cfg, started, &[checkpoint, dataset_path], &outputs, env_steps)?;
    Ok(EvalSummary {
        landscape: lpath,
        recovery: rpath,
        report: rec,
        images,
        env_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SearchKind {
    Latent,
    Parameter,
}

impl SearchKind {
    pub fn name(self) -> &'static str {
        match self {
            SearchKind::Latent => "latent",
            SearchKind::Parameter => "parameter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneFile {
    pub space: SearchKind,
    pub env: EnvKind,
    pub task: TaskId,
    pub preset: String,
    pub config: PgpeConfig,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    pub result: PgpeResult,
}

pub fn finetune(
    cfg: &RunConfig,
    space: SearchKind,
    checkpoint: Option<&Path>,
    task: TaskId,
    paths: &StagePaths,
) -> Result<FinetuneFile> {
    let started = Instant::now();
    if task.env() != cfg.env {
        return Err(CliError::Validation(format!("task {} is not a {} task", task.name(), cfg.env.name())));
    }
    let env = cfg.environment()?;
    let mut pcfg = cfg.pgpe.clone();
    pcfg.seed = cfg.stage_seed("finetune");
    let (result, checkpoint_sha256) = match space {
        SearchKind::Latent => {
            let ckpt = checkpoint.ok_or_else(|| {
                CliError::Validation("latent fine-tuning needs an autoencoder checkpoint".into())
            })?;
            let hash = verify_against_manifest(ckpt)?;
            let ae = load_checked_checkpoint(cfg, ckpt)?;
            if ae.policy_arch() != &cfg.arch()? {
                return Err(CliError::Validation("checkpoint policy architecture differs from the configured preset".into()));
            }
            (pgpe::run(&pcfg, &LatentSpace { ae: &ae }, &env, task)?, Some(hash))
        }
        SearchKind::Parameter => {
            let arch = cfg.arch()?;
            (pgpe::run(&pcfg, &ParameterSpace { arch: &arch }, &env, task)?, None)
        }
    };
    let file = FinetuneFile {
        space,
        env: cfg.env,
        task,
        preset: cfg.preset.clone(),
        config: pcfg.clone(),
        seed: pcfg.seed,
        checkpoint_sha256,
        result,
    };
    let path = paths.finetune(space, task);
    format::write_json(&path, &file)?;
    let inputs: Vec<&Path> = checkpoint.filter(|_| space == SearchKind::Latent).into_iter().collect();
    let steps = file.result.env_steps + file.result.monitor_steps;
    record(paths, &format!("finetune-{}-{}", space.name(), task.name()), cfg, started, &inputs, &[&path], steps)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedTask {
    pub task: TaskId,
    pub runs: usize,
    /// Bounds averaged across runs.
    pub dataset: ReturnBounds,
    pub latent: ReturnBounds,
    /// Recovery computed from the averaged bounds.
    pub recovery: Option<f64>,
    /// Mean and population std of the per-run recoveries that were defined.
    pub recovery_mean: Option<f64>,
    pub recovery_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub env: EnvKind,
    pub latent_dim: usize,
    pub sources: Vec<String>,
    pub tasks: Vec<MergedTask>,
}

pub fn merge_reports(inputs: &[PathBuf]) -> Result<MergedReport> {
    if inputs.len() < 2 {
        return Err(CliError::Validation("merge-reports needs at least two recovery files".into()));
    }
    let files: Vec<RecoveryFile> = inputs.iter().map(|p| format::read_json(p)).collect::<Result<_>>()?;
    let first = &files[0];
    for (f, p) in files.iter().zip(inputs) {
        let same_tasks = f.tasks.iter().map(|t| t.task).eq(first.tasks.iter().map(|t| t.task));
        if f.env != first.env || f.latent_dim != first.latent_dim || !same_tasks {
            return Err(CliError::Validation(format!("{} does not match the first report's env, k or tasks", p.display())));
        }
    }
    let n = files.len() as f64;
    let mean_bounds = |sel: &dyn Fn(&TaskRecovery) -> ReturnBounds, j: usize| ReturnBounds {
        lower: files.iter().map(|f| sel(&f.tasks[j]).lower).sum::<f64>() / n,
        upper: files.iter().map(|f| sel(&f.tasks[j]).upper).sum::<f64>() / n,
    };
    let tasks = first
        .tasks
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let dataset = mean_bounds(&|r| r.dataset, j);
            let latent = mean_bounds(&|r| r.latent, j);
            let per_run: Vec<f64> = files.iter().filter_map(|f| f.tasks[j].recovery).collect();
            let (recovery_mean, recovery_std) = if per_run.is_empty() {
                (None, None)
            } else {
                (
                    Some(polycomp_core::stats::mean(&per_run)),
                    Some(polycomp_core::stats::std_dev(&per_run)),
                )
            };
            MergedTask {
                task: t.task,
                runs: files.len(),
                dataset,
                latent,
                recovery: landscape::performance_recovery(dataset.lower, dataset.upper, latent.upper).ok(),
                recovery_mean,
                recovery_std,
            }
        })
        .collect();
    Ok(MergedReport {
        env: first.env,
        latent_dim: first.latent_dim,
        sources: inputs.iter().map(|p| p.display().to_string()).collect(),
        tasks,
    })
}
