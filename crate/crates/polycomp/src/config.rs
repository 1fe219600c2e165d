//! Run configuration: one TOML file per run, with `key=value` overrides.

use std::path::{Path, PathBuf};

use polycomp_core::compressor::CompressorTrainConfig;
use polycomp_core::dataset::{DEFAULT_FILTER_FRACTION, DEFAULT_NOVELTY_K, DEFAULT_SAMPLE_SCALE};
use polycomp_core::envs::reacher::ReacherPhysicsConfig;
use polycomp_core::envs::{EnvKind, Environment, TaskId};
use polycomp_core::landscape::{GridSpan, DEFAULT_EPISODES};
use polycomp_core::pgpe::PgpeConfig;
use polycomp_core::policy::{MlpArchitecture, PolicySizePreset};
use polycomp_core::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub pool_size: usize,
    pub filter_fraction: f64,
    pub novelty_k: usize,
    pub sample_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            pool_size: 10_000,
            filter_fraction: DEFAULT_FILTER_FRACTION,
            novelty_k: DEFAULT_NOVELTY_K,
            sample_scale: DEFAULT_SAMPLE_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Rollouts per grid point and per dataset policy.
    pub episodes: usize,
    pub span: GridSpan,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: DEFAULT_EPISODES,
            span: GridSpan::Iqr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    /// Task names; empty means every task of the environment.
    pub tasks: Vec<String>,
    pub preset: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub compressor: CompressorTrainConfig,
    pub pgpe: PgpeConfig,
    pub eval: EvalConfig,
    pub reacher: ReacherPhysicsConfig,
}

impl RunConfig {
    /// Defaults for `env`, including its PGPE hyperparameters.
    pub fn defaults(env: EnvKind) -> Self {
        let (preset, pgpe, latent_dim) = match env {
            EnvKind::MountainCar => (PolicySizePreset::Medium, PgpeConfig::mountain_car(), 2),
            EnvKind::Reacher => (PolicySizePreset::MediumRc, PgpeConfig::reacher(), 3),
        };
        Self {
            env,
            tasks: Vec::new(),
            preset: preset.name().to_string(),
            seed: 0,
            output_dir: None,
            dataset: DatasetConfig::default(),
            compressor: CompressorTrainConfig {
                latent_dim,
                ..Default::default()
            },
            pgpe,
            eval: EvalConfig::default(),
            reacher: ReacherPhysicsConfig::default(),
        }
    }

    /// Reads `path` (if any), applies `overrides` and fills every missing key
    /// from the defaults of the configured environment.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let env = match user.get("env") {
            None => EnvKind::MountainCar,
            Some(toml::Value::String(s)) => EnvKind::parse(s)?,
            Some(v) => return Err(CliError::Validation(format!("env must be a string, got {v}"))),
        };
        let mut merged = toml::Table::try_from(Self::defaults(env))
            .map_err(|e| CliError::Validation(format!("serializing defaults: {e}")))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        self.preset()?;
        self.task_ids()?;
        let d = &self.dataset;
        if !(d.filter_fraction > 0.0 && d.filter_fraction <= 1.0) {
            return bad(format!("dataset.filter_fraction must be in (0, 1], got {}", d.filter_fraction));
        }
        if d.pool_size <= d.novelty_k || d.novelty_k == 0 {
            return bad(format!(
                "dataset.pool_size ({}) must exceed dataset.novelty_k ({}) and k must be >= 1",
                d.pool_size, d.novelty_k
            ));
        }
        if !(d.sample_scale > 0.0 && d.sample_scale.is_finite()) {
            return bad("dataset.sample_scale must be positive".into());
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes must be at least 1".into());
        }
        self.compressor.validate()?;
        self.pgpe.validate()?;
        self.reacher.validate()?;
        Ok(())
    }

    pub fn preset(&self) -> Result<PolicySizePreset> {
        PolicySizePreset::parse(&self.preset).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn task_ids(&self) -> Result<Vec<TaskId>> {
        if self.tasks.is_empty() {
            return Ok(self.environment()?.tasks().to_vec());
        }
        self.tasks
            .iter()
            .map(|t| TaskId::parse(self.env, t).map_err(|e| CliError::Validation(e.to_string())))
            .collect()
    }

    pub fn environment(&self) -> Result<Environment> {
        Ok(match self.env {
            EnvKind::MountainCar => Environment::mountain_car(),
            EnvKind::Reacher => Environment::reacher(self.reacher.clone())?,
        })
    }

    pub fn arch(&self) -> Result<MlpArchitecture> {
        Ok(MlpArchitecture::preset(&self.environment()?, self.preset()?)?)
    }

    /// Seed of one pipeline stage, derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `a.b.c=value`; the value is parsed as TOML and falls back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{spec}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("override key `{key}` is malformed")));
    }
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("override `{key}`: `{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
