use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::policies::PolicyConfig;

/// Where the environment of each run comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSource {
    /// Gaussian arms with explicit `means` or a `gap` between the best arm and the rest.
    KArmed,
    /// Fresh `theta*` and `K` fixed actions per run.
    LinearFixed,
    /// Fresh `theta*` per run and `K` fresh actions per round.
    LinearChanging,
    /// Headered CSV with a target column; `theta*` is a ridge fit.
    Features,
    /// `user_id,item_id,rating` CSV factorized into embeddings.
    Ratings,
}

fn default_lambda_fit() -> f64 {
    1e-3
}
fn default_rank() -> usize {
    5
}
fn default_als_iters() -> usize {
    30
}
fn default_lambda_als() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub kind: EnvSource,
    #[serde(default)]
    pub d: Option<usize>,
    /// Number of actions; for dataset sources, absent means every row.
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
    /// Noise level; dataset sources default to the residual deviation of the fit.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub means: Option<Vec<f64>>,
    #[serde(default)]
    pub gap: Option<f64>,
    /// Dataset file, relative to the config file's directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub target_column: Option<String>,
    #[serde(default = "default_lambda_fit")]
    pub lambda_fit: f64,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_als_iters")]
    pub als_iters: usize,
    #[serde(default = "default_lambda_als")]
    pub lambda_als: f64,
}

impl EnvironmentSpec {
    pub fn env_kind(&self) -> EnvKind {
        match self.kind {
            EnvSource::KArmed => EnvKind::KArmed,
            EnvSource::LinearChanging => EnvKind::LinearChanging,
            EnvSource::LinearFixed | EnvSource::Features | EnvSource::Ratings => EnvKind::LinearFixed,
        }
    }

    fn validate(&self) -> Result<()> {
        let need = |what: &str| Error::config(format!("environment kind {:?} needs `{what}`", self.kind));
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("sigma must be non-negative"));
            }
        }
        match self.kind {
            EnvSource::KArmed => {
                if self.means.is_none() && (self.gap.is_none() || self.k.is_none()) {
                    return Err(need("means, or gap and K"));
                }
                if self.sigma.is_none() {
                    return Err(need("sigma"));
                }
            }
            EnvSource::LinearFixed | EnvSource::LinearChanging => {
                if self.d.is_none() || self.k.is_none() || self.sigma.is_none() {
                    return Err(need("d, K and sigma"));
                }
            }
            EnvSource::Features => {
                if self.path.is_none() || self.target_column.is_none() {
                    return Err(need("path and target_column"));
                }
            }
            EnvSource::Ratings => {
                if self.path.is_none() {
                    return Err(need("path"));
                }
                if self.rank == 0 {
                    return Err(Error::config("rank must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Horizon.
    pub n: usize,
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub full_trace: bool,
    pub environment: EnvironmentSpec,
    #[serde(rename = "algorithm", default)]
    pub algorithms: Vec<PolicyConfig>,
    /// Directory relative dataset paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("at least one [[algorithm]] is required"));
        }
        self.environment.validate()?;
        let kind = self.environment.env_kind();
        let mut labels = HashSet::new();
        for alg in &self.algorithms {
            alg.validate()?;
            alg.check_compatible(kind)?;
            if !labels.insert(alg.label()) {
                return Err(Error::config(format!("duplicate algorithm label '{}'", alg.label())));
            }
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.environment.path.as_ref().map(|p| self.base_dir.join(p))
    }

    /// Output directory, `results/<name>` unless configured.
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results").join(&self.name))
    }
}
