//! Sweep configuration.
//!
//! ```toml
//! system = "systems/canonical.toml"   # or "canonical" for the built-in benchmark
//! strategies = ["identify", "weak_train", "refine"]
//! n_grid = [1000, 4000, 16000]
//! replicates = 20
//! base_seed = 7
//! out_dir = "out"
//! metrics = ["l2q", "param_error"]
//!
//! [em]
//! restarts = 4
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::mixture::{canonical_benchmark, LatentConceptSystem};

/// Name accepted in place of a system file path.
pub const BUILTIN_CANONICAL: &str = "canonical";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Identify,
    WeakTrain,
    Refine,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Identify, Strategy::WeakTrain, Strategy::Refine];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Identify => "identify",
            Strategy::WeakTrain => "weak_train",
            Strategy::Refine => "refine",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected identify, weak_train or refine)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2q,
    ParamError,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::L2q, Metric::ParamError]
}

fn default_mc_points() -> usize {
    4000
}

fn default_lambda() -> f64 {
    1.0
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: PathBuf,
    pub strategies: Vec<Strategy>,
    /// Source sample sizes.
    pub n_grid: Vec<usize>,
    /// Target sample sizes, one per entry of `n_grid`; equal to `n_grid` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_q_grid: Option<Vec<usize>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Monte Carlo points for the L2(Q) metric.
    #[serde(default = "default_mc_points")]
    pub mc_points: usize,
    /// Number of fitted components; the system's K when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Weight of source records in weak training.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub em: EmConfig,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(
        system: impl Into<PathBuf>,
        strategies: Vec<Strategy>,
        n_grid: Vec<usize>,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            system: system.into(),
            strategies,
            n_grid,
            n_q_grid: None,
            replicates: 1,
            base_seed: 0,
            out_dir: out_dir.into(),
            metrics: default_metrics(),
            mc_points: default_mc_points(),
            k: None,
            lambda: default_lambda(),
            em: EmConfig::default(),
            jobs: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.system.as_os_str() != BUILTIN_CANONICAL && cfg.system.is_relative() {
            cfg.system = base.join(&cfg.system);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("strategy list is empty".into()));
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return Err(Error::Config("strategy listed twice".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("n grid is empty".into()));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n grid must be positive and strictly ascending".into()));
        }
        if let Some(q) = &self.n_q_grid {
            if q.len() != self.n_grid.len() || q.contains(&0) {
                return Err(Error::Config("n_q_grid must match n_grid in length and be positive".into()));
            }
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.mc_points < 100 {
            return Err(Error::Config("mc_points must be at least 100".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Config("k must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.em.validate()
    }

    /// `(n_p, n_q)` pairs of the grid.
    pub fn sizes(&self) -> Vec<(usize, usize)> {
        match &self.n_q_grid {
            Some(q) => self.n_grid.iter().copied().zip(q.iter().copied()).collect(),
            None => self.n_grid.iter().map(|&n| (n, n)).collect(),
        }
    }

    pub fn load_system(&self) -> Result<LatentConceptSystem> {
        if self.system.as_os_str() == BUILTIN_CANONICAL {
            Ok(canonical_benchmark())
        } else {
            LatentConceptSystem::load(&self.system)
        }
    }

    pub fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}
