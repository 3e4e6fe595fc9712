//! Run configuration, shared by the simulated runner, the CLI and the server.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::KMeansParams;
use crate::error::{Error, Result};
use crate::policy::{Combo, RlConfig};
use crate::pool::{load_pool, Pool, SyntheticSpec};
use crate::scorer::TrainingConfig;
use crate::selector::SolverParams;

/// How the next display is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Q-learned criteria and display size.
    RlAdaptive,
    /// Q-learned criteria, display size frozen.
    RlFixedSize,
    /// One criterion combination for the whole run.
    Fixed(Combo),
    Random,
    MaxMin,
    Uncertainty,
}

impl Strategy {
    pub fn is_rl(self) -> bool {
        matches!(self, Strategy::RlAdaptive | Strategy::RlFixedSize)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::RlAdaptive => f.write_str("rl-adaptive"),
            Strategy::RlFixedSize => f.write_str("rl-fixed-size"),
            Strategy::Fixed(c) => write!(f, "fixed:{c}"),
            Strategy::Random => f.write_str("random"),
            Strategy::MaxMin => f.write_str("maxmin"),
            Strategy::Uncertainty => f.write_str("uncertainty"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rl-adaptive" => Strategy::RlAdaptive,
            "rl-fixed-size" => Strategy::RlFixedSize,
            "random" => Strategy::Random,
            "maxmin" => Strategy::MaxMin,
            "uncertainty" => Strategy::Uncertainty,
            other => match other.strip_prefix("fixed:") {
                Some(combo) => Strategy::Fixed(combo.parse()?),
                None => return Err(Error::param(format!("unknown strategy {other:?}"))),
            },
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// Where a CLI run gets its pool from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Manifest(PathBuf),
    Synthetic(SyntheticSpec),
}

impl PoolSource {
    /// Relative manifest paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<Pool> {
        match self {
            PoolSource::Manifest(p) => load_pool(&base.join(p)),
            PoolSource::Synthetic(spec) => spec.generate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolSource>,
    pub split_seed: u64,
    pub strategy: Strategy,
    /// Fraction of the training pool the oracle may label.
    pub budget_fraction: f64,
    /// Absolute label budget; overrides `budget_fraction`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Fixed display size, the initial ladder rung, and the size of the
    /// random first display.
    pub display_size: usize,
    pub kmeans: KMeansParams,
    pub solver: SolverParams,
    pub classifier: TrainingConfig,
    pub rl: RlConfig,
    pub seed: u64,
    /// Adds wall-clock timings to the run log (breaks byte-for-byte
    /// reproducibility).
    pub log_wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pool: None,
            split_seed: 0,
            strategy: Strategy::RlAdaptive,
            budget_fraction: 0.1163,
            budget: None,
            display_size: 16,
            kmeans: KMeansParams::default(),
            solver: SolverParams::default(),
            classifier: TrainingConfig::default(),
            rl: RlConfig::default(),
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.display_size == 0 {
            return Err(Error::param("display_size must be positive"));
        }
        if self.budget == Some(0) {
            return Err(Error::param("budget must be positive"));
        }
        if self.budget.is_none() && !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::param(format!(
                "budget_fraction must lie in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        if self.kmeans.k == 0 || self.kmeans.max_iters == 0 || !(self.kmeans.tol > 0.0) {
            return Err(Error::param("kmeans needs k >= 1, max_iters >= 1, tol > 0"));
        }
        if self.solver.max_iters == 0 || !(self.solver.tol > 0.0) {
            return Err(Error::param("solver needs max_iters >= 1 and tol > 0"));
        }
        self.classifier.validate()?;
        self.rl.validate()?;
        if self.strategy == Strategy::RlAdaptive {
            let l = &self.rl.ladder;
            if !(l.min..=l.max).contains(&self.display_size) {
                return Err(Error::param(format!(
                    "display_size {} outside ladder [{}, {}]",
                    self.display_size, l.min, l.max
                )));
            }
        }
        Ok(())
    }

    pub fn budget_labels(&self, train_size: usize) -> Result<usize> {
        match self.budget {
            Some(b) => Ok(b),
            None => Ok(
                crate::pool::Budget::from_fraction(self.budget_fraction, train_size)?.max_labels(),
            ),
        }
    }
}
