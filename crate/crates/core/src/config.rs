//! Merged run configuration for the command-line tool. A JSON file (same field
//! names) overrides the defaults; explicit flags override the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alteration::AlterationConfig;
use crate::dictionary::TrainConfig;
use crate::error::{arg_err, Error, Result};
use crate::evaluation::EvalConfig;
use crate::harmonizer::{Downsample, HarmonizeConfig};
use crate::lasso::PathConfig;
use crate::patching::PatchConfig;

/// Environment variable consulted for the worker count when no flag is given.
pub const THREADS_ENV: &str = "DLH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub sh_order: usize,
    pub laplace_beltrami: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            sh_order: 2,
            laplace_beltrami: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub patch: PatchConfig,
    pub train: TrainConfig,
    /// Sparse coding used when reconstructing.
    pub coding: PathConfig,
    pub upsample_ratio: Option<[f64; 3]>,
    pub downsample: Downsample,
    pub alteration: AlterationConfig,
    pub metrics: MetricsConfig,
    pub eval: EvalConfig,
    pub thread_count: Option<usize>,
    /// Master seed; copied into every sub-config by [`RunConfig::seeded`].
    pub seed: u64,
    /// Patches held out of training to monitor the objective (0 = none).
    pub holdout: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            train: TrainConfig::default(),
            coding: PathConfig::default(),
            upsample_ratio: None,
            downsample: Downsample::default(),
            alteration: AlterationConfig::default(),
            metrics: MetricsConfig::default(),
            eval: EvalConfig::default(),
            thread_count: None,
            seed: 0,
            holdout: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The master seed pushed into every stochastic component.
    pub fn seeded(mut self) -> Self {
        let s = self.seed;
        self.patch.seed = s;
        self.train.rng_seed = s;
        self.train.path_cfg.rng_seed = s;
        self.coding.rng_seed = s;
        self.alteration.rng_seed = s;
        self
    }

    pub fn harmonize_config(&self) -> HarmonizeConfig {
        HarmonizeConfig {
            patch_cfg: self.patch,
            path_cfg: self.coding,
            upsample_ratio: self.upsample_ratio,
            downsample: self.downsample,
            rng_seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.coding.validate()?;
        self.alteration.validate()?;
        if self.patch.spatial_size == 0 || self.patch.stride == 0 {
            return Err(arg_err!("patch size and stride must be >= 1"));
        }
        if self.thread_count == Some(0) {
            return Err(arg_err!("thread count must be >= 1"));
        }
        if !(self.eval.fdr_alpha > 0.0 && self.eval.fdr_alpha < 1.0) {
            return Err(arg_err!("fdr_alpha must lie in (0, 1)"));
        }
        if !(self.eval.ci_level > 0.0 && self.eval.ci_level < 1.0) {
            return Err(arg_err!("ci_level must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Worker count: the flag, else [`THREADS_ENV`], else `None` (all cores).
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| arg_err!("{THREADS_ENV} must be a positive integer, got {s:?}")),
    }
}
