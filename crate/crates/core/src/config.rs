//! Run configuration: one JSON file covers the whole pipeline. Every field
//! has a default, so a config file only needs the values it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::FilterPolicy;
use crate::detect::TrainConfig;
use crate::error::{Error, Result};
use crate::sanitize::{epsilon_grid, SanitizeConfig};
use crate::scorer::Metric;

/// Evenly spaced budget grid bounds and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            min: 0.1,
            max: 2.0,
            count: 30,
        }
    }
}

impl GridSpec {
    pub fn levels(&self) -> Result<Vec<f64>> {
        epsilon_grid(self.min, self.max, self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub metric: Metric,
    /// Add-k smoothing constant for the trigram scorer.
    pub smoothing: f64,
    pub sanitize: SanitizeConfig,
    pub filter: FilterPolicy,
    pub train: TrainConfig,
    pub train_fraction: f64,
    /// Interquartile fence factor for row-level outlier removal.
    pub outlier_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            grid: GridSpec::default(),
            metric: Metric::default(),
            smoothing: 0.1,
            sanitize: SanitizeConfig::default(),
            filter: FilterPolicy::default(),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            outlier_factor: 1.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn grid_levels(&self) -> Result<Vec<f64>> {
        self.grid.levels()
    }
}
