//! Application configuration, read from TOML.
//!
//! Every section is optional except `seed`, which has no default so runs are
//! never silently seeded from the clock.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cluster::{default_grid, parse_grid, ClusterParams};
use crate::compress::CompressionConfig;
use crate::driver_gen::DriverGenConfig;
use crate::error::{Error, Result};
use crate::faq::FaqConfig;
use crate::gateway::GatewayConfig;
use crate::stream::StreamConfig;
use crate::topics::{E2eWeights, LabelingConfig};

/// Environment variable naming a config file when `--config` is not given.
pub const CONFIG_ENV: &str = "CCI_CONFIG";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    /// `sizes;samples` comma lists, e.g. `5,10;1,5`. Empty means the
    /// default grid.
    pub grid: String,
    /// Stamped into built models. Defaults to the Unix epoch so rebuilds
    /// are byte-identical.
    pub created_at: Option<DateTime<Utc>>,
}

impl ClusteringConfig {
    pub fn grid(&self) -> Result<Vec<ClusterParams>> {
        if self.grid.trim().is_empty() {
            Ok(default_grid())
        } else {
            parse_grid(&self.grid)
        }
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at.unwrap_or(DateTime::<Utc>::UNIX_EPOCH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub alpha: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub drivers: DriverGenConfig,
    #[serde(default)]
    pub compression: CompressionConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub labeling: LabelingConfig,
    #[serde(default)]
    pub e2e: E2eWeights,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub faq: FaqConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl AppConfig {
    /// Defaults everywhere with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        AppConfig {
            seed,
            gateway: GatewayConfig::default(),
            drivers: DriverGenConfig {
                seed,
                ..Default::default()
            },
            compression: CompressionConfig::default(),
            clustering: ClusteringConfig::default(),
            labeling: LabelingConfig::default(),
            e2e: E2eWeights::default(),
            stream: StreamConfig::default(),
            faq: FaqConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }

    pub fn parse(content: &str) -> Result<Self> {
        let mut cfg: AppConfig = toml::from_str(content).map_err(|e| Error::Config(e.to_string()))?;
        cfg.drivers.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Explicit path first, then `CCI_CONFIG`.
    pub fn config_path(explicit: Option<&Path>) -> Option<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    pub fn validate(&self) -> Result<()> {
        self.drivers.validate()?;
        self.compression.validate()?;
        self.clustering.grid()?;
        self.labeling.validate()?;
        self.e2e.validate()?;
        self.stream.validate()?;
        self.faq.validate()?;
        if !(self.metrics.alpha > 0.0) {
            return Err(Error::Config("metrics.alpha must be > 0".into()));
        }
        Ok(())
    }
}
