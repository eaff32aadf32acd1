//! Serving cost comparison: per-token vendor pricing against hourly
//! self-hosted instances for one batch workload.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pricing {
    TokenPriced {
        usd_per_1k_input: f64,
        usd_per_1k_output: f64,
    },
    InstancePriced {
        usd_per_hour: f64,
        transcripts_per_hour_per_instance: f64,
        instance_count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingModel {
    pub name: String,
    #[serde(flatten)]
    pub pricing: Pricing,
}

impl PricingModel {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("pricing model needs a name".into()));
        }
        let ok = match self.pricing {
            Pricing::TokenPriced {
                usd_per_1k_input,
                usd_per_1k_output,
            } => usd_per_1k_input >= 0.0 && usd_per_1k_output >= 0.0,
            Pricing::InstancePriced {
                usd_per_hour,
                transcripts_per_hour_per_instance,
                instance_count,
            } => {
                if !(transcripts_per_hour_per_instance > 0.0) || instance_count == 0 {
                    return Err(Error::Validation(format!(
                        "{}: throughput and instance count must be positive",
                        self.name
                    )));
                }
                usd_per_hour >= 0.0
            }
        };
        if !ok {
            return Err(Error::Validation(format!("{}: rates must be >= 0", self.name)));
        }
        Ok(())
    }

    pub fn total(&self, w: &Workload) -> f64 {
        let n = w.num_transcripts as f64;
        match self.pricing {
            Pricing::TokenPriced {
                usd_per_1k_input,
                usd_per_1k_output,
            } => n * (w.avg_input_tokens * usd_per_1k_input + w.avg_output_tokens * usd_per_1k_output) / 1000.0,
            Pricing::InstancePriced {
                usd_per_hour,
                transcripts_per_hour_per_instance,
                instance_count,
            } => {
                let instances = f64::from(instance_count);
                let hours = (n / (transcripts_per_hour_per_instance * instances)).ceil();
                hours * usd_per_hour * instances
            }
        }
    }

    /// Multiplies every monetary rate by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let pricing = match self.pricing {
            Pricing::TokenPriced {
                usd_per_1k_input,
                usd_per_1k_output,
            } => Pricing::TokenPriced {
                usd_per_1k_input: usd_per_1k_input * c,
                usd_per_1k_output: usd_per_1k_output * c,
            },
            Pricing::InstancePriced {
                usd_per_hour,
                transcripts_per_hour_per_instance,
                instance_count,
            } => Pricing::InstancePriced {
                usd_per_hour: usd_per_hour * c,
                transcripts_per_hour_per_instance,
                instance_count,
            },
        };
        PricingModel {
            name: self.name.clone(),
            pricing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub num_transcripts: u64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        if self.num_transcripts == 0 || !(self.avg_input_tokens > 0.0) || !(self.avg_output_tokens > 0.0) {
            return Err(Error::Validation("workload values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingConfig {
    pub workload: Workload,
    pub models: Vec<PricingModel>,
}

impl PricingConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&content).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub name: String,
    pub total_usd: f64,
    /// Total divided by the cheapest total in the set.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub workload: Workload,
    pub rows: Vec<CostRow>,
}

pub fn estimate(models: &[PricingModel], w: &Workload) -> Result<CostEstimate> {
    if models.is_empty() {
        return Err(Error::Validation("cost estimate needs at least one model".into()));
    }
    w.validate()?;
    for m in models {
        m.validate()?;
    }
    let totals: Vec<f64> = models.iter().map(|m| m.total(w)).collect();
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let rows = models
        .iter()
        .zip(&totals)
        .map(|(m, &t)| CostRow {
            name: m.name.clone(),
            total_usd: t,
            ratio: if t == min { 1.0 } else if min > 0.0 { t / min } else { f64::INFINITY },
        })
        .collect();
    Ok(CostEstimate { workload: *w, rows })
}

/// Ratio to one decimal with an `x` suffix; a trailing `.0` is dropped.
pub fn format_ratio(r: f64) -> String {
    let s = format!("{r:.1}");
    format!("{}x", s.strip_suffix(".0").unwrap_or(&s))
}

pub fn emit_table(est: &CostEstimate) -> String {
    let mut out = String::from("model cost_usd ratio\n");
    for r in &est.rows {
        let _ = writeln!(out, "{} {:.2} {}", r.name, r.total_usd, format_ratio(r.ratio));
    }
    out
}
