//! Run configuration: one structured JSON file documented key by key in the
//! README, with strict unknown-key rejection and `--set key=value` overrides
//! for sweeps.

use crate::density::{DensityMode, RadiusGrid};
use crate::error::{Error, Result};
use crate::estimate::GbqrParams;
use crate::ingest::{default_covariate_names, default_periods, default_violent_categories, Period};
use crate::metric::MetricParams;
use crate::synth::SynthSpec;
use crate::treatment::StructureKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureInput {
    pub name: String,
    pub path: PathBuf,
    pub kind: StructureKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsConfig {
    pub tracts: PathBuf,
    pub boundaries: PathBuf,
    pub crimes: PathBuf,
    pub structures: Vec<StructureInput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreatmentConfig {
    /// Percentile-rank band dropped by the dense rule.
    pub drop_band: (f64, f64),
}

impl Default for TreatmentConfig {
    fn default() -> Self {
        TreatmentConfig {
            drop_band: crate::treatment::DEFAULT_DROP_BAND,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub repeats: usize,
    pub folds: usize,
    /// Neighbors per arm in each matched group.
    pub neighbors: usize,
    /// Minimum co-match count for consensus retention.
    pub min_co_match: u32,
    pub prune_percentile: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            repeats: 3,
            folds: 5,
            neighbors: 10,
            min_co_match: 2,
            prune_percentile: 95.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub q_lo: f64,
    pub q_hi: f64,
    pub gbqr: GbqrParams,
    pub heterogeneity_r2: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            q_lo: 0.25,
            q_hi: 0.75,
            gbqr: GbqrParams::default(),
            heterogeneity_r2: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub radii_m: RadiusGrid,
    pub n_samples: usize,
    pub sample_radius_m: f64,
    pub mode: DensityMode,
    /// Sensitivity variant: discard sampled control centers that fall
    /// outside their own tract.
    pub restrict_to_tract: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            radii_m: RadiusGrid::default_grid(),
            n_samples: 20,
            sample_radius_m: 750.0,
            mode: DensityMode::Disc,
            restrict_to_tract: false,
        }
    }
}

fn default_seed() -> u64 {
    42
}
fn default_analysis_period() -> String {
    "S1".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub inputs: InputsConfig,
    #[serde(default = "default_covariate_names")]
    pub covariates: Vec<String>,
    #[serde(default = "default_periods")]
    pub periods: Vec<Period>,
    #[serde(default = "default_analysis_period")]
    pub analysis_period: String,
    #[serde(default = "default_violent_categories")]
    pub violent_categories: Vec<String>,
    #[serde(default)]
    pub treatment: TreatmentConfig,
    #[serde(default)]
    pub metric: MetricParams,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub density: DensityConfig,
    /// Optional synthetic-data section consumed by the `synth` subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for assignment in overrides {
            apply_override(&mut value, assignment)?;
        }
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_value(value: serde_json::Value) -> Result<RunConfig> {
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.periods.iter().any(|p| p.id == self.analysis_period) {
            return Err(Error::Config(format!(
                "analysis_period `{}` is not one of the configured periods",
                self.analysis_period
            )));
        }
        if self.covariates.is_empty() {
            return Err(Error::Config("covariate schema is empty".into()));
        }
        if self.inputs.structures.is_empty() {
            return Err(Error::Config(
                "at least one structures dataset is required".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.inputs.structures {
            if !names.insert(&s.name) {
                return Err(Error::Config(format!(
                    "duplicate structure name `{}`",
                    s.name
                )));
            }
        }
        if self.estimation.q_lo.partial_cmp(&self.estimation.q_hi) != Some(std::cmp::Ordering::Less)
        {
            return Err(Error::Config("estimation.q_lo must be below q_hi".into()));
        }
        if self.matching.folds < 2 {
            return Err(Error::Config("matching.folds must be at least 2".into()));
        }
        if !(self.matching.prune_percentile > 0.0 && self.matching.prune_percentile <= 100.0) {
            return Err(Error::Config(
                "matching.prune_percentile must be in (0, 100]".into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialized form (defaults included), embedded in reports.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Apply one `dotted.path=value` override to a JSON config value. The value
/// parses as JSON when possible and falls back to a plain string.
fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    if path.is_empty() {
        return Err(Error::Config(format!(
            "override `{assignment}` has an empty key"
        )));
    }
    let parsed: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut at = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if !at.is_object() {
            return Err(Error::Config(format!(
                "override `{path}`: `{}` is not an object",
                segments[..i].join(".")
            )));
        }
        let map = at.as_object_mut().unwrap();
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), parsed);
            return Ok(());
        }
        at = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("override path always terminates");
}
