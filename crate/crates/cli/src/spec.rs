//! Experiment description read from JSON.

use std::path::Path;

use jam_core::data::ValueDistribution;
use jam_core::model::ArchConfig;
use jam_core::presets::{misreport_grid, DEFAULT_TEST_SIZE};
use jam_core::trainer::TrainConfig;
use jam_core::{AuctionConfig, Setting};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// The JSON schema that experiment files are written against.
pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Preset instance family; ignored when `instance` is present.
    #[serde(default)]
    pub setting: Option<Setting>,
    #[serde(default)]
    pub instance: Option<AuctionConfig>,
    #[serde(default)]
    pub distribution: ValueDistribution,
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Misreport multipliers used at test time.
    #[serde(default = "misreport_grid")]
    pub eval_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

/// Seed offsets that keep the derived random streams apart.
const TEST_STREAM: u64 = 0x7e57_0000_0000_0001;
const INIT_STREAM: u64 = 0x1417_0000_0000_0002;

impl ExperimentSpec {
    /// A preset experiment with default sizes and hyperparameters.
    pub fn preset(setting: Setting, train_size: usize) -> Self {
        Self {
            setting: Some(setting),
            instance: None,
            distribution: ValueDistribution::default(),
            train_size,
            test_size: DEFAULT_TEST_SIZE,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval_grid: misreport_grid(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| CliError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn config(&self) -> CliResult<AuctionConfig> {
        match (&self.instance, self.setting) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(s)) => Ok(s.config()),
            (None, None) => Err(CliError::Spec("either setting or instance is required".into())),
        }
    }

    /// Human-readable instance label.
    pub fn label(&self) -> String {
        match (&self.instance, self.setting) {
            (None, Some(s)) => s.name().to_string(),
            (Some(c), _) => format!("{}x{}K{}", c.num_brands(), c.num_stores(), c.num_slots()),
            (None, None) => "?".into(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Spec(m));
        self.config()?;
        if self.train_size == 0 || self.test_size == 0 {
            return bad("train_size and test_size must be at least 1".into());
        }
        self.distribution
            .validate()
            .map_err(|e| CliError::Spec(e.to_string()))?;
        self.arch.validate().map_err(|e| CliError::Spec(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Spec(e.to_string()))?;
        if self.eval_grid.is_empty() || self.eval_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("eval_grid must be a nonempty list of finite non-negative multipliers".into());
        }
        Ok(())
    }

    pub fn train_seed(&self) -> u64 {
        self.seed
    }

    pub fn test_seed(&self) -> u64 {
        self.seed ^ TEST_STREAM
    }

    pub fn init_seed(&self) -> u64 {
        self.seed ^ INIT_STREAM
    }

    /// Stable identifier of everything that determines a training run.
    pub fn run_key(&self) -> CliResult<String> {
        let key = serde_json::json!({
            "config": self.config()?,
            "distribution": self.distribution,
            "train_size": self.train_size,
            "arch": self.arch,
            "train": self.train,
            "seed": self.seed,
        });
        Ok(serde_json::to_string(&key)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_fills_defaults() {
        let s = ExperimentSpec::from_json(r#"{"setting": "B", "train_size": 10}"#).unwrap();
        assert_eq!(s.test_size, 9984);
        assert_eq!(s.config().unwrap(), Setting::B.config());
        assert_eq!(s.eval_grid.len(), 30);
    }

    #[test]
    fn rejects_bad_specs() {
        for text in [
            r#"{"train_size": 10}"#,
            r#"{"setting": "A", "train_size": 0}"#,
            r#"{"setting": "A", "train_size": 5, "color": 1}"#,
            r#"{"setting": "A", "train_size": 5, "distribution": {"brand_low": 1, "brand_high": 0, "store_low": 0, "store_high": 1}}"#,
            r#"{"setting": "A", "train_size": 5, "train": {"misreport_grid": [0.5]}}"#,
            r#"{"instance": {"num_brands": 1, "num_stores": 1, "ctrs": [0.5], "relation": [[1]]}, "train_size": 5}"#,
        ] {
            assert!(
                matches!(ExperimentSpec::from_json(text), Err(CliError::Spec(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn explicit_instance_wins() {
        let s = ExperimentSpec::from_json(
            r#"{"setting": "A", "instance": {"num_brands": 2, "num_stores": 2, "ctrs": [0.6], "relation": [[1, 1], [0, 1]]}, "train_size": 3}"#,
        )
        .unwrap();
        assert_eq!(s.config().unwrap().num_bundles(), 3);
        assert_eq!(s.label(), "2x2K1");
    }
}
