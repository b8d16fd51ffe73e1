//! Run configuration file. Command-line flags override file values, which
//! override built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Usage;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub reps: Option<usize>,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub detect: DetectSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            seed: None,
            alpha: None,
            reps: None,
            preprocess: PreprocessSection::default(),
            detect: DetectSection::default(),
            simulate: SimulateSection::default(),
            calibration: CalibrationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub int_offset: Option<f64>,
    pub ridge_lambda: Option<f64>,
    pub causal: Option<bool>,
    pub max_consecutive_missing: Option<usize>,
    pub min_length: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    pub b: Option<usize>,
    pub phi: Option<f64>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub null_b: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub target_power: Option<f64>,
    pub tolerance: Option<f64>,
    pub initial_effect: Option<f64>,
    pub max_doublings: Option<usize>,
}

impl Config {
    /// Parses `path`; an absent path yields the defaults.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Usage(format!("invalid config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Usage(format!(
                "config schema_version {} unsupported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            ))
            .into());
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_parse() {
        let cfg: Config = toml::from_str("seed = 4\n[preprocess]\nridge_lambda = 2.5\n").unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.preprocess.ridge_lambda, Some(2.5));
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        assert!(toml::from_str::<Config>("sed = 4").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = Config::default();
        cfg.detect.phi = Some(0.5);
        let back: Config = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
