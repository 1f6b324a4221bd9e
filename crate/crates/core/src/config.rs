//! Run configuration from JSON files and command-line overrides.
//!
//! A config file is a JSON object whose keys mirror [`RunConfig`]; missing
//! keys take their defaults and an empty file yields the default experiment.
//! A `summary.json` written by a previous run is accepted too: its embedded
//! `config` object is used.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::sim::RunConfig;
use crate::strategies::{DropKind, WeightingStrategy};

/// Values given on the command line; each replaces the matching config key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<WeightingStrategy>,
    pub drop_policy: Option<DropKind>,
    pub drop_count: Option<usize>,
    pub drop_after: Option<usize>,
    pub rounds: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.strategy {
            config.strategy = v;
        }
        if let Some(v) = self.drop_policy {
            config.drop.policy = v;
        }
        if let Some(v) = self.drop_count {
            config.drop.count = v;
        }
        if let Some(v) = self.drop_after {
            config.drop.after_iteration = v;
        }
        if let Some(v) = self.rounds {
            config.rounds = v;
        }
        if let Some(v) = &self.out_dir {
            config.paths.out_dir = v.clone();
        }
        if let Some(v) = &self.data_dir {
            config.paths.data_dir = v.clone();
        }
    }
}

/// Parses config text. Errors name the offending key path.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    if text.trim().is_empty() {
        return Ok(RunConfig::default());
    }
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::config("<root>", format!("invalid JSON: {e}")))?;
    let value = match value {
        Value::Object(mut map) if map.contains_key("config") => map.remove("config").unwrap(),
        v => v,
    };
    serde_path_to_error::deserialize::<_, RunConfig>(value).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        Error::config(key, e.into_inner().to_string())
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// File (if any), then overrides, then validation.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(parse_config_str("").unwrap(), RunConfig::default());
        assert_eq!(parse_config_str(" \n").unwrap(), RunConfig::default());
        assert_eq!(parse_config_str("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn default_matches_reference_scenario() {
        let c = RunConfig::default();
        assert_eq!(c.partition.node_count(), 20);
        assert_eq!(c.partition.total_samples(), 7000);
        assert_eq!(c.model.layer_sizes, vec![784, 200, 100, 200]);
        assert_eq!(c.train.learning_rate, 1e-2);
        assert_eq!(c.rounds, 30);
        assert_eq!(c.drop.policy, DropKind::LowestWeight);
        assert_eq!(c.drop.count, 5);
        assert_eq!(c.drop.after_iteration, 5);
    }

    #[test]
    fn flags_override_defaults() {
        let o = Overrides {
            strategy: Some("entropy".parse().unwrap()),
            drop_policy: Some("slowest".parse().unwrap()),
            seed: Some(42),
            ..Overrides::default()
        };
        let c = parse_config(None, &o).unwrap();
        let mut expected = RunConfig {
            strategy: WeightingStrategy::Entropy,
            seed: 42,
            ..RunConfig::default()
        };
        expected.drop.policy = DropKind::Slowest;
        assert_eq!(c, expected);
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 3, "rounds": 7, "strategy": "uniform"}"#).unwrap();
        let o = Overrides {
            rounds: Some(9),
            ..Overrides::default()
        };
        let c = parse_config(Some(&path), &o).unwrap();
        assert_eq!(
            (c.seed, c.rounds, c.strategy),
            (3, 9, WeightingStrategy::Uniform)
        );
    }

    #[test]
    fn wrong_case_enum_names_allowed_values() {
        let err = parse_config_str(r#"{"strategy": "Entropy"}"#).unwrap_err();
        let msg = err.to_string();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "strategy"),
            "{msg}"
        );
        assert!(
            msg.contains("num_classes") && msg.contains("entropy"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = parse_config_str(r#"{"timing": {"per_sample": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("per_sample"), "{err}");
        let err = parse_config_str(r#"{"drop": {"policy": "fastest"}}"#).unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "drop.policy"),
            "{err}"
        );
    }

    #[test]
    fn infeasible_partition_is_config_error() {
        let text = r#"{"partition": {"categories": [
            {"category": "gold", "nodes": 1, "samples_per_node": 1, "classes_per_node": 2}
        ]}}"#;
        let c = parse_config_str(text).unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.is_config());
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut c = RunConfig {
            seed: 99,
            strategy: WeightingStrategy::NumSamples,
            ..RunConfig::default()
        };
        c.timing
            .category_cost
            .insert(crate::data::Category::Bronze, 2e-3);
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), c);
        let wrapped = format!(r#"{{"config": {text}, "final_global_accuracy": 0.5}}"#);
        assert_eq!(parse_config_str(&wrapped).unwrap(), c);
    }
}
