//! Experiment configuration: one JSON document describing the network, the
//! optimizer, the regularizer, the data source, and the run plan.
//!
//! Parsing is schema-closed (unknown fields are rejected) so that every
//! report the tool emits can be read back by the same definitions without
//! silent drift. Configuration problems are reported as [`ConfigError`],
//! which the binary maps to exit code 2.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ptrlab_core::data::AugmentPolicy;
use ptrlab_core::network::{Network, NetworkSpec};
use ptrlab_core::optim::OptimizerConfig;
use ptrlab_core::ptr::PtrConfig;

/// A malformed or invalid configuration, with a field-level message.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Where the experiment's samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Synthetic Gaussian blobs around class centers on a seeded sphere.
    Blobs {
        n_classes: usize,
        n_per_class: usize,
        dim: usize,
        class_separation: f64,
        noise_sigma: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
    /// Header-free CSV of `label, feature...` rows.
    Csv { path: PathBuf },
}

fn default_val_fraction() -> f64 {
    0.1
}

/// Data source plus the deterministic train/validation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of each class held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Seed for split membership, independent of the run seeds so every
    /// run sees the same split.
    #[serde(default)]
    pub split_seed: u64,
}

/// The complete description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub input_shape: Vec<usize>,
    pub optimizer: OptimizerConfig,
    /// Pseudo-task regularizer; absent means plain baseline training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptr: Option<PtrConfig>,
    pub data: DataConfig,
    #[serde(default)]
    pub augment: AugmentPolicy,
    /// One independent run per seed.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Cross-field validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError("seeds: need at least one seed".into()));
        }
        if !(self.val_fraction() > 0.0 && self.val_fraction() < 1.0) {
            return Err(ConfigError(format!(
                "data.val_fraction: must lie in (0, 1), got {}",
                self.val_fraction()
            )));
        }
        if let DataSource::Blobs {
            n_classes,
            n_per_class,
            dim,
            ..
        } = &self.data.source
        {
            if *n_classes == 0 || *n_per_class == 0 || *dim == 0 {
                return Err(ConfigError(
                    "data.source: blobs counts and dim must be positive".into(),
                ));
            }
        }
        self.optimizer
            .validate()
            .map_err(|e| ConfigError(format!("optimizer: {e}")))?;
        if let Some(ptr) = &self.ptr {
            ptr.validate()
                .map_err(|e| ConfigError(format!("ptr: {e}")))?;
        }
        // Building the network checks layer chaining and the head shape.
        Network::new(self.network.clone(), self.input_shape.clone())
            .map_err(|e| ConfigError(format!("network: {e}")))?;
        Ok(())
    }

    fn val_fraction(&self) -> f64 {
        self.data.val_fraction
    }
}

/// Reads, parses, and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "network": {
                "layers": [
                    {"type": "dense", "in_dim": 3, "out_dim": 5},
                    {"type": "relu"},
                    {"type": "dense", "in_dim": 5, "out_dim": 2}
                ],
                "rep_index": 1
            },
            "input_shape": [3],
            "optimizer": {"lr": 0.1, "epochs": 2},
            "data": {
                "source": {
                    "kind": "blobs",
                    "n_classes": 2,
                    "n_per_class": 10,
                    "dim": 3,
                    "class_separation": 3.0,
                    "noise_sigma": 0.5
                }
            },
            "seeds": [0],
            "output_dir": "/tmp/ptrlab-out"
        })
    }

    fn parse(value: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
        let config: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = parse(minimal_json()).unwrap();
        assert_eq!(config.data.val_fraction, 0.1);
        assert_eq!(config.data.split_seed, 0);
        assert!(config.ptr.is_none());
        assert!(config.augment.is_identity());
        assert_eq!(config.optimizer.batch_size, 20);
    }

    #[test]
    fn missing_required_key_names_the_key() {
        let mut value = minimal_json();
        value.as_object_mut().unwrap().remove("optimizer");
        let err = parse(value).unwrap_err();
        assert!(err.to_string().contains("optimizer"), "{err}");
    }

    #[test]
    fn unknown_field_is_rejected_by_name() {
        let mut value = minimal_json();
        value["learning_rate_typo"] = serde_json::json!(0.1);
        let err = parse(value).unwrap_err();
        assert!(err.to_string().contains("learning_rate_typo"), "{err}");
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let mut value = minimal_json();
        value["seeds"] = serde_json::json!([]);
        let err = parse(value).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn out_of_range_val_fraction_is_rejected() {
        let mut value = minimal_json();
        value["data"]["val_fraction"] = serde_json::json!(1.0);
        let err = parse(value).unwrap_err();
        assert!(err.to_string().contains("val_fraction"), "{err}");
    }

    #[test]
    fn inconsistent_network_is_a_config_error() {
        let mut value = minimal_json();
        value["network"]["layers"][2]["in_dim"] = serde_json::json!(7);
        let err = parse(value).unwrap_err();
        assert!(err.to_string().contains("network"), "{err}");
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = parse(minimal_json()).unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(
            serde_json::to_string(&back).unwrap(),
            serde_json::to_string(&config).unwrap()
        );
    }
}
