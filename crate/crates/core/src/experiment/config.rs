use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{DEFAULT_MIN_GROUP_COUNT, DEFAULT_N_BINS, DEFAULT_RANGE_EDGES};
use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::labels::SmoothingPolicy;
use crate::synth::{CorruptionParams, DatasetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_bins: usize,
    pub range_edges: Vec<f64>,
    /// Range groups with fewer records are flagged low-support.
    pub min_group_count: usize,
    pub corruption_sweep: bool,
    pub corruption: CorruptionParams,
    /// Base seed of the per-(kind, severity, sample) corruption streams.
    pub corruption_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_bins: DEFAULT_N_BINS,
            range_edges: DEFAULT_RANGE_EDGES.to_vec(),
            min_group_count: DEFAULT_MIN_GROUP_COUNT,
            corruption_sweep: true,
            corruption: CorruptionParams::default(),
            corruption_seed: 7,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.n_bins == 0 {
            return Err(Error::config(
                format!("{field}.n_bins"),
                "must be at least 1",
            ));
        }
        if self.range_edges.is_empty()
            || self.range_edges.iter().any(|e| !e.is_finite())
            || self.range_edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::config(
                format!("{field}.range_edges"),
                "must be a non-empty strictly increasing list",
            ));
        }
        Ok(())
    }
}

/// Everything one experiment needs; every field has a default so an empty
/// JSON object is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub policies: Vec<SmoothingPolicy>,
    pub train: TrainConfig,
    pub n_seeds: usize,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            policies: SmoothingPolicy::standard_set(),
            train: TrainConfig::default(),
            n_seeds: 10,
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate("dataset")?;
        if self.policies.is_empty() {
            return Err(Error::config("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::config(format!("policies[{i}]"), e.to_string()))?;
        }
        self.train.validate("train")?;
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be at least 1"));
        }
        self.evaluation.validate("evaluation")
    }

    /// Parses and validates; parse errors name the JSON path that failed.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "<root>".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serialisable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_json("{}").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn bundled_config_is_the_default() {
        let bundled = include_str!("../../configs/default.json");
        assert_eq!(
            ExperimentConfig::from_json(bundled).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json_pretty()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"dataset":{"classes":[]}}"#).unwrap_err();
        assert!(err.to_string().contains("dataset.classes"), "{err}");

        let err = ExperimentConfig::from_json(r#"{"train":{"batch_size":"big"}}"#).unwrap_err();
        assert!(err.to_string().contains("train.batch_size"), "{err}");

        let err = ExperimentConfig::from_json(r#"{"policies":[{"kind":"p-smooth","alpha":0.8}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("policies[0]"), "{err}");

        let err = ExperimentConfig::from_json(r#"{"n_seeds":0}"#).unwrap_err();
        assert!(err.to_string().contains("n_seeds"), "{err}");

        let err =
            ExperimentConfig::from_json(r#"{"evaluation":{"range_edges":[20,10]}}"#).unwrap_err();
        assert!(err.to_string().contains("evaluation.range_edges"), "{err}");
    }
}
