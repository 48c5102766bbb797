//! Experiment configuration: one JSON document per run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rectikit::data::DatasetKind;
use rectikit::eval::EvalConfig;
use rectikit::rectify::{PairGenConfig, TrainConfig};
use rectikit::{DenoiserConfig, NoiseSchedule};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Gauss8,
            n_samples: 8000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: DenoiserConfig,
    #[serde(default)]
    pub teacher_train: TrainConfig,
    #[serde(default)]
    pub pairgen: PairGenConfig,
    #[serde(default)]
    pub student_train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    /// Single worker thread, so every reduction runs in one fixed order.
    #[serde(default)]
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.schedule.validate()?;
        self.model.validate()?;
        self.teacher_train.validate()?;
        self.student_train.validate()?;
        self.eval.validate()?;
        if self.teacher_train.iterations == 0 {
            return Err(CliError::Usage("teacher_train.iterations must be positive".into()));
        }
        if self.dataset.n_samples == 0 {
            return Err(CliError::Usage("dataset.n_samples must be positive".into()));
        }
        if self.model.num_conditions < self.dataset.kind.num_conditions() {
            return Err(CliError::Usage(format!(
                "model.num_conditions is {} but {} has {} conditions",
                self.model.num_conditions,
                self.dataset.kind,
                self.dataset.kind.num_conditions()
            )));
        }
        if self.pairgen.n_pairs == 0 || self.pairgen.solver_steps == 0 {
            return Err(CliError::Usage("pairgen needs positive n_pairs and solver_steps".into()));
        }
        if !self.pairgen.w.is_finite() {
            return Err(CliError::Usage("pairgen.w must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"output_dir": "out"}"#).unwrap();
        assert_eq!(cfg.dataset.kind, DatasetKind::Gauss8);
        assert_eq!(cfg.pairgen.solver_steps, 100);
        assert_eq!(cfg.eval.guidance, vec![1.0, 1.5, 2.5, 5.0, 7.5]);
        assert!(!cfg.deterministic);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"output_dir": "o", "stepz": [3]}"#,
            r#"{"output_dir": "o", "eval": {"step": [3]}}"#,
            r#"{"output_dir": "o", "teacher_train": {"iters": 3}}"#,
            r#"{"output_dir": "o", "schedule": {"beta": 1}}"#,
        ] {
            let err = ExperimentConfig::from_json(doc).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{doc}");
        }
    }

    #[test]
    fn nested_invariants_are_enforced() {
        for doc in [
            r#"{"output_dir": "o", "eval": {"steps": []}}"#,
            r#"{"output_dir": "o", "eval": {"guidance": []}}"#,
            r#"{"output_dir": "o", "teacher_train": {"cond_dropout": 1.0}}"#,
            r#"{"output_dir": "o", "teacher_train": {"iterations": 0}}"#,
            r#"{"output_dir": "o", "model": {"num_conditions": 2}}"#,
            r#"{"output_dir": "o", "schedule": {"beta_min": 30, "beta_max": 20}}"#,
            r#"{"output_dir": "o", "dataset": {"kind": "gauss9", "n_samples": 5, "seed": 0}}"#,
        ] {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
        assert!(ExperimentConfig::from_json("{}").is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(r#"{"output_dir": "o", "deterministic": true}"#).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
