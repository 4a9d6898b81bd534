//! JSON experiment configuration.
//!
//! Every key is optional; missing keys take the defaults below. A run
//! manifest is also accepted as a config, in which case its `config` object
//! is used.
//!
//! ```json
//! {
//!   "arch": "foaa",
//!   "archs": null,
//!   "dataset": { "source": "generate", "n": 1000, "seed": 0, "noise": 0.1,
//!                "image_shape": [1, 16, 16], "tabular_width": 8,
//!                "latent_dim": 3, "ratio": null },
//!   "model": { "m": 64, "image_channels": [4, 8], "tabular_hidden": 128,
//!              "dropout": 0.25, "div_epsilon": 1e-6, "bidirectional": true,
//!              "frozen_image_stages": [], "num_classes": 2 },
//!   "train": { "lr": 0.00016, "weight_decay": 0.005, "batch_size": 8,
//!              "epochs": 30, "seed": 0, "beta1": 0.9, "beta2": 0.999,
//!              "epsilon": 1e-8, "weighted_sampler": false,
//!              "flip_p": 0.0, "erase_p": 0.0 },
//!   "cv": { "folds": 15, "test_frac": 0.2, "split_seed": 0 },
//!   "out": "out",
//!   "params": null
//! }
//! ```
//!
//! `dataset` may instead be `{ "source": "files", "dir": "path/to/data" }`.
//! A non-null `ratio` draws the imbalanced variant with that class-0
//! probability.

use std::fs;
use std::path::{Path, PathBuf};

use foaa_core::data::{gen_imbalanced_dataset, gen_interaction_dataset, read_dataset, Dataset, GeneratorConfig};
use foaa_core::experiment::CvConfig;
use foaa_core::model::{Arch, ModelConfig};
use foaa_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSpec {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Generate(GenerateSpec),
    Files { dir: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Generate(GenerateSpec::default())
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset, CliError> {
        match self {
            DatasetSpec::Generate(spec) => {
                let generated = match spec.ratio {
                    Some(r) => gen_imbalanced_dataset(&spec.generator, r)?,
                    None => gen_interaction_dataset(&spec.generator)?,
                };
                Ok(generated.dataset)
            }
            DatasetSpec::Files { dir } => Ok(read_dataset(dir)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Row trained by `train` and checked by `export-embeddings`.
    pub arch: Arch,
    /// Rows run by `ablate`; all rows when absent.
    pub archs: Option<Vec<Arch>>,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cv: CvConfig,
    pub out: PathBuf,
    /// Saved parameter directory read by `export-embeddings`.
    pub params: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: Arch::Foaa,
            archs: None,
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            cv: CvConfig::default(),
            out: PathBuf::from("out"),
            params: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file, or the `config` object of a run manifest.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let value = match value.get("config") {
            Some(inner) if value.get("artifacts").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Ablation rows in table order.
    pub fn ablation_rows(&self) -> Vec<Arch> {
        match &self.archs {
            Some(list) => Arch::ALL.iter().copied().filter(|a| list.contains(a)).collect(),
            None => Arch::ALL.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.arch = Arch::CrossOaOp;
        cfg.dataset = DatasetSpec::Generate(GenerateSpec {
            generator: GeneratorConfig {
                n: 300,
                ..GeneratorConfig::default()
            },
            ratio: Some(0.8),
        });
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let files: ExperimentConfig = serde_json::from_str(r#"{"dataset": {"source": "files", "dir": "d"}}"#).unwrap();
        assert_eq!(files.dataset, DatasetSpec::Files { dir: "d".into() });
    }

    #[test]
    fn unknown_arch_is_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"arch": "transformer"}"#).is_err());
    }

    #[test]
    fn ablation_rows_follow_table_order() {
        let cfg = ExperimentConfig {
            archs: Some(vec![Arch::Foaa, Arch::Mlp]),
            ..ExperimentConfig::default()
        };
        assert_eq!(cfg.ablation_rows(), vec![Arch::Mlp, Arch::Foaa]);
        assert_eq!(ExperimentConfig::default().ablation_rows().len(), 12);
    }
}
