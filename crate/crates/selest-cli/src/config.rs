//! Run configuration: defaults, config-file loading, and flag overrides.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use selest::encoding::EncodingMode;
use selest::neural::QErrorForm;
use selest::supervised::SupervisedLoss;

/// Defaults for every knob; a config file may override any subset and
/// command-line flags win over both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub neurons: usize,
    pub hidden_layers: usize,
    pub kappa: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub sample_budget: usize,
    pub bootstrap_fraction: f64,
    pub enum_cap: u64,
    pub encoding: EncodingMode,
    pub loss: SupervisedLoss,
    pub qerror_form: QErrorForm,
    pub validation_fraction: f64,
    /// `(before, after)` attribute-name pairs every ordering must honor.
    pub order_constraints: Vec<(String, String)>,
    pub resample_masks_each_epoch: bool,
    /// Incremental fine-tuning scale on the learning rate.
    pub incremental_rate_scale: f64,
    pub incremental_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 100,
            neurons: 100,
            hidden_layers: 2,
            kappa: 3,
            batch_size: 128,
            learning_rate: 1e-3,
            dropout: 0.1,
            sample_budget: 500,
            bootstrap_fraction: 0.2,
            enum_cap: 100_000,
            encoding: EncodingMode::Binary,
            loss: SupervisedLoss::QError,
            qerror_form: QErrorForm::Max,
            validation_fraction: 0.1,
            order_constraints: Vec::new(),
            resample_masks_each_epoch: false,
            incremental_rate_scale: 0.1,
            incremental_epochs: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.neurons; self.hidden_layers]
    }
}
