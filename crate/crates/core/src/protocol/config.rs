use serde::{Deserialize, Serialize};

use crate::approx::SoftmaxConfig;
use crate::ckks::params::PRESET_NAMES;
use crate::error::{Error, Result};

/// Published per-dataset hyperparameters: epochs, learning rate, batch size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetDefaults {
    pub name: &'static str,
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

pub const DATASET_DEFAULTS: [DatasetDefaults; 4] = [
    DatasetDefaults { name: "mnist", epochs: 5, learning_rate: 0.1, batch_size: 1024 },
    DatasetDefaults { name: "cifar10", epochs: 5, learning_rate: 0.1, batch_size: 1024 },
    DatasetDefaults { name: "facemask", epochs: 10, learning_rate: 0.1, batch_size: 512 },
    DatasetDefaults { name: "dermamnist", epochs: 12, learning_rate: 0.01, batch_size: 512 },
];

pub fn dataset_defaults(name: &str) -> Option<DatasetDefaults> {
    let key: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
    DATASET_DEFAULTS.iter().copied().find(|d| d.name == key)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    /// Rows per mini-batch, `N`.
    pub batch_size: usize,
    pub softmax: SoftmaxConfig,
    /// Steps between forced refreshes of `W` and `V`.
    pub refresh_interval: u32,
    pub seed: u64,
    pub scheme_preset: String,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl TrainingConfig {
    /// The first row of [`DATASET_DEFAULTS`] on the `desk` preset.
    pub fn new(classes: usize) -> Self {
        let d = DATASET_DEFAULTS[0];
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            softmax: SoftmaxConfig::new(classes),
            refresh_interval: 1,
            seed: 0,
            scheme_preset: "desk".into(),
            split: [0.6, 0.2, 0.2],
        }
    }

    pub fn for_dataset(name: &str, classes: usize) -> Result<Self> {
        let d = dataset_defaults(name).ok_or_else(|| {
            let known: Vec<&str> = DATASET_DEFAULTS.iter().map(|d| d.name).collect();
            Error::Config(format!("unknown dataset {name:?}; known: {}", known.join(", ")))
        })?;
        Ok(Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            ..Self::new(classes)
        })
    }

    pub fn classes(&self) -> usize {
        self.softmax.class_count
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.refresh_interval == 0 {
            return bad("refresh interval must be at least 1".into());
        }
        if !PRESET_NAMES.contains(&self.scheme_preset.as_str()) {
            return bad(format!(
                "unknown scheme preset {:?}; known: {}",
                self.scheme_preset,
                PRESET_NAMES.join(", ")
            ));
        }
        if self.split.iter().any(|r| !(*r >= 0.0 && r.is_finite())) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {:?} must be non-negative and sum to 1", self.split));
        }
        self.softmax.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}
