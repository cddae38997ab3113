//! Training configuration, stored as a flat TOML key/value file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsl::{Regularization, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_NUM_LATENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" | "adaptive-moment" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub num_latent: usize,
    pub alpha: f64,
    pub beta: f64,
    pub hidden_size: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Epochs without dev-loss improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_latent: DEFAULT_NUM_LATENT,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            hidden_size: 64,
            batch_size: 64,
            max_epochs: 50,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            patience: 5,
        }
    }
}

pub const CONFIG_KEYS: [&str; 10] = [
    "num_latent",
    "alpha",
    "beta",
    "hidden_size",
    "batch_size",
    "max_epochs",
    "learning_rate",
    "seed",
    "optimizer",
    "patience",
];

impl TrainConfig {
    pub fn regularization(&self) -> Result<Regularization> {
        Regularization::new(self.alpha, self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_latent", self.num_latent),
            ("hidden_size", self.hidden_size),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.regularization()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Parses a flat `key = value` file; `strict` rejects unknown keys.
    pub fn from_toml_str(text: &str, strict: bool) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if strict {
            if let Some(k) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
        }
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies one `key=value` override, as given on a command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}: {e}"));
        match key {
            "num_latent" => self.num_latent = value.parse().map_err(|e| bad(&e))?,
            "alpha" => self.alpha = value.parse().map_err(|e| bad(&e))?,
            "beta" => self.beta = value.parse().map_err(|e| bad(&e))?,
            "hidden_size" => self.hidden_size = value.parse().map_err(|e| bad(&e))?,
            "batch_size" => self.batch_size = value.parse().map_err(|e| bad(&e))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|e| bad(&e))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|e| bad(&e))?,
            "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
            "optimizer" => self.optimizer = value.parse()?,
            "patience" => self.patience = value.parse().map_err(|e| bad(&e))?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        self.validate()
    }
}
