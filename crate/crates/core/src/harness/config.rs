use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::flcore::ModelSpec;
use crate::link::LinkStrategy;
use crate::modem::ModOrder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Cnn,
    Mlp,
    MnistCnn,
}

impl ModelChoice {
    pub fn spec(self) -> ModelSpec {
        match self {
            Self::Cnn => ModelSpec::desk_cnn(),
            Self::Mlp => ModelSpec::desk_mlp(),
            Self::MnistCnn => ModelSpec::mnist_cnn(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Built-in 8x8 digits.
    Synthetic {
        train_per_class: usize,
        test_per_class: usize,
    },
    /// IDX files (e.g. MNIST).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::Synthetic {
            train_per_class: 130,
            test_per_class: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub clients: usize,
    pub rounds: usize,
    pub lr: f32,
    pub model: ModelChoice,
    pub shards_per_client: usize,
    /// Seeds data generation, partitioning and initialization.
    pub seed: u64,
    /// Local minibatch size; `None` uses each client's full local data.
    pub batch_size: Option<usize>,
    pub dataset: DatasetConfig,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 200,
            lr: 0.3,
            model: ModelChoice::Cnn,
            shards_per_client: 2,
            seed: 1,
            batch_size: None,
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemConfig {
    pub order: ModOrder,
}

impl Default for ModemConfig {
    fn default() -> Self {
        Self {
            order: ModOrder::Qpsk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the uplink noise and fading; defaults to `fl.seed`.
    pub channel_seed: Option<u64>,
    /// Accuracy for the time-to-target metric.
    pub target_accuracy: f64,
    /// Converts symbol counts to seconds in reports when set.
    pub symbol_rate_hz: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            channel_seed: None,
            target_accuracy: 0.70,
            symbol_rate_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fl: FlConfig,
    pub channel: ChannelConfig,
    pub link: LinkStrategy,
    pub modem: ModemConfig,
    pub experiment: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn channel_seed(&self) -> u64 {
        self.experiment.channel_seed.unwrap_or(self.fl.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.link.validate()?;
        let fl = &self.fl;
        if fl.clients == 0 || fl.shards_per_client == 0 {
            return Err(Error::Config(
                "fl.clients and fl.shards_per_client must be >= 1".into(),
            ));
        }
        if !fl.lr.is_finite() || fl.lr <= 0.0 {
            return Err(Error::Config("fl.lr must be positive".into()));
        }
        if fl.batch_size == Some(0) {
            return Err(Error::Config("fl.batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.experiment.target_accuracy) {
            return Err(Error::Config(
                "experiment.target_accuracy must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}
