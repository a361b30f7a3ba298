use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, LinearConfig, VOCAB_CAP};
use crate::error::{Error, Result};
use crate::model::{ConvSpec, ModelConfig};
use crate::train::{AdamConfig, TrainConfig};

/// Everything a run needs, as one flat JSON object. Missing keys take the
/// defaults below; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,

    /// Inferred from the training labels when absent.
    pub classes: Option<usize>,
    pub alphabet: usize,
    pub embed_dim: usize,
    pub word_len: usize,
    pub fcn: Vec<ConvSpec>,
    pub hidden: usize,
    pub blocks: usize,
    pub bottleneck: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub target_train_accuracy: Option<f64>,

    pub vocab_cap: usize,
    pub l2: f64,
    pub linear_epochs: usize,
    pub linear_learning_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::with_classes(4);
        let train = TrainConfig::default();
        let linear = LinearConfig::default();
        RunConfig {
            train_path: None,
            test_path: None,
            output_dir: PathBuf::from("tdsm-run"),
            seed: 0,
            threads: 1,
            classes: None,
            alphabet: model.alphabet,
            embed_dim: model.embed_dim,
            word_len: model.word_len,
            fcn: model.fcn,
            hidden: model.hidden,
            blocks: model.blocks,
            bottleneck: model.bottleneck,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.adam.learning_rate,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            adam_eps: train.adam.eps,
            clip_norm: train.adam.clip_norm,
            target_train_accuracy: None,
            vocab_cap: VOCAB_CAP,
            l2: linear.l2,
            linear_epochs: linear.epochs,
            linear_learning_rate: linear.learning_rate,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub epochs: Option<usize>,
    pub output: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub classes: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The config file (or defaults) with `overrides` applied.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(v) = overrides.seed {
            c.seed = v;
        }
        if let Some(v) = overrides.threads {
            c.threads = v;
        }
        if let Some(v) = overrides.epochs {
            c.epochs = v;
        }
        if let Some(v) = &overrides.output {
            c.output_dir = v.clone();
        }
        if let Some(v) = &overrides.train_path {
            c.train_path = Some(v.clone());
        }
        if let Some(v) = &overrides.test_path {
            c.test_path = Some(v.clone());
        }
        if let Some(v) = overrides.classes {
            c.classes = Some(v);
        }
        if c.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(c)
    }

    pub fn model(&self, classes: usize) -> Result<ModelConfig> {
        let m = ModelConfig {
            alphabet: self.alphabet,
            embed_dim: self.embed_dim,
            word_len: self.word_len,
            fcn: self.fcn.clone(),
            hidden: self.hidden,
            blocks: self.blocks,
            bottleneck: self.bottleneck,
            classes,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                clip_norm: self.clip_norm,
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            threads: self.threads,
            target_train_accuracy: self.target_train_accuracy,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn baseline(&self) -> Result<BaselineConfig> {
        let b = BaselineConfig {
            vocab_cap: self.vocab_cap,
            linear: LinearConfig {
                l2: self.l2,
                epochs: self.linear_epochs,
                learning_rate: self.linear_learning_rate,
                seed: self.seed,
            },
        };
        b.linear.validate()?;
        if b.vocab_cap == 0 {
            return Err(Error::Config("vocab_cap must be positive".into()));
        }
        Ok(b)
    }

    /// Writes the snapshot that reproduces this run when passed back with
    /// `--config`.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
