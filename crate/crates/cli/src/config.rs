//! Layered run configuration: flags override the config file, which overrides
//! built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wxforecast::eval::Space;
use wxforecast::nn::{LstmVariant, ModelKind};
use wxforecast::pipeline::ModelSettings;
use wxforecast::select::{CvOptions, Grid};
use wxforecast::train::TrainConfig;
use wxforecast::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Every knob a command may read. In a file any subset may be given; a dumped
/// config has every field set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm_variant: Option<LstmVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_split: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_fold_scaler: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<Space>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(v) = cfg.schema_version.filter(|&v| v != CONFIG_SCHEMA_VERSION) {
            return Err(Error::Config(format!(
                "unsupported config schema_version {v}"
            )));
        }
        Ok(cfg)
    }

    /// Fields set in `top` win over fields set in `self`.
    pub fn overlay(self, top: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: top.$f.or(self.$f)),* } };
        }
        pick!(
            schema_version,
            model,
            hidden,
            lstm_variant,
            learning_rate,
            batch_size,
            epochs,
            seed,
            shuffle,
            early_stop_patience,
            val_split,
            cv_k,
            cv_epochs,
            cv_batch_size,
            per_fold_scaler,
            grid,
            space,
            strict
        )
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub settings: ModelSettings,
    pub train: TrainConfig,
    pub val_split: f64,
    pub cv: CvOptions,
    pub grid: Grid,
    pub space: Space,
    pub strict: bool,
}

impl RunConfig {
    /// Applies defaults to whatever `layered` leaves unset. `seed` is the
    /// already-resolved seed.
    pub fn resolve(layered: ConfigFile, seed: u64) -> Result<Self> {
        let train_defaults = TrainConfig::default();
        let cv_defaults = CvOptions::default();
        let model_defaults = ModelSettings::default();
        let cfg = RunConfig {
            settings: ModelSettings {
                kind: layered.model.unwrap_or(model_defaults.kind),
                hidden: layered.hidden.unwrap_or(model_defaults.hidden),
                lstm_variant: layered.lstm_variant.unwrap_or(model_defaults.lstm_variant),
            },
            train: TrainConfig {
                learning_rate: layered
                    .learning_rate
                    .unwrap_or(train_defaults.learning_rate),
                batch_size: layered.batch_size.unwrap_or(train_defaults.batch_size),
                epochs: layered.epochs.unwrap_or(train_defaults.epochs),
                seed,
                shuffle: layered.shuffle.unwrap_or(train_defaults.shuffle),
                early_stop_patience: layered.early_stop_patience,
            },
            val_split: layered.val_split.unwrap_or(0.0),
            cv: CvOptions {
                k: layered.cv_k.unwrap_or(cv_defaults.k),
                epochs: layered.cv_epochs.unwrap_or(cv_defaults.epochs),
                batch_size: layered.cv_batch_size.unwrap_or(cv_defaults.batch_size),
                seed,
                shuffle: layered.shuffle.unwrap_or(cv_defaults.shuffle),
                per_fold_scaler: layered
                    .per_fold_scaler
                    .unwrap_or(cv_defaults.per_fold_scaler),
            },
            grid: layered.grid.unwrap_or_else(Grid::desk),
            space: layered.space.unwrap_or_default(),
            strict: layered.strict.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let t = &self.train;
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                t.learning_rate
            )));
        }
        if t.batch_size == 0 || t.epochs == 0 || self.settings.hidden == 0 {
            return Err(Error::Config(
                "batch size, epochs and hidden width must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return Err(Error::Config(format!(
                "val_split must be in [0, 1), got {}",
                self.val_split
            )));
        }
        if t.early_stop_patience.is_some() && self.val_split == 0.0 {
            return Err(Error::Config(
                "early stopping needs a validation split".into(),
            ));
        }
        if self.cv.k < 2 || self.cv.epochs == 0 || self.cv.batch_size == 0 {
            return Err(Error::Config(
                "cv needs k >= 2 and positive epochs and batch size".into(),
            ));
        }
        self.grid.validate()
    }

    /// The complete configuration as a file that reproduces this run.
    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            schema_version: Some(CONFIG_SCHEMA_VERSION),
            model: Some(self.settings.kind),
            hidden: Some(self.settings.hidden),
            lstm_variant: Some(self.settings.lstm_variant),
            learning_rate: Some(self.train.learning_rate),
            batch_size: Some(self.train.batch_size),
            epochs: Some(self.train.epochs),
            seed: Some(self.train.seed),
            shuffle: Some(self.train.shuffle),
            early_stop_patience: self.train.early_stop_patience,
            val_split: Some(self.val_split),
            cv_k: Some(self.cv.k),
            cv_epochs: Some(self.cv.epochs),
            cv_batch_size: Some(self.cv.batch_size),
            per_fold_scaler: Some(self.cv.per_fold_scaler),
            grid: Some(self.grid.clone()),
            space: Some(self.space),
            strict: Some(self.strict),
        }
    }
}
