//! Settings merged from command-line flags, an optional `key=value` file and
//! built-in defaults, in that order of precedence.

use std::path::Path;

use acne_core::config::KeyValues;
use acne_core::dataset::QualityConfig;
use acne_core::model::TrainConfig;
use acne_core::pipeline::PipelineSettings;
use acne_core::{Error, Result};
use acne_service::ServiceConfig;

pub const TRAIN_KEYS: [&str; 7] = [
    "seed",
    "epochs",
    "learning_rate",
    "batch_size",
    "validation_fraction",
    "hidden",
    "standardize",
];
pub const AUGMENT_KEYS: [&str; 2] = ["n_mild", "n_max"];

pub fn all_keys() -> Vec<&'static str> {
    let mut keys = ServiceConfig::allowed_keys();
    keys.extend(QualityConfig::KEYS);
    keys.extend(TRAIN_KEYS);
    keys.extend(AUGMENT_KEYS);
    keys
}

#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    kv: KeyValues,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        kv.reject_unknown(&all_keys())?;
        Ok(Self { kv })
    }

    /// Overrides `key` when the flag was given.
    pub fn flag(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.kv.set(key, v.to_string());
        }
    }

    pub fn switch(&mut self, key: &str, on: bool) {
        if on {
            self.kv.set(key, "true");
        }
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.kv.get(key)?.unwrap_or(default))
    }

    pub fn pipeline(&self) -> Result<PipelineSettings> {
        PipelineSettings::from_kv(&self.kv)
    }

    pub fn quality(&self) -> Result<QualityConfig> {
        QualityConfig::from_kv(&self.kv)
    }

    pub fn service(&self) -> Result<ServiceConfig> {
        ServiceConfig::from_kv(&self.kv.subset(&ServiceConfig::allowed_keys()))
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let hidden = match self.kv.get_str("hidden") {
            Some(text) => parse_widths(text)?,
            None => d.hidden.clone(),
        };
        Ok(TrainConfig {
            learning_rate: self.get("learning_rate", d.learning_rate)?,
            batch_size: self.get("batch_size", d.batch_size)?,
            epochs: self.get("epochs", d.epochs)?,
            seed: self.get("seed", d.seed)?,
            validation_fraction: self.get("validation_fraction", d.validation_fraction)?,
            hidden,
            standardize: self.get("standardize", d.standardize)?,
        })
    }
}

fn parse_widths(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {text:?} for key \"hidden\"")))
        })
        .collect()
}
