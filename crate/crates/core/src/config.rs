//! Flat TOML run configuration.
//!
//! Every key has a default, unknown keys are rejected, and any key can be
//! overridden with `key=value` (the value parsed as TOML, falling back to a
//! plain string). Relative paths are resolved against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitRatios;
use crate::error::{Error, Result};
use crate::probes::BiasType;
use crate::ranking::Averaging;
use crate::recommender::{SearchGrid, TrainConfig, BUILTIN_LEARNING_RATES, REFERENCE_DROPOUTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub businesses: Option<PathBuf>,
    pub reviews: Option<PathBuf>,
    /// Template file; the shipped set when absent.
    pub templates: Option<PathBuf>,
    /// Lexicon file; the shipped set when absent.
    pub lexicons: Option<PathBuf>,
    pub out: PathBuf,
    /// Cities to process; every city in the catalog when empty.
    pub cities: Vec<String>,
    pub threshold: u64,
    pub k: usize,
    pub seed: u64,
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub test_ratio: f64,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden: usize,
    pub hash_bits: u32,
    pub idf: bool,
    pub search_learning_rates: Vec<f64>,
    pub search_dropouts: Vec<f64>,
    pub averaging: Averaging,
    pub bias_types: Vec<BiasType>,
    /// Checkpoint path pattern; `{city}` is replaced by the city slug.
    /// Defaults to `<out>/train/{city}/model.ckpt`.
    pub checkpoint: Option<String>,
    /// External recommendation lists (pattern with optional `{city}`);
    /// when set, audit uses them instead of a checkpoint.
    pub external_recommendations: Option<String>,
    /// Categories for the orientation scatter; the shipped nightlife list when empty.
    pub nightlife: Vec<String>,
    pub top_words: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = SplitRatios::default();
        RunConfig {
            businesses: None,
            reviews: None,
            templates: None,
            lexicons: None,
            out: PathBuf::from("out"),
            cities: Vec::new(),
            threshold: 100,
            k: 20,
            seed: 0,
            train_ratio: r.train,
            validation_ratio: r.validation,
            test_ratio: r.test,
            learning_rate: t.learning_rate,
            dropout: t.dropout_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            hidden: t.hidden,
            hash_bits: t.hash_bits,
            idf: t.idf,
            search_learning_rates: BUILTIN_LEARNING_RATES.to_vec(),
            search_dropouts: REFERENCE_DROPOUTS.to_vec(),
            averaging: Averaging::default(),
            bias_types: BiasType::ALL.to_vec(),
            checkpoint: None,
            external_recommendations: None,
            nightlife: Vec::new(),
            top_words: 20,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.businesses,
            &mut self.reviews,
            &mut self.templates,
            &mut self.lexicons,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out);
        for pattern in [&mut self.checkpoint, &mut self.external_recommendations]
            .into_iter()
            .flatten()
        {
            if Path::new(pattern.as_str()).is_relative() {
                *pattern = base.join(&*pattern).to_string_lossy().into_owned();
            }
        }
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        table.insert(key.to_owned(), parse_value(raw.trim()));
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.split_ratios().validate()?;
        self.train_config().validate()?;
        if self.bias_types.is_empty() {
            return Err(Error::Config("bias_types must not be empty".into()));
        }
        Ok(())
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.train_ratio,
            validation: self.validation_ratio,
            test: self.test_ratio,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            dropout_rate: self.dropout,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            hidden: self.hidden,
            hash_bits: self.hash_bits,
            idf: self.idf,
        }
    }

    pub fn search_grid(&self) -> SearchGrid {
        SearchGrid {
            dropouts: self.search_dropouts.clone(),
            learning_rates: self.search_learning_rates.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }
}

/// Filesystem-safe form of a city name.
pub fn city_slug(city: &str) -> String {
    city.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Substitutes `{city}` in a path pattern.
pub fn city_path(pattern: &str, city: &str) -> PathBuf {
    PathBuf::from(pattern.replace("{city}", &city_slug(city)))
}
