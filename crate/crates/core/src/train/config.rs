use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::AugmentMode;
use crate::error::{Error, Result};

/// Numeric precision of the training arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub weight_decay: f64,
    /// 0 disables momentum (plain SGD).
    pub momentum: f64,
    pub seed: u64,
    pub precision: Precision,
    pub augment: AugmentMode,
}

/// Names accepted by [`TrainConfig::profile`].
pub const TRAIN_PROFILES: [&str; 2] = ["desk", "full"];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            base_lr: 1e-3,
            max_lr: 1e-2,
            weight_decay: 5e-4,
            momentum: 0.0,
            seed: 0,
            precision: Precision::F32,
            augment: AugmentMode::Off,
        }
    }
}

impl TrainConfig {
    /// `desk` is the default; `full` uses batch 256, 50 epochs and a peak
    /// learning rate of 0.01.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::default()),
            "full" => Ok(TrainConfig {
                epochs: 50,
                batch_size: 256,
                ..Self::default()
            }),
            other => Err(Error::Config(format!(
                "unknown training profile {other:?}; expected one of {TRAIN_PROFILES:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr && self.max_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 < base_lr ({}) <= max_lr ({})",
                self.base_lr, self.max_lr
            )));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(
                "weight_decay must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Returns `false` for keys this
    /// struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "max_lr" => self.max_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad(key, value)),
                }
            }
            "augment" => {
                self.augment = match value {
                    "off" | "false" => AugmentMode::Off,
                    "on" | "true" | "random" => AugmentMode::Random,
                    "force-flip" => AugmentMode::ForceFlip,
                    _ => return Err(bad(key, value)),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses a flat config file holding only training keys.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("unknown training key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the flat `key = value` format.
    pub fn to_kv_string(&self) -> String {
        let augment = match self.augment {
            AugmentMode::Off => "off",
            AugmentMode::Random => "random",
            AugmentMode::ForceFlip => "force-flip",
        };
        let precision = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        format!(
            "epochs = {}\nbatch_size = {}\nbase_lr = {}\nmax_lr = {}\nweight_decay = {}\nmomentum = {}\nseed = {}\nprecision = {precision}\naugment = {augment}\n",
            self.epochs, self.batch_size, self.base_lr, self.max_lr, self.weight_decay, self.momentum, self.seed
        )
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| bad(key, value))
}

/// Parses flat `key = value` lines. Blank lines and `#` comments are
/// skipped; repeated keys are rejected.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k:?}", no + 1)));
        }
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}
