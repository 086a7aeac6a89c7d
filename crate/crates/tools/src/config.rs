//! Flat key-value configuration files: `key = value` lines, `#` comments.

use std::path::Path;

use quadtrack_core::embed::{desk_arch, reference_arch, LayerSpec};
use quadtrack_core::train::{TrainConfig, TrainMode};

use crate::error::{Error, Result};

/// Tokenize `key = value` lines, skipping blanks and `#` comments.
/// Returns `(line_number, key, value)` triples; malformed lines are kept
/// for the caller to reject with context.
pub fn parse_kv(text: &str) -> Vec<(usize, String, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((i + 1, k.trim().to_string(), v.trim().to_string())),
            None => out.push((i + 1, line.to_string(), String::new())),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Reference,
}

impl Preset {
    pub fn arch(self) -> Vec<LayerSpec> {
        match self {
            Preset::Desk => desk_arch(),
            Preset::Reference => reference_arch(),
        }
    }
}

/// A training config file: the core [`TrainConfig`] plus the network preset.
#[derive(Clone, Debug)]
pub struct TrainFileConfig {
    pub train: TrainConfig,
    pub preset: Preset,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            train: TrainConfig::default(),
            preset: Preset::Desk,
        }
    }
}

pub fn parse_train_config(text: &str, path: &Path) -> Result<TrainFileConfig> {
    let mut cfg = TrainFileConfig::default();
    for (line_no, key, value) in parse_kv(text) {
        let bad = |msg: String| Error::parse(path, line_no, msg);
        macro_rules! num {
            ($slot:expr) => {
                $slot = value
                    .parse()
                    .map_err(|_| bad(format!("invalid value `{value}` for {key}")))?
            };
        }
        match key.as_str() {
            "epochs" => num!(cfg.train.epochs),
            "pairs_per_epoch" => num!(cfg.train.pairs_per_epoch),
            "batch_size" => num!(cfg.train.batch_size),
            "lr_start" => num!(cfg.train.lr_start),
            "lr_end" => num!(cfg.train.lr_end),
            "initial_w1" => num!(cfg.train.initial_weights[0]),
            "initial_w2" => num!(cfg.train.initial_weights[1]),
            "weight_threshold" => num!(cfg.train.weight_threshold),
            "grayscale_prob" => num!(cfg.train.grayscale_prob),
            "validation_fraction" => num!(cfg.train.validation_fraction),
            "seed" => num!(cfg.train.seed),
            "mode" => {
                cfg.train.mode = value.parse::<TrainMode>().map_err(|e| bad(e.to_string()))?
            }
            "preset" => {
                cfg.preset = match value.as_str() {
                    "desk" => Preset::Desk,
                    "reference" => Preset::Reference,
                    other => return Err(bad(format!("unknown preset `{other}`"))),
                }
            }
            other => return Err(bad(format!("unknown train key `{other}`"))),
        }
    }
    cfg.train.validate().map_err(Error::Core)?;
    Ok(cfg)
}

pub fn load_train_config(path: &Path) -> Result<TrainFileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_config(&text, path)
}
