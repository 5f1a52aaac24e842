use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::data::ShiftSpec;
use crate::error::{Error, Result};
use crate::miner::{GroupMode, MiningConfig};
use crate::models::NetConfig;
use crate::rain::RainWeights;

/// Every tunable of a run. Serialized as one flat JSON object whose keys
/// are also the CLI override flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub net: NetConfig,
    pub weights: RainWeights,
    pub rain_iters: usize,
    pub rain_batch: usize,
    pub rain_lr: f64,
    pub rain_warmup: usize,
    pub rain_power: f64,
    pub rain_momentum: f64,
    pub rain_weight_decay: f64,
    pub corpus_size: usize,
    pub pretrain_iters: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub mining: MiningConfig,
    pub shift: ShiftSpec,
    pub data_seed: u64,
    pub source_count: usize,
    pub val_count: usize,
    /// Target pool size: one anchor plus the held-out set.
    pub target_count: usize,
    pub source_images: String,
    pub source_labels: String,
    pub target_images: String,
    pub target_labels: String,
    pub seeds: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            net: NetConfig {
                side: 16,
                channels: 16,
                latent_dim: 8,
                classes: 10,
                feat_dim: 64,
                vae_hidden: 64,
                task_channels: 8,
            },
            weights: RainWeights::default(),
            rain_iters: 2000,
            rain_batch: 8,
            rain_lr: 0.0005,
            rain_warmup: 100,
            rain_power: 0.9,
            rain_momentum: 0.9,
            rain_weight_decay: 0.0,
            corpus_size: 512,
            pretrain_iters: 1500,
            pretrain_batch: 32,
            pretrain_lr: 0.02,
            mining: MiningConfig {
                batch_size: 16,
                ..MiningConfig::default()
            },
            shift: ShiftSpec {
                hue_deg: 120.0,
                gain: [-0.7, -0.5, -0.6],
                bias: [0.85, 0.75, 0.9],
                texture: 0.3,
                noise_std: 0.04,
                seed: 17,
            },
            data_seed: 1,
            source_count: 2000,
            val_count: 500,
            target_count: 501,
            source_images: String::new(),
            source_labels: String::new(),
            target_images: String::new(),
            target_labels: String::new(),
            seeds: 5,
            out_dir: "runs".into(),
        }
    }
}

fn num(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::config(key, format!("expected a number, got {v}")))
}

fn count(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::config(key, format!("expected a non-negative integer, got {v}")))
}

fn text(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::config(key, format!("expected a string, got {v}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 53] = [
        "seed",
        "side",
        "channels",
        "latent_dim",
        "classes",
        "feat_dim",
        "vae_hidden",
        "task_channels",
        "lambda_s",
        "lambda_k",
        "lambda_r",
        "rain_iters",
        "rain_batch",
        "rain_lr",
        "rain_warmup",
        "rain_power",
        "rain_momentum",
        "rain_weight_decay",
        "corpus_size",
        "pretrain_iters",
        "pretrain_batch",
        "pretrain_lr",
        "alpha",
        "beta",
        "depth_n",
        "lambda",
        "batch_size",
        "total_iters",
        "styles_per_content",
        "warmup_iters",
        "power",
        "momentum",
        "weight_decay",
        "consistency_groups",
        "with_source",
        "shift_hue",
        "shift_gain_r",
        "shift_gain_g",
        "shift_gain_b",
        "shift_bias_r",
        "shift_bias_g",
        "shift_bias_b",
        "shift_texture",
        "shift_noise_std",
        "shift_seed",
        "data_seed",
        "source_count",
        "val_count",
        "target_count",
        "source_images",
        "source_labels",
        "target_images",
        "target_labels",
    ];

    /// Keys beyond the fixed table that still map to fields.
    const EXTRA_KEYS: [&'static str; 2] = ["seeds", "out_dir"];

    pub fn all_keys() -> impl Iterator<Item = &'static str> {
        Self::KEYS.iter().chain(&Self::EXTRA_KEYS).copied()
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let n = &mut self.net;
        let m = &mut self.mining;
        let s = &mut self.shift;
        match key {
            "seed" => {
                self.seed = count(key, v)? as u64;
                m.seed = self.seed;
            }
            "side" => n.side = count(key, v)?,
            "channels" => n.channels = count(key, v)?,
            "latent_dim" => n.latent_dim = count(key, v)?,
            "classes" => n.classes = count(key, v)?,
            "feat_dim" => n.feat_dim = count(key, v)?,
            "vae_hidden" => n.vae_hidden = count(key, v)?,
            "task_channels" => n.task_channels = count(key, v)?,
            "lambda_s" => self.weights.lambda_s = num(key, v)?,
            "lambda_k" => self.weights.lambda_k = num(key, v)?,
            "lambda_r" => self.weights.lambda_r = num(key, v)?,
            "rain_iters" => self.rain_iters = count(key, v)?,
            "rain_batch" => self.rain_batch = count(key, v)?,
            "rain_lr" => self.rain_lr = num(key, v)?,
            "rain_warmup" => self.rain_warmup = count(key, v)?,
            "rain_power" => self.rain_power = num(key, v)?,
            "rain_momentum" => self.rain_momentum = num(key, v)?,
            "rain_weight_decay" => self.rain_weight_decay = num(key, v)?,
            "corpus_size" => self.corpus_size = count(key, v)?,
            "pretrain_iters" => self.pretrain_iters = count(key, v)?,
            "pretrain_batch" => self.pretrain_batch = count(key, v)?,
            "pretrain_lr" => self.pretrain_lr = num(key, v)?,
            "alpha" => m.alpha = num(key, v)?,
            "beta" => m.beta = num(key, v)?,
            "depth_n" => m.depth_n = count(key, v)?,
            "lambda" => m.lambda = num(key, v)?,
            "batch_size" => m.batch_size = count(key, v)?,
            "total_iters" => m.total_iters = count(key, v)?,
            "styles_per_content" => m.styles_per_content = count(key, v)?,
            "warmup_iters" => m.warmup_iters = count(key, v)?,
            "power" => m.power = num(key, v)?,
            "momentum" => m.momentum = num(key, v)?,
            "weight_decay" => m.weight_decay = num(key, v)?,
            "consistency_groups" => m.groups = GroupMode::from_name(&text(key, v)?)?,
            "with_source" => m.with_source = v.as_bool().ok_or_else(|| Error::config(key, format!("expected true or false, got {v}")))?,
            "shift_hue" => s.hue_deg = num(key, v)?,
            "shift_gain_r" => s.gain[0] = num(key, v)?,
            "shift_gain_g" => s.gain[1] = num(key, v)?,
            "shift_gain_b" => s.gain[2] = num(key, v)?,
            "shift_bias_r" => s.bias[0] = num(key, v)?,
            "shift_bias_g" => s.bias[1] = num(key, v)?,
            "shift_bias_b" => s.bias[2] = num(key, v)?,
            "shift_texture" => s.texture = num(key, v)?,
            "shift_noise_std" => s.noise_std = num(key, v)?,
            "shift_seed" => s.seed = count(key, v)? as u64,
            "data_seed" => self.data_seed = count(key, v)? as u64,
            "source_count" => self.source_count = count(key, v)?,
            "val_count" => self.val_count = count(key, v)?,
            "target_count" => self.target_count = count(key, v)?,
            "source_images" => self.source_images = text(key, v)?,
            "source_labels" => self.source_labels = text(key, v)?,
            "target_images" => self.target_images = text(key, v)?,
            "target_labels" => self.target_labels = text(key, v)?,
            "seeds" => self.seeds = count(key, v)?,
            "out_dir" => self.out_dir = text(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a command-line override: the value is read as JSON when it
    /// parses, otherwise as a bare string.
    pub fn set_str(&mut self, key: &str, raw: &str) -> Result<()> {
        let v = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key, &v)
    }

    pub fn get(&self, key: &str) -> Result<Value> {
        let (n, m, s) = (&self.net, &self.mining, &self.shift);
        let u = |x: usize| Value::from(x as u64);
        let f = |x: f64| Value::from(x);
        Ok(match key {
            "seed" => Value::from(self.seed),
            "side" => u(n.side),
            "channels" => u(n.channels),
            "latent_dim" => u(n.latent_dim),
            "classes" => u(n.classes),
            "feat_dim" => u(n.feat_dim),
            "vae_hidden" => u(n.vae_hidden),
            "task_channels" => u(n.task_channels),
            "lambda_s" => f(self.weights.lambda_s),
            "lambda_k" => f(self.weights.lambda_k),
            "lambda_r" => f(self.weights.lambda_r),
            "rain_iters" => u(self.rain_iters),
            "rain_batch" => u(self.rain_batch),
            "rain_lr" => f(self.rain_lr),
            "rain_warmup" => u(self.rain_warmup),
            "rain_power" => f(self.rain_power),
            "rain_momentum" => f(self.rain_momentum),
            "rain_weight_decay" => f(self.rain_weight_decay),
            "corpus_size" => u(self.corpus_size),
            "pretrain_iters" => u(self.pretrain_iters),
            "pretrain_batch" => u(self.pretrain_batch),
            "pretrain_lr" => f(self.pretrain_lr),
            "alpha" => f(m.alpha),
            "beta" => f(m.beta),
            "depth_n" => u(m.depth_n),
            "lambda" => f(m.lambda),
            "batch_size" => u(m.batch_size),
            "total_iters" => u(m.total_iters),
            "styles_per_content" => u(m.styles_per_content),
            "warmup_iters" => u(m.warmup_iters),
            "power" => f(m.power),
            "momentum" => f(m.momentum),
            "weight_decay" => f(m.weight_decay),
            "consistency_groups" => Value::from(m.groups.name()),
            "with_source" => Value::from(m.with_source),
            "shift_hue" => f(s.hue_deg),
            "shift_gain_r" => f(s.gain[0]),
            "shift_gain_g" => f(s.gain[1]),
            "shift_gain_b" => f(s.gain[2]),
            "shift_bias_r" => f(s.bias[0]),
            "shift_bias_g" => f(s.bias[1]),
            "shift_bias_b" => f(s.bias[2]),
            "shift_texture" => f(s.texture),
            "shift_noise_std" => f(s.noise_std),
            "shift_seed" => Value::from(s.seed),
            "data_seed" => Value::from(self.data_seed),
            "source_count" => u(self.source_count),
            "val_count" => u(self.val_count),
            "target_count" => u(self.target_count),
            "source_images" => Value::from(self.source_images.clone()),
            "source_labels" => Value::from(self.source_labels.clone()),
            "target_images" => Value::from(self.target_images.clone()),
            "target_labels" => Value::from(self.target_labels.clone()),
            "seeds" => u(self.seeds),
            "out_dir" => Value::from(self.out_dir.clone()),
            _ => return Err(Error::config(key, "unknown key")),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net
            .validate()
            .map_err(|e| Error::config("net", e.to_string()))?;
        self.weights.validate()?;
        self.mining.validate()?;
        self.shift.validate()?;
        let positive = [
            ("rain_iters", self.rain_iters),
            ("rain_batch", self.rain_batch),
            ("corpus_size", self.corpus_size),
            ("pretrain_iters", self.pretrain_iters),
            ("pretrain_batch", self.pretrain_batch),
            ("source_count", self.source_count),
            ("val_count", self.val_count),
            ("seeds", self.seeds),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*k, "must be positive"));
        }
        if self.target_count < 2 {
            return Err(Error::config("target_count", "needs the anchor plus at least one held-out sample"));
        }
        if self.rain_warmup >= self.rain_iters {
            return Err(Error::config("rain_warmup", "must be below rain_iters"));
        }
        for (k, v) in [("rain_lr", self.rain_lr), ("pretrain_lr", self.pretrain_lr), ("rain_power", self.rain_power)] {
            if !(v > 0.0) {
                return Err(Error::config(k, "must be positive"));
            }
        }
        for (k, v) in [("rain_momentum", self.rain_momentum), ("rain_weight_decay", self.rain_weight_decay)] {
            if !(v >= 0.0) {
                return Err(Error::config(k, "must be non-negative"));
            }
        }
        if self.source_images.is_empty() != self.source_labels.is_empty() {
            return Err(Error::config("source_labels", "source images and labels must be given together"));
        }
        if self.target_images.is_empty() != self.target_labels.is_empty() {
            return Err(Error::config("target_labels", "target images and labels must be given together"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let map: Map<String, Value> = Self::all_keys()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect();
        serde_json::to_string_pretty(&Value::Object(map)).expect("serializable")
    }

    /// Mining settings with the run seed applied.
    pub fn mining_for(&self, seed: u64) -> MiningConfig {
        MiningConfig { seed, ..self.mining }
    }
}

/// Parses a flat JSON object; missing keys keep their defaults. An empty
/// document yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if text.trim().is_empty() {
        return Ok(cfg);
    }
    let v: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::config("<document>", "expected a flat JSON object"))?;
    for (k, val) in obj {
        cfg.set(k, val)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(parse_config("{}").unwrap(), c);
        assert_eq!(c.mining.lambda, 2e-4);
        assert_eq!(c.mining.depth_n, 5);
        assert_eq!((c.weights.lambda_s, c.weights.lambda_k, c.weights.lambda_r), (1.0, 1.0, 5.0));
    }

    #[test]
    fn errors_name_the_key() {
        for (doc, key) in [
            (r#"{"depth_n": 0}"#, "depth_n"),
            (r#"{"bogus": 1}"#, "bogus"),
            (r#"{"beta": "big"}"#, "beta"),
            (r#"{"side": 1.5}"#, "side"),
        ] {
            match parse_config(doc) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn serialization_round_trips() {
        let mut c = RunConfig::default();
        c.set_str("beta", "0.125").unwrap();
        c.set_str("consistency_groups", "whole_batch").unwrap();
        c.set_str("out_dir", "somewhere/else").unwrap();
        c.mining.alpha = 0.1 + 0.2;
        assert_eq!(parse_config(&c.to_json()).unwrap(), c);
    }
}
