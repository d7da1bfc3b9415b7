//! Line-oriented `key=value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::corpus::ContextOptions;
use crate::decoder::CopyModes;
use crate::error::{Error, Result};
use crate::kbembed::TransEConfig;
use crate::model::ModelConfig;
use crate::objective::{LossOptions, DEFAULT_LAMBDA};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    /// When off the answer loss is not computed at all.
    pub answer_loss: bool,
    pub soft_min: Option<f64>,
    pub seed: u64,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub rho: f64,
    pub eps: f64,
    pub clip: f64,
    pub transe: bool,
    pub freeze_kb: bool,
    pub transe_epochs: usize,
    pub transe_lr: f64,
    pub transe_margin: f64,
    pub fusion: bool,
    pub copy_kb: bool,
    pub copy_context: bool,
    pub diversified: bool,
    pub max_len: usize,
    pub beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            decay: 0.97,
            batch_size: 16,
            epochs: 30,
            lambda: DEFAULT_LAMBDA,
            answer_loss: true,
            soft_min: None,
            seed: 0,
            d: 32,
            heads: 2,
            layers: 2,
            dropout: 0.1,
            rho: 0.9,
            eps: 1e-8,
            clip: 5.0,
            transe: true,
            freeze_kb: false,
            transe_epochs: 50,
            transe_lr: 0.01,
            transe_margin: 1.0,
            fusion: true,
            copy_kb: true,
            copy_context: true,
            diversified: true,
            max_len: 20,
            beam: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid value {value:?} for {key}"))),
    }
}

impl TrainConfig {
    /// Full-scale dimensions: d = 200, 4 heads, 5 layers, batch 200.
    pub fn paper() -> Self {
        TrainConfig {
            d: 200,
            heads: 4,
            layers: 5,
            batch_size: 200,
            ..Default::default()
        }
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "answer_loss" => self.answer_loss = parse_bool(key, value)?,
            "soft_min" => {
                self.soft_min = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "transe" => self.transe = parse_bool(key, value)?,
            "freeze_kb" => self.freeze_kb = parse_bool(key, value)?,
            "transe_epochs" => self.transe_epochs = parse(key, value)?,
            "transe_lr" => self.transe_lr = parse(key, value)?,
            "transe_margin" => self.transe_margin = parse(key, value)?,
            "fusion" => self.fusion = parse_bool(key, value)?,
            "copy_kb" => self.copy_kb = parse_bool(key, value)?,
            "copy_context" => self.copy_context = parse_bool(key, value)?,
            "diversified" => self.diversified = parse_bool(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. A `profile` key
    /// (`desk` or `paper`) is applied before all other keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(p, _)| *p == k) {
                return Err(Error::config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            pairs.push((k, v));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| *k == "profile").map(|p| p.1) {
            None | Some("desk") => TrainConfig::default(),
            Some("paper") => TrainConfig::paper(),
            Some(other) => return Err(Error::config(format!("unknown profile {other:?}"))),
        };
        for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "profile") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.d == 0 || self.heads == 0 || self.layers == 0 || self.d % self.heads != 0 {
            return bad("d, heads, layers must be positive with heads dividing d");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.clip > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.eps > 0.0) {
            return bad("clip and eps must be positive, rho in [0, 1)");
        }
        if self.soft_min.is_some_and(|t| !(t > 0.0)) {
            return bad("soft_min temperature must be positive");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        Ok(())
    }

    /// Canonical `key=value` text; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("lr", self.lr.to_string());
        kv("decay", self.decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lambda", self.lambda.to_string());
        kv("answer_loss", self.answer_loss.to_string());
        kv("soft_min", self.soft_min.map_or("none".into(), |t| t.to_string()));
        kv("seed", self.seed.to_string());
        kv("d", self.d.to_string());
        kv("heads", self.heads.to_string());
        kv("layers", self.layers.to_string());
        kv("dropout", self.dropout.to_string());
        kv("rho", self.rho.to_string());
        kv("eps", self.eps.to_string());
        kv("clip", self.clip.to_string());
        kv("transe", self.transe.to_string());
        kv("freeze_kb", self.freeze_kb.to_string());
        kv("transe_epochs", self.transe_epochs.to_string());
        kv("transe_lr", self.transe_lr.to_string());
        kv("transe_margin", self.transe_margin.to_string());
        kv("fusion", self.fusion.to_string());
        kv("copy_kb", self.copy_kb.to_string());
        kv("copy_context", self.copy_context.to_string());
        kv("diversified", self.diversified.to_string());
        kv("max_len", self.max_len.to_string());
        kv("beam", self.beam.to_string());
        s
    }

    /// FNV-1a hash of [`Self::to_text`].
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            layers: self.layers,
            dropout: self.dropout,
            copy: CopyModes {
                kb: self.copy_kb,
                context: self.copy_context,
            },
            fusion: self.fusion,
        }
    }

    /// Without KB copy the subject name stays spelled out in questions.
    pub fn context_options(&self) -> ContextOptions {
        ContextOptions {
            diversified: self.diversified,
            subject_placeholder: self.copy_kb,
            ..Default::default()
        }
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            lambda: if self.answer_loss { self.lambda } else { 0.0 },
            soft_min: self.soft_min,
        }
    }

    pub fn transe_config(&self) -> TransEConfig {
        TransEConfig {
            margin: self.transe_margin,
            lr: self.transe_lr,
            epochs: self.transe_epochs,
            seed: self.seed,
            ..Default::default()
        }
    }

    /// Learning rate after `epochs` completed epochs.
    pub fn lr_at(&self, epochs: usize) -> f64 {
        self.lr * self.decay.powi(epochs as i32)
    }
}
