use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagekit::raw_to_pixel;
use crate::losses::{LossKind, LossParams};

/// Every attack hyperparameter. Budgets are on the raw 0..255 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// Partitions per image side (M).
    pub partitions: usize,
    /// Local blocks sampled per iteration (N). Zero is the plain baseline.
    pub samples: usize,
    pub loss: LossParams,
    /// SupHigh's count of extra suppressed classes.
    pub n_high: usize,
    pub di: bool,
    pub di_prob: f64,
    pub di_min_scale: f64,
    pub ti: bool,
    pub ti_kernel: usize,
    pub mi: bool,
    pub mi_decay: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 16.0,
            alpha: 2.0,
            iterations: 200,
            partitions: 4,
            samples: 9,
            loss: LossParams::default(),
            n_high: 3,
            di: true,
            di_prob: 0.7,
            di_min_scale: 0.84,
            ti: true,
            ti_kernel: 5,
            mi: true,
            mi_decay: 1.0,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "epsilon",
    "alpha",
    "iterations",
    "partitions",
    "samples",
    "loss",
    "tau",
    "beta1",
    "beta2",
    "n_high",
    "di",
    "di_prob",
    "di_min_scale",
    "ti",
    "ti_kernel",
    "mi",
    "mi_decay",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse {key} = {v:?} as bool"))),
    }
}

impl AttackConfig {
    pub fn epsilon_pixels(&self) -> f64 {
        raw_to_pixel(self.epsilon)
    }

    pub fn alpha_pixels(&self) -> f64 {
        raw_to_pixel(self.alpha)
    }

    /// Same settings with the everywhere scheme switched off.
    pub fn baseline(&self) -> Self {
        AttackConfig {
            samples: 0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.partitions == 0 {
            return fail("partitions must be >= 1".into());
        }
        if self.samples > self.partitions * self.partitions {
            return fail(format!(
                "samples {} exceeds {}x{} blocks",
                self.samples, self.partitions, self.partitions
            ));
        }
        if !(0.0..=1.0).contains(&self.di_prob) {
            return fail("di_prob must lie in [0, 1]".into());
        }
        if !(self.di_min_scale > 0.0 && self.di_min_scale <= 1.0) {
            return fail("di_min_scale must lie in (0, 1]".into());
        }
        if self.ti_kernel % 2 == 0 {
            return fail(format!("ti_kernel must be odd, got {}", self.ti_kernel));
        }
        if !(self.mi_decay >= 0.0 && self.mi_decay.is_finite()) {
            return fail("mi_decay must be >= 0".into());
        }
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical `key=value` lines, in a fixed key order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn to_map(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epsilon", fmt_f(self.epsilon)),
            ("alpha", fmt_f(self.alpha)),
            ("iterations", self.iterations.to_string()),
            ("partitions", self.partitions.to_string()),
            ("samples", self.samples.to_string()),
            ("loss", self.loss.kind.to_string()),
            ("tau", fmt_f(self.loss.tau)),
            ("beta1", fmt_f(self.loss.beta1)),
            ("beta2", fmt_f(self.loss.beta2)),
            ("n_high", self.n_high.to_string()),
            ("di", self.di.to_string()),
            ("di_prob", fmt_f(self.di_prob)),
            ("di_min_scale", fmt_f(self.di_min_scale)),
            ("ti", self.ti.to_string()),
            ("ti_kernel", self.ti_kernel.to_string()),
            ("mi", self.mi.to_string()),
            ("mi_decay", fmt_f(self.mi_decay)),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epsilon" => self.epsilon = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "partitions" => self.partitions = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "loss" => {
                self.loss.kind = value
                    .trim()
                    .parse::<LossKind>()
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "tau" => self.loss.tau = parse(key, value)?,
            "beta1" => self.loss.beta1 = parse(key, value)?,
            "beta2" => self.loss.beta2 = parse(key, value)?,
            "n_high" => self.n_high = parse(key, value)?,
            "di" => self.di = parse_bool(key, value)?,
            "di_prob" => self.di_prob = parse(key, value)?,
            "di_min_scale" => self.di_min_scale = parse(key, value)?,
            "ti" => self.ti = parse_bool(key, value)?,
            "ti_kernel" => self.ti_kernel = parse(key, value)?,
            "mi" => self.mi = parse_bool(key, value)?,
            "mi_decay" => self.mi_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown attack key {key:?}"))),
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        KEYS.contains(&key)
    }

    /// Starts from defaults and applies every pair, then validates.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = AttackConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }
}

/// Shortest round-tripping decimal for an f64.
fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Parses a flat `key = value` text; `#` starts a comment. Later keys win.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}
