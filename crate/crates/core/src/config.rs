//! Run configuration: flat `key = value` text with dotted section keys.
//!
//! ```text
//! # comment
//! seed = 7
//! model.variant = sat_dyn
//! train.iterations = 200
//! ```
//!
//! Unknown keys and malformed values are configuration errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::mining::MlpInit;
use crate::model::{ModelConfig, Variant};
use crate::tracker::TrackerConfig;

pub const SEED_ENV: &str = "SGDVIT_SEED";

/// Parsed `key = value` pairs, each remembered with its line number.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, (String, usize)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CoreError::config(format!("line {}", i + 1), format!("expected `key = value`, got {raw:?}")));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(CoreError::config(format!("line {}", i + 1), format!("bad key {k:?}")));
            }
            if entries.insert(k.to_string(), (v.to_string(), i + 1)).is_some() {
                return Err(CoreError::config(k, format!("duplicate key on line {}", i + 1)));
            }
        }
        Ok(KvDoc { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }

    /// Removes and parses `key`, if present.
    pub fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => {
                v.parse().map(Some).map_err(|e| CoreError::config(key, format!("line {line}: bad value {v:?}: {e}")))
            }
        }
    }

    pub fn take_or<V: FromStr>(&mut self, key: &str, default: V) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => Err(CoreError::config(k, format!("unknown key on line {line}"))),
        }
    }
}

/// Booleans accept `true/false`, `yes/no`, `on/off`, `1/0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Ok(Flag(true)),
            "false" | "no" | "off" | "0" => Ok(Flag(false)),
            _ => Err("expected a boolean".into()),
        }
    }
}

impl FromStr for MlpInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(MlpInit::Identity),
            "kaiming" => Ok(MlpInit::Kaiming),
            _ => Err("expected identity or kaiming".into()),
        }
    }
}

fn mlp_init_name(m: MlpInit) -> &'static str {
    match m {
        MlpInit::Identity => "identity",
        MlpInit::Kaiming => "kaiming",
    }
}

/// Comma-separated list of exactly four widths.
struct Widths([usize; 4]);

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
        v.try_into().map(Widths).map_err(|v: Vec<usize>| format!("expected 4 widths, got {}", v.len()))
    }
}

pub fn model_entries(m: &ModelConfig) -> Vec<(String, String)> {
    let b = m.backbone.map(|w| w.to_string()).join(",");
    [
        ("variant", m.variant.name().to_string()),
        ("backbone", b),
        ("channels", m.channels.to_string()),
        ("heads", m.heads.to_string()),
        ("grid", m.grid.to_string()),
        ("window", m.window.to_string()),
        ("theta", m.theta.to_string()),
        ("tau", m.tau.to_string()),
        ("ffn_mult", m.ffn_mult.to_string()),
        ("encoder_depth", m.encoder_depth.to_string()),
        ("decoder_depth", m.decoder_depth.to_string()),
        ("posenc", m.posenc.to_string()),
        ("pos_temperature", m.pos_temperature.to_string()),
        ("tie_qk", m.tie_qk.to_string()),
        ("mlp_init", mlp_init_name(m.mlp_init).to_string()),
        ("head_skip", m.head_skip.to_string()),
        ("cls_bias", m.cls_bias.to_string()),
        ("reg_init", m.reg_init.to_string()),
        ("template_size", m.template_size.to_string()),
        ("search_size", m.search_size.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("model.{k}"), v))
    .collect()
}

/// Consumes the `model.*` keys of `doc`, defaulting the absent ones.
pub fn take_model(doc: &mut KvDoc) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let variant = match doc.take::<String>("model.variant")? {
        Some(v) => v.parse::<Variant>()?,
        None => d.variant,
    };
    let cfg = ModelConfig {
        variant,
        backbone: doc.take::<Widths>("model.backbone")?.map_or(d.backbone, |w| w.0),
        channels: doc.take_or("model.channels", d.channels)?,
        heads: doc.take_or("model.heads", d.heads)?,
        grid: doc.take_or("model.grid", d.grid)?,
        window: doc.take_or("model.window", d.window)?,
        theta: doc.take_or("model.theta", d.theta)?,
        tau: doc.take_or("model.tau", d.tau)?,
        ffn_mult: doc.take_or("model.ffn_mult", d.ffn_mult)?,
        encoder_depth: doc.take_or("model.encoder_depth", d.encoder_depth)?,
        decoder_depth: doc.take_or("model.decoder_depth", d.decoder_depth)?,
        posenc: doc.take_or("model.posenc", Flag(d.posenc))?.0,
        pos_temperature: doc.take_or("model.pos_temperature", d.pos_temperature)?,
        tie_qk: doc.take_or("model.tie_qk", Flag(d.tie_qk))?.0,
        mlp_init: doc.take_or("model.mlp_init", d.mlp_init)?,
        head_skip: doc.take_or("model.head_skip", Flag(d.head_skip))?.0,
        cls_bias: doc.take_or("model.cls_bias", d.cls_bias)?,
        reg_init: doc.take_or("model.reg_init", d.reg_init)?,
        template_size: doc.take_or("model.template_size", d.template_size)?,
        search_size: doc.take_or("model.search_size", d.search_size)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Final learning rate of the log-space decay.
    pub lr_end: f64,
    pub momentum: f64,
    /// Global gradient-norm clip (0 disables).
    pub clip: f64,
    /// Search-centre jitter as a fraction of the box context side.
    pub shift: f64,
    /// Log-uniform scale jitter half-range (`exp(+-scale)`).
    pub scale: f64,
    /// Fixed jittered samples used to measure loss before and after.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            lr: 1e-2,
            lr_end: 1e-3,
            momentum: 0.9,
            clip: 5.0,
            shift: 0.15,
            scale: 0.1,
            eval_samples: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr_end > 0.0) {
            return Err(CoreError::config("train.lr", "learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::config("train.momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.clip >= 0.0) {
            return Err(CoreError::config("train.clip", "must be nonnegative"));
        }
        if !(0.0..0.5).contains(&self.shift) || !(0.0..1.0).contains(&self.scale) {
            return Err(CoreError::config("train.shift", "jitter out of range (shift in [0, 0.5), scale in [0, 1))"));
        }
        if self.eval_samples == 0 {
            return Err(CoreError::config("train.eval_samples", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub checkpoint: Option<PathBuf>,
    /// Sequence directory (frames plus `groundtruth.txt`).
    pub sequence: Option<PathBuf>,
    /// Synthetic sequence spec, used when no sequence directory is given.
    pub synth: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub paths: Paths,
}


impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let d = RunConfig::default();
        let seed = doc.take_or("seed", d.seed)?;
        let model = take_model(&mut doc)?;
        let train = TrainConfig {
            iterations: doc.take_or("train.iterations", d.train.iterations)?,
            lr: doc.take_or("train.lr", d.train.lr)?,
            lr_end: doc.take_or("train.lr_end", d.train.lr_end)?,
            momentum: doc.take_or("train.momentum", d.train.momentum)?,
            clip: doc.take_or("train.clip", d.train.clip)?,
            shift: doc.take_or("train.shift", d.train.shift)?,
            scale: doc.take_or("train.scale", d.train.scale)?,
            eval_samples: doc.take_or("train.eval_samples", d.train.eval_samples)?,
        };
        let tracker = TrackerConfig {
            penalty: doc.take_or("tracker.penalty", d.tracker.penalty)?,
            ema: doc.take_or("tracker.ema", d.tracker.ema)?,
            min_side: doc.take_or("tracker.min_side", d.tracker.min_side)?,
        };
        let paths = Paths {
            checkpoint: doc.take("paths.checkpoint")?,
            sequence: doc.take("paths.sequence")?,
            synth: doc.take("paths.synth")?,
            output: doc.take("paths.output")?,
        };
        doc.finish()?;
        let cfg = RunConfig { seed, model, train, tracker, paths };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, resolving relative paths against its directory and
    /// applying the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.checkpoint, &mut cfg.paths.sequence, &mut cfg.paths.synth, &mut cfg.paths.output] {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| CoreError::config(SEED_ENV, format!("bad seed {v:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.tracker.validate()
    }

    /// The path under `key`, which must be set and exist.
    pub fn existing(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "paths.checkpoint" => &self.paths.checkpoint,
            "paths.sequence" => &self.paths.sequence,
            "paths.synth" => &self.paths.synth,
            "paths.output" => &self.paths.output,
            _ => return Err(CoreError::config(key, "not a path key")),
        };
        let p = p.as_deref().ok_or_else(|| CoreError::config(key, "required but not set"))?;
        if !p.exists() {
            return Err(CoreError::config(key, format!("{} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        for (k, v) in model_entries(&self.model) {
            put(&k, v);
        }
        let t = &self.train;
        put("train.iterations", t.iterations.to_string());
        put("train.lr", t.lr.to_string());
        put("train.lr_end", t.lr_end.to_string());
        put("train.momentum", t.momentum.to_string());
        put("train.clip", t.clip.to_string());
        put("train.shift", t.shift.to_string());
        put("train.scale", t.scale.to_string());
        put("train.eval_samples", t.eval_samples.to_string());
        put("tracker.penalty", self.tracker.penalty.to_string());
        put("tracker.ema", self.tracker.ema.to_string());
        put("tracker.min_side", self.tracker.min_side.to_string());
        let p = &self.paths;
        for (k, v) in [("checkpoint", &p.checkpoint), ("sequence", &p.sequence), ("synth", &p.synth), ("output", &p.output)] {
            if let Some(v) = v {
                put(&format!("paths.{k}"), v.display().to_string());
            }
        }
        out
    }
}
