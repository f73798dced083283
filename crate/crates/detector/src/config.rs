//! Detector and training settings, and the flat `key = value` format they are
//! stored in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use lim_core::{Ablation, BaFusion, LimConfig};

use crate::error::{Error, Result};

/// Parses `key = value` lines. `#` starts a comment; blank lines are ignored.
/// Every key must be in `valid`; repeated keys are an error.
pub fn parse_key_values(text: &str, valid: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, found {line:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !valid.contains(&k) {
            return Err(Error::Config(format!(
                "line {}: unknown key {k:?}; valid keys: {}",
                i + 1,
                valid.join(", ")
            )));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key {k:?} given twice", i + 1)));
        }
    }
    Ok(out)
}

pub(crate) fn parse_value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

/// Which neck sits between backbone and head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Backbone features go straight to the head.
    Baseline,
    /// Top-down dense propagation only.
    Sp,
    /// Both dense pathways, no boundary activation.
    Bp,
    /// Both pathways with boundary activation.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Self::Baseline, Self::Sp, Self::Bp, Self::Full];

    pub fn ablation(self) -> Option<Ablation> {
        match self {
            Self::Baseline => None,
            Self::Sp => Some(Ablation::SpOnly),
            Self::Bp => Some(Ablation::BpOnly),
            Self::Full => Some(Ablation::Full),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Sp => "sp",
            Self::Bp => "bp",
            Self::Full => "full",
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Sp => "+SP",
            Self::Bp => "+BP",
            Self::Full => "+BP+BA",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "none" => Ok(Self::Baseline),
            "sp" => Ok(Self::Sp),
            "bp" => Ok(Self::Bp),
            "full" | "bp+ba" => Ok(Self::Full),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (baseline, sp, bp, full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Square input side in pixels.
    pub resolution: usize,
    pub levels: usize,
    pub width: usize,
    /// Channels of the full-resolution stem.
    pub stem_channels: usize,
    /// `BN -> ReLU -> Conv3x3` blocks per backbone stage and per head.
    pub depth: usize,
    pub classes: usize,
    pub variant: Variant,
    pub fusion: BaFusion,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            levels: 3,
            width: 32,
            stem_channels: 8,
            depth: 1,
            classes: 3,
            variant: Variant::Full,
            fusion: BaFusion::Concat,
        }
    }
}

impl DetectorConfig {
    pub const KEYS: [&'static str; 8] = [
        "resolution",
        "levels",
        "width",
        "stem_channels",
        "depth",
        "classes",
        "variant",
        "ba_mode",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.width == 0 || self.stem_channels == 0 || self.depth == 0 || self.classes == 0 {
            return Err(Error::Config("levels, width, stem_channels, depth and classes must be positive".into()));
        }
        let step = 1usize << (self.levels + 1);
        if self.resolution == 0 || self.resolution % step != 0 {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of {step} for {} levels",
                self.resolution, self.levels
            )));
        }
        Ok(())
    }

    /// Stride of level `l` (0-based).
    pub fn stride(&self, l: usize) -> usize {
        1 << (l + 2)
    }

    pub fn strides(&self) -> Vec<usize> {
        (0..self.levels).map(|l| self.stride(l)).collect()
    }

    /// Channels of one head output: objectness, four box offsets, class logits.
    pub fn head_channels(&self) -> usize {
        5 + self.classes
    }

    pub fn lim(&self) -> Option<LimConfig> {
        self.variant.ablation().map(|ablation| LimConfig {
            levels: self.levels,
            width: self.width,
            fusion: self.fusion,
            ablation,
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "resolution" => self.resolution = parse_value(key, v)?,
            "levels" => self.levels = parse_value(key, v)?,
            "width" => self.width = parse_value(key, v)?,
            "stem_channels" => self.stem_channels = parse_value(key, v)?,
            "depth" => self.depth = parse_value(key, v)?,
            "classes" => self.classes = parse_value(key, v)?,
            "variant" => self.variant = v.parse()?,
            "ba_mode" => self.fusion = v.parse()?,
            _ => return Err(Error::Config(format!("unknown detector key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        let fusion = match self.fusion {
            BaFusion::Concat => "concat",
            BaFusion::MaxFuse => "max-fuse",
        };
        format!(
            "resolution = {}\nlevels = {}\nwidth = {}\nstem_channels = {}\ndepth = {}\nclasses = {}\nvariant = {}\nba_mode = {}\n",
            self.resolution, self.levels, self.width, self.stem_channels, self.depth, self.classes, self.variant, fusion
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text, &Self::KEYS)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Held-out mAP is measured every this many steps (and after the last).
    pub eval_every: usize,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            steps: 2000,
            seed: 1,
            eval_every: 250,
            score_threshold: 0.05,
            nms_iou: 0.5,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] = [
        "learning_rate",
        "momentum",
        "weight_decay",
        "batch_size",
        "steps",
        "seed",
        "eval_every",
        "score_threshold",
        "nms_iou",
    ];

    pub fn validate(&self) -> Result<()> {
        let rates = [self.learning_rate, self.momentum, self.weight_decay];
        if rates.iter().any(|v| !v.is_finite() || *v <= 0.0) || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config(
                "learning_rate, momentum, weight_decay, batch_size and steps must be positive".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "steps" => self.steps = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "eval_every" => self.eval_every = parse_value(key, v)?,
            "score_threshold" => self.score_threshold = parse_value(key, v)?,
            "nms_iou" => self.nms_iou = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let t = TrainConfig::default();
        assert_eq!((t.learning_rate, t.momentum, t.weight_decay, t.batch_size), (1e-4, 0.9, 5e-4, 32));
        let d = DetectorConfig::default();
        assert_eq!((d.resolution, d.levels, d.width), (128, 3, 32));
        assert_eq!(d.strides(), vec![4, 8, 16]);
        d.validate().unwrap();
    }

    #[test]
    fn key_value_round_trip() {
        let cfg = DetectorConfig {
            resolution: 64,
            width: 16,
            variant: Variant::Bp,
            fusion: BaFusion::MaxFuse,
            ..DetectorConfig::default()
        };
        assert_eq!(DetectorConfig::from_key_values(&cfg.to_key_values()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_list_valid_ones() {
        let err = parse_key_values("levels = 3\nlevles = 2\n", &DetectorConfig::KEYS).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("levles") && msg.contains("line 2") && msg.contains("resolution, levels"));
        assert!(parse_key_values("a = 1\na = 2", &["a"]).is_err());
        assert!(parse_key_values("just text", &["a"]).is_err());
    }

    #[test]
    fn resolution_must_divide() {
        let cfg = DetectorConfig {
            resolution: 72,
            ..DetectorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
