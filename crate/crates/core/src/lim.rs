//! The lateral inhibition module end to end:
//! top-down dense pass, four-direction boundary activation on every level,
//! bottom-up dense pass, residual combination with the backbone.
//!
//! The per-level loop is evaluated as whole-pyramid passes. Data dependencies
//! are the same, so the results are identical.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::boundary::{ba_aggregate_op, BaFusion};
use crate::error::{Error, Result};
use crate::params::{ParamStore};
use crate::pyramid::{bottom_up_dense_op, residual_combine_op, top_down_dense_op, FeaturePyramid, LimParams, LimVars};
use crate::tensor::Real;

/// Which parts of the module are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    /// Top-down dense propagation only, then the residual.
    SpOnly,
    /// Both pathways, boundary activation bypassed.
    BpOnly,
    /// Both pathways with boundary activation.
    #[default]
    Full,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Self::SpOnly => "sp",
            Self::BpOnly => "bp",
            Self::Full => "bp+ba",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sp" | "sp-only" => Ok(Self::SpOnly),
            "bp" | "bp-only" => Ok(Self::BpOnly),
            "bp+ba" | "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown ablation {other:?} (sp, bp, bp+ba)"))),
        }
    }
}

impl FromStr for BaFusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "max-fuse" | "max" => Ok(Self::MaxFuse),
            other => Err(Error::Config(format!("unknown ba mode {other:?} (concat, max-fuse)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LimConfig {
    pub levels: usize,
    pub width: usize,
    pub fusion: BaFusion,
    pub ablation: Ablation,
}

impl Default for LimConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            width: 32,
            fusion: BaFusion::Concat,
            ablation: Ablation::Full,
        }
    }
}

impl LimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.width == 0 {
            return Err(Error::Config("LIM needs at least one level and positive width".into()));
        }
        Ok(())
    }

    /// Input width of the bottom-up projections, or `None` when that pathway is off.
    pub fn bottom_up_in_channels(&self) -> Option<usize> {
        match (self.ablation, self.fusion) {
            (Ablation::SpOnly, _) => None,
            (Ablation::BpOnly, _) | (Ablation::Full, BaFusion::MaxFuse) => Some(self.width),
            (Ablation::Full, BaFusion::Concat) => Some(4 * self.width),
        }
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, prefix: &str, backbone_channels: &[usize], seed: u64) -> Result<LimParams> {
        self.validate()?;
        if backbone_channels.len() != self.levels {
            return Err(Error::Config(format!(
                "LIM configured for {} levels, backbone provides {}",
                self.levels,
                backbone_channels.len()
            )));
        }
        LimParams::register(store, prefix, backbone_channels, self.width, self.bottom_up_in_channels(), seed)
    }
}

/// Intermediate pyramids of one LIM pass, for inspection and tests.
#[derive(Clone, Debug)]
pub struct LimTrace {
    pub top_down: Vec<Var>,
    pub activated: Vec<Var>,
    pub bottom_up: Vec<Var>,
    pub output: Vec<Var>,
}

pub fn lim_forward_traced<T: Real>(tape: &mut Tape<T>, backbone: &[Var], p: &LimVars, cfg: &LimConfig) -> Result<LimTrace> {
    cfg.validate()?;
    if backbone.len() != cfg.levels {
        return Err(Error::Config(format!(
            "LIM configured for {} levels, pyramid has {}",
            cfg.levels,
            backbone.len()
        )));
    }
    let top_down = top_down_dense_op(tape, backbone, &p.lateral)?;
    let (activated, bottom_up) = match cfg.ablation {
        Ablation::SpOnly => (Vec::new(), top_down.clone()),
        Ablation::BpOnly => (Vec::new(), bottom_up_dense_op(tape, &top_down, &p.bottom_up)?),
        Ablation::Full => {
            let activated: Vec<Var> = top_down.iter().map(|&a| ba_aggregate_op(tape, a, cfg.fusion)).collect();
            let bu = bottom_up_dense_op(tape, &activated, &p.bottom_up)?;
            (activated, bu)
        }
    };
    let output = residual_combine_op(tape, &bottom_up, backbone, &p.output)?;
    Ok(LimTrace {
        top_down,
        activated,
        bottom_up,
        output,
    })
}

pub fn lim_forward_op<T: Real>(tape: &mut Tape<T>, backbone: &[Var], p: &LimVars, cfg: &LimConfig) -> Result<Vec<Var>> {
    Ok(lim_forward_traced(tape, backbone, p, cfg)?.output)
}

/// Value-level LIM pass.
pub fn lim_forward<T: Real>(backbone: &FeaturePyramid<T>, store: &ParamStore<T>, p: &LimParams, cfg: &LimConfig) -> Result<FeaturePyramid<T>> {
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let vars = backbone.bind(&mut tape, false);
    let out = lim_forward_op(&mut tape, &vars, &p.vars(&binding), cfg)?;
    FeaturePyramid::from_tape(&tape, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::ba_aggregate;
    use crate::pyramid::{bottom_up_dense, residual_combine, top_down_dense};
    use crate::tensor::Tensor4;

    fn pyramid(levels: usize, c: usize, base: usize, seed: u64) -> FeaturePyramid<f64> {
        FeaturePyramid::new(
            (0..levels)
                .map(|l| Tensor4::randn((2, c, base >> l, base >> l), seed + l as u64, 1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn full_mode_equals_manual_composition() {
        let cfg = LimConfig {
            levels: 3,
            width: 4,
            ..LimConfig::default()
        };
        let mut store = ParamStore::new();
        let f = pyramid(3, 3, 8, 10);
        let p = cfg.register(&mut store, "lim", &f.channels(), 3).unwrap();
        let out = lim_forward(&f, &store, &p, &cfg).unwrap();

        let a = top_down_dense(&f, &store, &p).unwrap();
        let b = a.map(ba_aggregate);
        let ct = bottom_up_dense(&b, &store, &p).unwrap();
        let manual = residual_combine(&ct, &f, &store, &p).unwrap();
        assert_eq!(out, manual);
    }

    #[test]
    fn all_modes_preserve_extents() {
        for ablation in [Ablation::SpOnly, Ablation::BpOnly, Ablation::Full] {
            for fusion in [BaFusion::Concat, BaFusion::MaxFuse] {
                for levels in 1..=3 {
                    let cfg = LimConfig {
                        levels,
                        width: 3,
                        fusion,
                        ablation,
                    };
                    let f = pyramid(levels, 3, 8, 1);
                    let mut store = ParamStore::new();
                    let p = cfg.register(&mut store, "lim", &f.channels(), 0).unwrap();
                    let out = lim_forward(&f, &store, &p, &cfg).unwrap();
                    for (o, i) in out.levels().iter().zip(f.levels()) {
                        assert_eq!(o.shape(), i.shape());
                    }
                }
            }
        }
    }

    #[test]
    fn single_level_identity_hand_trace() {
        // L = 1, square identity projections (max-fuse keeps the bottom-up
        // projection d -> d). A = F, Ct = max of the four scans of F, C = Ct + F.
        // Scans of [1 0; 0 2]: right [1 0; 2 2], left [1 1; 0 2],
        // bottom [1 2; 0 2], top [1 0; 1 2]; their max is [1 2; 2 2].
        let cfg = LimConfig {
            levels: 1,
            width: 1,
            fusion: BaFusion::MaxFuse,
            ablation: Ablation::Full,
        };
        let f = FeaturePyramid::new(vec![Tensor4::<f64>::from_f64s((1, 1, 2, 2), &[1.0, 0.0, 0.0, 2.0]).unwrap()]).unwrap();
        let mut store = ParamStore::new();
        let p = cfg.register(&mut store, "lim", &[1], 0).unwrap();
        p.set_identity(&mut store).unwrap();
        let out = lim_forward(&f, &store, &p, &cfg).unwrap();
        assert_eq!(out.level(0).data(), &[2.0, 2.0, 2.0, 4.0]);
        // Dominance of the scans gives C >= 2F for non-negative input.
        for (o, i) in out.level(0).data().iter().zip(f.level(0).data()) {
            assert!(*o >= 2.0 * i);
        }
    }

    #[test]
    fn config_mismatch_rejected() {
        let cfg = LimConfig {
            levels: 2,
            width: 2,
            ..LimConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        assert!(cfg.register(&mut store, "lim", &[2], 0).is_err());
        let f = pyramid(1, 2, 4, 0);
        let p = LimConfig { levels: 1, ..cfg }.register(&mut store, "x", &[2], 0).unwrap();
        assert!(lim_forward(&f, &store, &p, &cfg).is_err());
    }

    #[test]
    fn parse_modes() {
        assert_eq!("bp+ba".parse::<Ablation>().unwrap(), Ablation::Full);
        assert_eq!("sp".parse::<Ablation>().unwrap(), Ablation::SpOnly);
        assert!("xx".parse::<Ablation>().is_err());
        assert_eq!("max-fuse".parse::<BaFusion>().unwrap(), BaFusion::MaxFuse);
    }
}
