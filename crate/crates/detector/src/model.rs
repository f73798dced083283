//! Backbone, optional LIM neck and per-level prediction heads.
//!
//! Backbone: a 3x3 stem at full resolution, then `depth` `BN -> ReLU -> Conv3x3`
//! blocks per scale, each stage preceded by 2x2 max pooling. Levels come out at
//! strides 4, 8, 16, ... with `width` channels. Each head is `depth` blocks, the
//! last mapping `width` channels to `5 + classes` per cell. The neck's final
//! projections start at zero, so a fresh LIM detector computes the same
//! function as the baseline with the same seed.

use lim_core::autograd::{Tape, Var};
use lim_core::lim::lim_forward_op;
use lim_core::nn::{conv2d_op, conv_block_op, downsample_op, BatchStats, NormStats};
use lim_core::params::{BlockParam, BnParam, ConvParam};
use lim_core::{Binding, FeaturePyramid, LimParams, ParamStore, Real, Shape4, Tensor4};

use crate::config::DetectorConfig;
use crate::error::{Error, Result};

/// Prior probability of objectness the head bias starts at.
pub const OBJECTNESS_PRIOR: f64 = 0.01;

/// Parameter layout of a detector; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DetectorConfig,
    stem: ConvParam,
    stages: Vec<Vec<BlockParam>>,
    lim: Option<LimParams>,
    heads: Vec<Vec<BlockParam>>,
}

/// Whether batch norm uses batch statistics (and reports them) or running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Tape handles of one forward pass.
pub struct ForwardPass<T: Real> {
    pub pyramid: Vec<Var>,
    pub neck: Vec<Var>,
    pub heads: Vec<Var>,
    /// Batch statistics to fold into running estimates after a training step.
    pub bn_updates: Vec<(BnParam, BatchStats<T>)>,
}

impl Detector {
    /// Registers all parameters under fresh names, seeded deterministically.
    pub fn init<T: Real>(cfg: &DetectorConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.width;
        let mid = (d / 2).max(1);
        let stem = ConvParam::init(store, "backbone.stem", cfg.stem_channels, 3, 3, seed)?;
        let mut stages = Vec::with_capacity(cfg.levels + 1);
        let mut prev = cfg.stem_channels;
        for s in 0..=cfg.levels {
            let out = if s == 0 { mid } else { d };
            stages.push(stack(store, &format!("backbone.stage{s}"), prev, out, out, cfg.depth, seed + 1 + 10 * s as u64)?);
            prev = out;
        }
        let lim = match cfg.lim() {
            Some(lc) => {
                let p = lc.register(store, "lim", &vec![d; cfg.levels], seed + 100)?;
                let last = if p.bottom_up.is_empty() { &p.lateral } else { &p.bottom_up };
                for conv in last {
                    store.get_mut(conv.weight).data_mut().fill(T::zero());
                }
                Some(p)
            }
            None => None,
        };
        let mut heads = Vec::with_capacity(cfg.levels);
        let prior_logit = -((1.0 - OBJECTNESS_PRIOR) / OBJECTNESS_PRIOR).ln();
        for l in 0..cfg.levels {
            let h = stack(store, &format!("head{}", l + 1), d, d, cfg.head_channels(), cfg.depth, seed + 200 + 10 * l as u64)?;
            let last = h.last().expect("depth is positive");
            store.get_mut(last.conv.bias).data_mut()[0] = T::of(prior_logit);
            heads.push(h);
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            stages,
            lim,
            heads,
        })
    }

    pub fn input_shape(&self, batch: usize) -> Shape4 {
        Shape4::new(batch, 3, self.cfg.resolution, self.cfg.resolution)
    }

    fn check_input(&self, s: Shape4) -> Result<()> {
        let r = self.cfg.resolution;
        if s.c != 3 || s.h != r || s.w != r || s.n == 0 {
            return Err(Error::Resolution {
                expected: format!("(n, 3, {r}, {r})"),
                actual: s.to_string(),
            });
        }
        Ok(())
    }

    fn run_stack<T: Real>(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        b: &Binding,
        mut x: Var,
        blocks: &[BlockParam],
        phase: Phase,
        updates: &mut Vec<(BnParam, BatchStats<T>)>,
    ) -> Result<Var> {
        for p in blocks {
            x = Self::block(tape, store, b, x, p, phase, updates)?;
        }
        Ok(x)
    }

    fn block<T: Real>(
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        b: &Binding,
        x: Var,
        p: &BlockParam,
        phase: Phase,
        updates: &mut Vec<(BnParam, BatchStats<T>)>,
    ) -> Result<Var> {
        let stats = match phase {
            Phase::Train => NormStats::Batch,
            Phase::Eval => NormStats::Running {
                mean: store.get(p.bn.running_mean).data(),
                var: store.get(p.bn.running_var).data(),
            },
        };
        let (y, batch) = conv_block_op(tape, x, p.vars(b), stats)?;
        if let Some(batch) = batch {
            updates.push((p.bn, batch));
        }
        Ok(y)
    }

    /// Backbone levels, finest first.
    pub fn backbone_op<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        b: &Binding,
        images: Var,
        phase: Phase,
        updates: &mut Vec<(BnParam, BatchStats<T>)>,
    ) -> Result<Vec<Var>> {
        self.check_input(tape.value(images).shape())?;
        let mut x = conv2d_op(tape, images, self.stem.vars(b))?;
        x = downsample_op(tape, x, 1)?;
        x = Self::run_stack(tape, store, b, x, &self.stages[0], phase, updates)?;
        let mut levels = Vec::with_capacity(self.cfg.levels);
        for stage in &self.stages[1..] {
            x = downsample_op(tape, x, 1)?;
            x = Self::run_stack(tape, store, b, x, stage, phase, updates)?;
            levels.push(x);
        }
        Ok(levels)
    }

    pub fn forward_op<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        b: &Binding,
        images: Var,
        phase: Phase,
    ) -> Result<ForwardPass<T>> {
        let mut bn_updates = Vec::new();
        let pyramid = self.backbone_op(tape, store, b, images, phase, &mut bn_updates)?;
        let neck = match (&self.lim, self.cfg.lim()) {
            (Some(p), Some(lc)) => lim_forward_op(tape, &pyramid, &p.vars(b), &lc)?,
            _ => pyramid.clone(),
        };
        let mut heads = Vec::with_capacity(neck.len());
        for (x, h) in neck.iter().zip(&self.heads) {
            heads.push(Self::run_stack(tape, store, b, *x, h, phase, &mut bn_updates)?);
        }
        Ok(ForwardPass {
            pyramid,
            neck,
            heads,
            bn_updates,
        })
    }

    /// Head outputs per level, without gradients.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, images: &Tensor4<T>, phase: Phase) -> Result<Vec<Tensor4<T>>> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(images.clone());
        let f = self.forward_op(&mut tape, store, &b, x, phase)?;
        Ok(f.heads.iter().map(|&v| tape.value(v).clone()).collect())
    }
}

/// `depth` blocks `in_c -> mid -> ... -> mid -> out_c`, named `{prefix}.{i}`.
fn stack<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_c: usize,
    mid: usize,
    out_c: usize,
    depth: usize,
    seed: u64,
) -> Result<Vec<BlockParam>> {
    (0..depth)
        .map(|i| {
            let cin = if i == 0 { in_c } else { mid };
            let cout = if i + 1 == depth { out_c } else { mid };
            Ok(BlockParam::init(store, &format!("{prefix}.{i}"), cout, cin, seed + i as u64)?)
        })
        .collect()
}

/// Value-level backbone pass.
pub fn backbone_forward<T: Real>(
    model: &Detector,
    store: &ParamStore<T>,
    images: &Tensor4<T>,
    phase: Phase,
) -> Result<FeaturePyramid<T>> {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let x = tape.constant(images.clone());
    let levels = model.backbone_op(&mut tape, store, &b, x, phase, &mut Vec::new())?;
    Ok(FeaturePyramid::from_tape(&tape, &levels)?)
}
