//! Dense bidirectional propagation across a feature pyramid.
//!
//! Level 1 is the finest map; every level above halves both spatial extents.
//!
//! * Top-down: `A[l] = V(F[l]) + sum_{m=1..L-l} up_m(A[l+m])`, computed from
//!   `l = L` down to 1. Each `A[l+m]` already carries everything above it, so the
//!   summation is dense and nearer levels are counted more than once.
//! * Bottom-up: `Ct[l] = V(B[l]) + sum_{m=1..l-1} down_m(Ct[l-m])`, computed
//!   from `l = 1` up to `L`.
//! * Residual: `C[l] = Ct[l] + F[l]` (through a 1x1 projection when the backbone
//!   width differs from the pyramid width).
//!
//! `up_m` replicates over `2^m x 2^m` blocks and `down_m` is `m` rounds of 2x2 max
//! pooling (see [`crate::nn::resample`]).

use crate::autograd::{add, add_many, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{conv2d_op, downsample_op, upsample_op, ConvVars, ConvWeights};
use crate::params::{Binding, ConvParam, ParamStore};
use crate::tensor::{Real, Tensor4};

/// Ordered multi-scale feature maps, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T> {
    levels: Vec<Tensor4<T>>,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn new(levels: Vec<Tensor4<T>>) -> Result<Self> {
        let shapes: Vec<_> = levels.iter().map(|t| (t.shape().n, t.shape().h, t.shape().w)).collect();
        validate_extents(&shapes)?;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Tensor4<T>] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Tensor4<T> {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn into_levels(self) -> Vec<Tensor4<T>> {
        self.levels
    }

    pub fn channels(&self) -> Vec<usize> {
        self.levels.iter().map(|t| t.shape().c).collect()
    }

    pub fn map(&self, f: impl Fn(&Tensor4<T>) -> Tensor4<T>) -> Self {
        Self {
            levels: self.levels.iter().map(f).collect(),
        }
    }

    /// Records each level as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, differentiable: bool) -> Vec<Var> {
        self.levels
            .iter()
            .map(|t| {
                if differentiable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn from_tape(tape: &Tape<T>, vars: &[Var]) -> Result<Self> {
        Self::new(vars.iter().map(|&v| tape.value(v).clone()).collect())
    }
}

/// Checks `(n, h, w)` extents of consecutive levels: shared batch, exact halving.
pub fn validate_extents(levels: &[(usize, usize, usize)]) -> Result<()> {
    let Some(&(n0, h0, w0)) = levels.first() else {
        return Err(Error::Pyramid("at least one level is required".into()));
    };
    let factor = 1usize << (levels.len() - 1);
    if h0 % factor != 0 || w0 % factor != 0 {
        return Err(Error::NotDivisible {
            op: "feature pyramid",
            h: h0,
            w: w0,
            factor,
        });
    }
    for (l, &(n, h, w)) in levels.iter().enumerate() {
        if n != n0 {
            return Err(Error::Pyramid(format!("level {} has batch {n}, level 1 has {n0}", l + 1)));
        }
        let (eh, ew) = (h0 >> l, w0 >> l);
        if (h, w) != (eh, ew) {
            return Err(Error::Pyramid(format!(
                "level {} is {h}x{w}, expected {eh}x{ew}",
                l + 1
            )));
        }
    }
    Ok(())
}

fn validate_vars<T: Real>(tape: &Tape<T>, levels: &[Var]) -> Result<()> {
    let shapes: Vec<_> = levels
        .iter()
        .map(|&v| {
            let s = tape.value(v).shape();
            (s.n, s.h, s.w)
        })
        .collect();
    validate_extents(&shapes)
}

fn check_count(what: &str, got: usize, levels: usize) -> Result<()> {
    if got != levels {
        return Err(Error::Pyramid(format!("{what}: {got} projections for {levels} levels")));
    }
    Ok(())
}

/// Dense top-down pathway.
pub fn top_down_dense_op<T: Real>(tape: &mut Tape<T>, backbone: &[Var], lateral: &[ConvVars]) -> Result<Vec<Var>> {
    validate_vars(tape, backbone)?;
    check_count("top-down", lateral.len(), backbone.len())?;
    let levels = backbone.len();
    let mut out: Vec<Option<Var>> = vec![None; levels];
    for l in (0..levels).rev() {
        let mut terms = vec![conv2d_op(tape, backbone[l], lateral[l])?];
        for m in 1..levels - l {
            let higher = out[l + m].expect("higher levels computed first");
            terms.push(upsample_op(tape, higher, m as u32));
        }
        out[l] = Some(add_many(tape, &terms)?);
    }
    Ok(out.into_iter().map(|v| v.expect("all levels computed")).collect())
}

/// Dense bottom-up pathway.
pub fn bottom_up_dense_op<T: Real>(tape: &mut Tape<T>, inputs: &[Var], proj: &[ConvVars]) -> Result<Vec<Var>> {
    validate_vars(tape, inputs)?;
    check_count("bottom-up", proj.len(), inputs.len())?;
    let mut out: Vec<Var> = Vec::with_capacity(inputs.len());
    for l in 0..inputs.len() {
        let mut terms = vec![conv2d_op(tape, inputs[l], proj[l])?];
        for m in 1..=l {
            terms.push(downsample_op(tape, out[l - m], m as u32)?);
        }
        out.push(add_many(tape, &terms)?);
    }
    Ok(out)
}

/// Adds the backbone features back onto the bottom-up output, level by level.
pub fn residual_combine_op<T: Real>(
    tape: &mut Tape<T>,
    ct: &[Var],
    backbone: &[Var],
    output: &[Option<ConvVars>],
) -> Result<Vec<Var>> {
    if ct.len() != backbone.len() {
        return Err(Error::Pyramid(format!(
            "residual: {} pathway levels vs {} backbone levels",
            ct.len(),
            backbone.len()
        )));
    }
    let mut out = Vec::with_capacity(ct.len());
    for (l, (&c, &f)) in ct.iter().zip(backbone).enumerate() {
        let (cs, fs) = (tape.value(c).shape(), tape.value(f).shape());
        if (cs.n, cs.h, cs.w) != (fs.n, fs.h, fs.w) {
            return Err(Error::ShapeMismatch {
                op: "residual_combine",
                lhs: cs,
                rhs: fs,
            });
        }
        let skip = match output.get(l).copied().flatten() {
            Some(p) => conv2d_op(tape, f, p)?,
            None if cs.c == fs.c => f,
            None => {
                return Err(Error::ChannelMismatch {
                    op: "residual_combine",
                    expected: cs.c,
                    actual: fs.c,
                })
            }
        };
        out.push(add(tape, c, skip)?);
    }
    Ok(out)
}

/// Learnable 1x1 projections of both pathways and the optional residual projection.
#[derive(Clone, Debug)]
pub struct LimParams {
    /// Top-down lateral projections, backbone width -> pyramid width.
    pub lateral: Vec<ConvParam>,
    /// Bottom-up projections consuming the boundary-activated maps; empty when
    /// the bottom-up pathway is disabled.
    pub bottom_up: Vec<ConvParam>,
    /// Residual projections, present only where backbone width != pyramid width.
    pub output: Vec<Option<ConvParam>>,
}

#[derive(Clone, Debug)]
pub struct LimVars {
    pub lateral: Vec<ConvVars>,
    pub bottom_up: Vec<ConvVars>,
    pub output: Vec<Option<ConvVars>>,
}

impl LimParams {
    /// Registers fan-in initialized projections under `prefix`.
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        backbone_channels: &[usize],
        width: usize,
        bottom_up_in: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut lateral = Vec::new();
        let mut bottom_up = Vec::new();
        let mut output = Vec::new();
        for (l, &c) in backbone_channels.iter().enumerate() {
            let s = seed.wrapping_add(1000 * l as u64);
            lateral.push(ConvParam::init(store, &format!("{prefix}.lateral{}", l + 1), width, c, 1, s)?);
            if let Some(cin) = bottom_up_in {
                bottom_up.push(ConvParam::init(store, &format!("{prefix}.bottom_up{}", l + 1), width, cin, 1, s + 1)?);
            }
            output.push(if c == width {
                None
            } else {
                Some(ConvParam::init(store, &format!("{prefix}.output{}", l + 1), width, c, 1, s + 2)?)
            });
        }
        Ok(Self {
            lateral,
            bottom_up,
            output,
        })
    }

    pub fn vars(&self, b: &Binding) -> LimVars {
        LimVars {
            lateral: self.lateral.iter().map(|p| p.vars(b)).collect(),
            bottom_up: self.bottom_up.iter().map(|p| p.vars(b)).collect(),
            output: self.output.iter().map(|p| p.map(|p| p.vars(b))).collect(),
        }
    }

    /// Overwrites every projection with a channel identity (square ones only).
    pub fn set_identity<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        for p in self.lateral.iter().chain(&self.bottom_up).chain(self.output.iter().flatten()) {
            let s = store.get(p.weight).shape();
            if s.n != s.c {
                return Err(Error::Config(format!("projection {s} is not square")));
            }
            p.set(store, ConvWeights::identity(s.n))?;
        }
        Ok(())
    }
}

fn eval_on_tape<T: Real>(
    store: &ParamStore<T>,
    pyramids: &[&FeaturePyramid<T>],
    f: impl FnOnce(&mut Tape<T>, &Binding, Vec<Vec<Var>>) -> Result<Vec<Var>>,
) -> Result<FeaturePyramid<T>> {
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let bound = pyramids.iter().map(|p| p.bind(&mut tape, false)).collect();
    let out = f(&mut tape, &binding, bound)?;
    FeaturePyramid::from_tape(&tape, &out)
}

/// Value-level top-down pathway.
pub fn top_down_dense<T: Real>(backbone: &FeaturePyramid<T>, store: &ParamStore<T>, p: &LimParams) -> Result<FeaturePyramid<T>> {
    eval_on_tape(store, &[backbone], |tape, b, mut v| {
        top_down_dense_op(tape, &v.remove(0), &p.vars(b).lateral)
    })
}

/// Value-level bottom-up pathway over already boundary-activated maps.
pub fn bottom_up_dense<T: Real>(inputs: &FeaturePyramid<T>, store: &ParamStore<T>, p: &LimParams) -> Result<FeaturePyramid<T>> {
    eval_on_tape(store, &[inputs], |tape, b, mut v| {
        bottom_up_dense_op(tape, &v.remove(0), &p.vars(b).bottom_up)
    })
}

/// Value-level residual combination.
pub fn residual_combine<T: Real>(
    ct: &FeaturePyramid<T>,
    backbone: &FeaturePyramid<T>,
    store: &ParamStore<T>,
    p: &LimParams,
) -> Result<FeaturePyramid<T>> {
    eval_on_tape(store, &[ct, backbone], |tape, b, mut v| {
        let f = v.pop().expect("backbone");
        let c = v.pop().expect("pathway");
        residual_combine_op(tape, &c, &f, &p.vars(b).output)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_params(levels: usize, width: usize) -> (ParamStore<f64>, LimParams) {
        let mut store = ParamStore::new();
        let chans = vec![width; levels];
        let p = LimParams::register(&mut store, "lim", &chans, width, Some(width), 0).unwrap();
        p.set_identity(&mut store).unwrap();
        (store, p)
    }

    fn single_source(levels: usize, top_value: f64) -> FeaturePyramid<f64> {
        let base = 1usize << (levels - 1);
        FeaturePyramid::new(
            (0..levels)
                .map(|l| {
                    let s = base >> l;
                    if l == levels - 1 {
                        Tensor4::full((1, 1, s, s), top_value)
                    } else {
                        Tensor4::zeros((1, 1, s, s))
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pyramid_validation() {
        let ok = FeaturePyramid::<f64>::new(vec![Tensor4::zeros((2, 3, 8, 4)), Tensor4::zeros((2, 5, 4, 2))]);
        assert!(ok.is_ok());
        assert!(FeaturePyramid::<f64>::new(vec![]).is_err());
        assert!(FeaturePyramid::<f64>::new(vec![Tensor4::zeros((1, 1, 6, 6)), Tensor4::zeros((1, 1, 3, 3)), Tensor4::zeros((1, 1, 1, 1))]).is_err());
        assert!(FeaturePyramid::<f64>::new(vec![Tensor4::zeros((1, 1, 4, 4)), Tensor4::zeros((2, 1, 2, 2))]).is_err());
        assert!(FeaturePyramid::<f64>::new(vec![Tensor4::zeros((1, 1, 4, 4)), Tensor4::zeros((1, 1, 2, 1))]).is_err());
    }

    #[test]
    fn top_down_single_level_is_projection() {
        let mut store = ParamStore::new();
        let f = FeaturePyramid::new(vec![Tensor4::<f64>::randn((1, 3, 4, 4), 1, 1.0)]).unwrap();
        let p = LimParams::register(&mut store, "lim", &[3], 2, None, 5).unwrap();
        let a = top_down_dense(&f, &store, &p).unwrap();
        let expected = crate::nn::conv2d(f.level(0), &p.lateral[0].weights(&store)).unwrap();
        assert_eq!(a.level(0), &expected);
    }

    #[test]
    fn top_down_two_levels() {
        let (store, p) = identity_params(2, 1);
        let a = top_down_dense(&single_source(2, 1.0), &store, &p).unwrap();
        assert_eq!(a.level(0), &Tensor4::full((1, 1, 2, 2), 1.0));
    }

    #[test]
    fn top_down_three_levels_counts_dense_paths() {
        let (store, p) = identity_params(3, 1);
        let a = top_down_dense(&single_source(3, 1.0), &store, &p).unwrap();
        assert_eq!(a.level(2), &Tensor4::full((1, 1, 1, 1), 1.0));
        assert_eq!(a.level(1), &Tensor4::full((1, 1, 2, 2), 1.0));
        assert_eq!(a.level(0), &Tensor4::full((1, 1, 4, 4), 2.0));
    }

    #[test]
    fn bottom_up_mirrors_top_down() {
        // A unit source at the finest level reaches level 2 once and level 3 twice.
        let (store, p) = identity_params(3, 1);
        let b = FeaturePyramid::new(vec![
            Tensor4::full((1, 1, 4, 4), 1.0),
            Tensor4::zeros((1, 1, 2, 2)),
            Tensor4::zeros((1, 1, 1, 1)),
        ])
        .unwrap();
        let ct = bottom_up_dense(&b, &store, &p).unwrap();
        assert_eq!(ct.level(0), &Tensor4::full((1, 1, 4, 4), 1.0));
        assert_eq!(ct.level(1), &Tensor4::full((1, 1, 2, 2), 1.0));
        assert_eq!(ct.level(2), &Tensor4::full((1, 1, 1, 1), 2.0));
    }

    #[test]
    fn bottom_up_averaging_projection_on_constants() {
        // Two input channels averaged into one; constant maps stay constant.
        let mut store = ParamStore::new();
        let p = LimParams::register(&mut store, "lim", &[1, 1], 1, Some(2), 0).unwrap();
        for bu in &p.bottom_up {
            let w = ConvWeights::new(Tensor4::full((1, 2, 1, 1), 0.5), Tensor4::zeros((1, 1, 1, 1))).unwrap();
            bu.set(&mut store, w).unwrap();
        }
        let b = FeaturePyramid::new(vec![
            Tensor4::from_fn((1, 2, 2, 2), |_, c, _, _| if c == 0 { 1.0 } else { 3.0 }),
            Tensor4::from_fn((1, 2, 1, 1), |_, c, _, _| if c == 0 { 4.0 } else { 6.0 }),
        ])
        .unwrap();
        let ct = bottom_up_dense(&b, &store, &p).unwrap();
        assert_eq!(ct.level(0), &Tensor4::full((1, 1, 2, 2), 2.0));
        assert_eq!(ct.level(1), &Tensor4::full((1, 1, 1, 1), 5.0 + 2.0));
    }

    #[test]
    fn residual_cases() {
        let (store, p) = identity_params(1, 1);
        let f = FeaturePyramid::new(vec![Tensor4::<f64>::full((1, 1, 1, 1), 2.0)]).unwrap();
        let ct = FeaturePyramid::new(vec![Tensor4::<f64>::full((1, 1, 1, 1), 1.0)]).unwrap();
        assert_eq!(residual_combine(&ct, &f, &store, &p).unwrap().level(0).data(), &[3.0]);

        let zeros = f.map(|t| Tensor4::zeros(t.shape()));
        assert_eq!(residual_combine(&zeros, &f, &store, &p).unwrap(), f);
        assert_eq!(residual_combine(&f, &zeros, &store, &p).unwrap(), f);

        let wrong = FeaturePyramid::new(vec![Tensor4::<f64>::zeros((1, 1, 2, 2))]).unwrap();
        assert!(residual_combine(&wrong, &f, &store, &p).is_err());
    }

    #[test]
    fn residual_projects_mismatched_width() {
        let mut store = ParamStore::new();
        let p = LimParams::register(&mut store, "lim", &[3], 2, None, 9).unwrap();
        assert!(p.output[0].is_some());
        let f = FeaturePyramid::new(vec![Tensor4::<f64>::randn((1, 3, 2, 2), 1, 1.0)]).unwrap();
        let ct = FeaturePyramid::new(vec![Tensor4::<f64>::zeros((1, 2, 2, 2))]).unwrap();
        let c = residual_combine(&ct, &f, &store, &p).unwrap();
        let proj = crate::nn::conv2d(f.level(0), &p.output[0].unwrap().weights(&store)).unwrap();
        assert_eq!(c.level(0), &proj);
    }

    #[test]
    fn top_down_is_linear_in_backbone() {
        let mut store = ParamStore::new();
        let p = LimParams::register(&mut store, "lim", &[2, 2, 2], 3, None, 4).unwrap();
        for l in &p.lateral {
            store.set(l.bias, Tensor4::zeros((1, 3, 1, 1))).unwrap();
        }
        let f = FeaturePyramid::new(vec![
            Tensor4::<f64>::randn((1, 2, 8, 8), 1, 1.0),
            Tensor4::randn((1, 2, 4, 4), 2, 1.0),
            Tensor4::randn((1, 2, 2, 2), 3, 1.0),
        ])
        .unwrap();
        let a = top_down_dense(&f, &store, &p).unwrap();
        let a3 = top_down_dense(&f.map(|t| t.scale(-2.5)), &store, &p).unwrap();
        for (x, y) in a.levels().iter().zip(a3.levels()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u * -2.5 - v).abs() < 1e-12);
            }
        }
    }
}
