//! Central-difference gradient checking.
//!
//! [`finite_diff_grad`] is the oracle. [`run_check`] compares it with the tape's
//! analytic gradients on random instances of an [`OpCheck`]: the scalar probed is
//! `sum(r * y)` for a fixed random `r`, so every output element contributes.
//!
//! Non-smooth kernels report their distance to a kink on verification tapes;
//! instances closer than `min_margin` are redrawn. As a second guard, an element
//! is skipped when perturbing it flips any discrete decision (a ReLU mask bit or
//! a max selection), since the difference quotient then straddles a kink.

use crate::autograd::{weighted_sum, Tape, Var};
use crate::boundary::{ba_aggregate_op, directional_max_scan_op, BaFusion, ScanDirection};
use crate::error::Result;
use crate::lim::{lim_forward_op, Ablation, LimConfig};
use crate::nn::{
    batch_norm_op, conv2d_op, conv_block_op, downsample_op, relu_op, upsample_op, BlockVars, BnVars, ConvVars,
    NormStats,
};
use crate::pyramid::{bottom_up_dense_op, residual_combine_op, top_down_dense_op};
use crate::tensor::{Shape4, Tensor4};

/// Result of [`finite_diff_grad`].
#[derive(Clone, Debug)]
pub struct FiniteDiff {
    pub grad: Tensor4<f64>,
    /// Flat indices whose difference quotient could not be formed.
    pub invalid: Vec<usize>,
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every element `i`.
///
/// Elements where either evaluation is non-finite are reported in `invalid`
/// and left at zero.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor4<f64>) -> f64, x: &Tensor4<f64>, eps: f64) -> FiniteDiff {
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros(x.shape());
    let mut invalid = Vec::new();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if plus.is_finite() && minus.is_finite() {
            grad[i] = (plus - minus) / (2.0 * eps);
        } else {
            invalid.push(i);
        }
    }
    FiniteDiff { grad, invalid }
}

/// A differentiable computation and a sampler of its inputs.
pub struct OpCheck {
    pub name: &'static str,
    /// Inputs for one random instance, keyed by instance seed.
    pub sample: Box<dyn Fn(u64) -> Vec<Tensor4<f64>>>,
    /// Records the computation on the tape; `inputs` follow `sample`'s order.
    pub build: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>,
}

impl OpCheck {
    pub fn new(
        name: &'static str,
        sample: impl Fn(u64) -> Vec<Tensor4<f64>> + 'static,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            sample: Box::new(sample),
            build: Box::new(build),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub instances: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Instances with any input closer than this to a kink are redrawn.
    pub min_margin: f64,
    /// Lower bound on the relative-error denominator, as a fraction of the
    /// largest analytic gradient magnitude of the input (at least 1).
    pub scale_floor: f64,
    pub seed: u64,
    /// Upper bound on draws per requested instance.
    pub max_draws_per_instance: usize,
    /// Name of a backward rule to corrupt (negative control).
    pub fault: Option<String>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            eps: 1e-5,
            tolerance: 1e-4,
            min_margin: 1e-3,
            scale_floor: 1e-4,
            seed: 0,
            max_draws_per_instance: 20,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub instances: usize,
    pub rejected: usize,
    pub elements: usize,
    pub skipped_elements: usize,
    pub tolerance: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance && self.instances > 0
    }
}

struct Evaluation {
    loss: f64,
    signature: u64,
    margin: f64,
}

fn evaluate(op: &OpCheck, inputs: &[Tensor4<f64>], probe: &Tensor4<f64>) -> Result<(Evaluation, Tape<f64>, Vec<Var>, Var)> {
    let mut tape = Tape::for_verification();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (op.build)(&mut tape, &vars)?;
    let loss_var = weighted_sum(&mut tape, out, probe.clone())?;
    let ev = Evaluation {
        loss: tape.value(loss_var)[0],
        signature: tape.decision_signature(),
        margin: tape.kink_margin(),
    };
    Ok((ev, tape, vars, loss_var))
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic and central-difference gradients over random instances.
pub fn run_check(op: &OpCheck, cfg: &CheckConfig) -> Result<OpReport> {
    let mut report = OpReport {
        name: op.name,
        max_rel_err: 0.0,
        instances: 0,
        rejected: 0,
        elements: 0,
        skipped_elements: 0,
        tolerance: cfg.tolerance,
    };
    let max_draws = cfg.instances * cfg.max_draws_per_instance;
    let mut draw = 0u64;
    while report.instances < cfg.instances && (draw as usize) < max_draws {
        let seed = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(draw);
        draw += 1;
        let inputs = (op.sample)(seed);
        let shape_probe = {
            let mut t = Tape::<f64>::new();
            let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
            let out = (op.build)(&mut t, &vars)?;
            t.value(out).shape()
        };
        let probe = Tensor4::randn(shape_probe, seed ^ 0x5eed, 1.0);
        let (base, mut tape, vars, loss) = evaluate(op, &inputs, &probe)?;
        if base.margin < cfg.min_margin {
            report.rejected += 1;
            continue;
        }
        if let Some(fault) = &cfg.fault {
            tape.inject_fault(fault.clone());
        }
        let grads = tape.backward(loss);
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], input);
            let mut perturbed = inputs.clone();
            let mut flipped = Vec::new();
            let mut failure = None;
            let fd = finite_diff_grad(
                |x| {
                    perturbed[k] = x.clone();
                    match evaluate(op, &perturbed, &probe) {
                        Ok((ev, ..)) => {
                            if ev.signature != base.signature {
                                flipped.push(());
                                f64::NAN
                            } else {
                                ev.loss
                            }
                        }
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                },
                input,
                cfg.eps,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let invalid: std::collections::HashSet<usize> = fd.invalid.iter().copied().collect();
            let scale = analytic.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let floor = cfg.scale_floor * scale;
            for i in 0..input.len() {
                if invalid.contains(&i) {
                    report.skipped_elements += 1;
                    continue;
                }
                report.elements += 1;
                let e = rel_err(analytic[i], fd.grad[i], floor);
                if e > report.max_rel_err || e.is_nan() {
                    report.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
                }
            }
        }
        report.instances += 1;
    }
    Ok(report)
}

fn randn(shape: (usize, usize, usize, usize), seed: u64) -> Tensor4<f64> {
    Tensor4::randn(Shape4::from(shape), seed, 1.0)
}

fn conv_vars(v: &[Var], at: usize) -> ConvVars {
    ConvVars {
        weight: v[at],
        bias: v[at + 1],
    }
}

fn pyramid_sample(seed: u64, levels: usize, c: usize, base: usize) -> Vec<Tensor4<f64>> {
    (0..levels)
        .map(|l| randn((1, c, base >> l, base >> l), seed * 31 + l as u64))
        .collect()
}

fn conv_sample(seed: u64, levels: usize, out: usize, inp: usize, base: u64) -> Vec<Tensor4<f64>> {
    let mut v = Vec::new();
    for l in 0..levels as u64 {
        v.push(randn((out, inp, 1, 1), seed * 97 + base + 2 * l).scale(0.5));
        v.push(randn((1, out, 1, 1), seed * 97 + base + 2 * l + 1).scale(0.1));
    }
    v
}

/// Gradient checks for every differentiable kernel in this crate.
pub fn core_checks() -> Vec<OpCheck> {
    let mut checks = vec![
        OpCheck::new(
            "conv2d_1x1",
            |s| vec![randn((2, 3, 5, 4), s), randn((4, 3, 1, 1), s + 1), randn((1, 4, 1, 1), s + 2)],
            |t, v| conv2d_op(t, v[0], conv_vars(v, 1)),
        ),
        OpCheck::new(
            "conv2d_3x3",
            |s| vec![randn((2, 3, 5, 4), s), randn((4, 3, 3, 3), s + 1), randn((1, 4, 1, 1), s + 2)],
            |t, v| conv2d_op(t, v[0], conv_vars(v, 1)),
        ),
        OpCheck::new(
            "batch_norm",
            |s| vec![randn((2, 3, 3, 4), s), randn((1, 3, 1, 1), s + 1), randn((1, 3, 1, 1), s + 2)],
            |t, v| {
                let p = BnVars { gamma: v[1], beta: v[2] };
                Ok(batch_norm_op(t, v[0], p, NormStats::Batch)?.0)
            },
        ),
        OpCheck::new("relu", |s| vec![randn((2, 3, 4, 4), s)], |t, v| Ok(relu_op(t, v[0]))),
        OpCheck::new("upsample_nearest", |s| vec![randn((2, 2, 3, 2), s)], |t, v| {
            let a = upsample_op(t, v[0], 1);
            Ok(upsample_op(t, a, 2))
        }),
        OpCheck::new("downsample_max", |s| vec![randn((2, 2, 8, 4), s)], |t, v| {
            let a = downsample_op(t, v[0], 1)?;
            let b = downsample_op(t, v[0], 2)?;
            let up = upsample_op(t, b, 1);
            crate::autograd::add(t, a, up)
        }),
    ];
    for d in ScanDirection::ALL {
        let name = match d {
            ScanDirection::FromRight => "scan_from_right",
            ScanDirection::FromLeft => "scan_from_left",
            ScanDirection::FromBottom => "scan_from_bottom",
            ScanDirection::FromTop => "scan_from_top",
        };
        checks.push(OpCheck::new(
            name,
            |s| vec![randn((2, 2, 4, 5), s)],
            move |t, v| Ok(directional_max_scan_op(t, v[0], d)),
        ));
    }
    checks.extend([
        OpCheck::new(
            "ba_aggregate",
            |s| vec![randn((1, 2, 4, 5), s)],
            |t, v| Ok(ba_aggregate_op(t, v[0], BaFusion::Concat)),
        ),
        OpCheck::new(
            "ba_aggregate_max_fuse",
            |s| vec![randn((1, 2, 4, 5), s)],
            |t, v| Ok(ba_aggregate_op(t, v[0], BaFusion::MaxFuse)),
        ),
        OpCheck::new(
            "conv_block",
            |s| {
                vec![
                    randn((1, 4, 6, 6), s),
                    randn((1, 4, 1, 1), s + 1),
                    randn((1, 4, 1, 1), s + 2),
                    randn((4, 4, 3, 3), s + 3).scale(0.3),
                    randn((1, 4, 1, 1), s + 4),
                ]
            },
            |t, v| {
                let p = BlockVars {
                    bn: BnVars { gamma: v[1], beta: v[2] },
                    conv: conv_vars(v, 3),
                };
                Ok(conv_block_op(t, v[0], p, NormStats::Batch)?.0)
            },
        ),
        OpCheck::new(
            "top_down_dense",
            |s| {
                let mut v = pyramid_sample(s, 3, 2, 8);
                v.extend(conv_sample(s, 3, 3, 2, 1000));
                v
            },
            |t, v| {
                let lateral: Vec<ConvVars> = (0..3).map(|l| conv_vars(v, 3 + 2 * l)).collect();
                let out = top_down_dense_op(t, &v[..3], &lateral)?;
                flatten_levels(t, &out)
            },
        ),
        OpCheck::new(
            "bottom_up_dense",
            |s| {
                let mut v = pyramid_sample(s, 3, 8, 8);
                v.extend(conv_sample(s, 3, 2, 8, 2000));
                v
            },
            |t, v| {
                let proj: Vec<ConvVars> = (0..3).map(|l| conv_vars(v, 3 + 2 * l)).collect();
                let out = bottom_up_dense_op(t, &v[..3], &proj)?;
                flatten_levels(t, &out)
            },
        ),
        OpCheck::new(
            "residual_combine",
            |s| {
                // Level 1 matches widths, level 2 needs a projection.
                let mut v = vec![
                    randn((1, 3, 4, 4), s),
                    randn((1, 3, 2, 2), s + 1),
                    randn((1, 3, 4, 4), s + 2),
                    randn((1, 5, 2, 2), s + 3),
                ];
                v.extend(conv_sample(s, 1, 3, 5, 3000));
                v
            },
            |t, v| {
                let out = residual_combine_op(t, &v[..2], &v[2..4], &[None, Some(conv_vars(v, 4))])?;
                flatten_levels(t, &out)
            },
        ),
    ]);
    for (name, ablation, fusion) in [
        ("lim_forward", Ablation::Full, BaFusion::Concat),
        ("lim_forward_max_fuse", Ablation::Full, BaFusion::MaxFuse),
        ("lim_forward_bp", Ablation::BpOnly, BaFusion::Concat),
        ("lim_forward_sp", Ablation::SpOnly, BaFusion::Concat),
    ] {
        let cfg = LimConfig {
            levels: 2,
            width: 4,
            fusion,
            ablation,
        };
        let bu_in = cfg.bottom_up_in_channels();
        checks.push(OpCheck::new(
            name,
            move |s| {
                let mut v = pyramid_sample(s, 2, 4, 8);
                v.extend(conv_sample(s, 2, 4, 4, 4000));
                if let Some(cin) = bu_in {
                    v.extend(conv_sample(s, 2, 4, cin, 5000));
                }
                v
            },
            move |t, v| {
                let lateral: Vec<ConvVars> = (0..2).map(|l| conv_vars(v, 2 + 2 * l)).collect();
                let bottom_up: Vec<ConvVars> = if bu_in.is_some() {
                    (0..2).map(|l| conv_vars(v, 6 + 2 * l)).collect()
                } else {
                    Vec::new()
                };
                let vars = crate::pyramid::LimVars {
                    lateral,
                    bottom_up,
                    output: vec![None, None],
                };
                let out = lim_forward_op(t, &v[..2], &vars, &cfg)?;
                flatten_levels(t, &out)
            },
        ));
    }
    checks
}

/// Joins pyramid levels into one probe-able output by summing per-level
/// weighted sums, keeping each level's gradient independent.
pub fn flatten_levels(t: &mut Tape<f64>, levels: &[Var]) -> Result<Var> {
    let mut scalars = Vec::with_capacity(levels.len());
    for (l, &v) in levels.iter().enumerate() {
        let w = Tensor4::randn(t.value(v).shape(), 0xf1a7 + l as u64, 1.0);
        scalars.push(weighted_sum(t, v, w)?);
    }
    crate::autograd::add_many(t, &scalars)
}
