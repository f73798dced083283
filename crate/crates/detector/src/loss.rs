//! Detection loss: binary cross-entropy on objectness over every cell, plus
//! cross-entropy on class logits and smooth-L1 on box offsets over positive
//! cells, summed and divided by the batch size.

use lim_core::autograd::{Backward, Tape, Var};
use lim_core::{Real, Tensor4};

use crate::error::{Error, Result};
use crate::targets::Targets;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub objectness: f64,
    pub class: f64,
    pub boxes: f64,
    pub positives: usize,
}

/// `ln(1 + e^z) - t z`, evaluated stably, and its derivative.
fn bce_with_logits(z: f64, t: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
    let sig = 1.0 / (1.0 + (-z).exp());
    (loss, sig - t)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

struct Evaluated<T> {
    parts: LossBreakdown,
    grads: Vec<Tensor4<T>>,
    margin: f64,
    decisions: Vec<u64>,
}

fn evaluate<T: Real>(heads: &[&Tensor4<T>], targets: &Targets, classes: usize) -> Result<Evaluated<T>> {
    if heads.len() != targets.levels.len() {
        return Err(Error::Config(format!(
            "{} head maps for {} target levels",
            heads.len(),
            targets.levels.len()
        )));
    }
    let channels = 5 + classes;
    let batch = targets.levels.first().map_or(1, |l| l.batch).max(1);
    let mut parts = LossBreakdown::default();
    let mut grads = Vec::with_capacity(heads.len());
    let mut margin = f64::INFINITY;
    let mut decisions = Vec::new();
    let scale = 1.0 / batch as f64;
    for (pred, lt) in heads.iter().zip(&targets.levels) {
        let s = pred.shape();
        if (s.n, s.c, s.h, s.w) != (lt.batch, channels, lt.h, lt.w) {
            return Err(Error::Config(format!(
                "head map {s} does not match targets ({}, {channels}, {}, {})",
                lt.batch, lt.h, lt.w
            )));
        }
        let plane = s.h * s.w;
        let x = pred.data();
        let mut g = vec![T::zero(); x.len()];
        let at = |n: usize, c: usize, p: usize| (n * channels + c) * plane + p;
        for n in 0..s.n {
            for p in 0..plane {
                let target = lt.cells[n * plane + p];
                let i = at(n, 0, p);
                let (l, d) = bce_with_logits(x[i].as_f64(), if target.is_some() { 1.0 } else { 0.0 });
                parts.objectness += l;
                g[i] = T::of(d * scale);
                let Some(t) = target else { continue };
                parts.positives += 1;
                for (k, &goal) in t.offsets.iter().enumerate() {
                    let i = at(n, 1 + k, p);
                    let diff = x[i].as_f64() - goal;
                    let (l, d) = smooth_l1(diff);
                    parts.boxes += l;
                    g[i] = T::of(d * scale);
                    margin = margin.min((diff.abs() - 1.0).abs());
                    decisions.push(u64::from(diff.abs() < 1.0));
                }
                let logits: Vec<f64> = (0..classes).map(|k| x[at(n, 5 + k, p)].as_f64()).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
                parts.class += m + z.ln() - logits[t.class];
                for (k, v) in logits.iter().enumerate() {
                    let p_k = (v - m).exp() / z;
                    let onehot = if k == t.class { 1.0 } else { 0.0 };
                    g[at(n, 5 + k, p)] = T::of((p_k - onehot) * scale);
                }
            }
        }
        grads.push(Tensor4::from_vec(s, g)?);
    }
    parts.objectness *= scale;
    parts.class *= scale;
    parts.boxes *= scale;
    parts.total = parts.objectness + parts.class + parts.boxes;
    Ok(Evaluated {
        parts,
        grads,
        margin,
        decisions,
    })
}

struct DetectionLossRule<T> {
    grads: Vec<Tensor4<T>>,
}

impl<T: Real> Backward<T> for DetectionLossRule<T> {
    fn name(&self) -> &'static str {
        "detection_loss"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor4<T>],
        _output: &Tensor4<T>,
        upstream: &Tensor4<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor4<T>>> {
        let u = upstream[0];
        self.grads
            .iter()
            .zip(wanted)
            .map(|(g, &w)| w.then(|| g.map(|v| v * u)))
            .collect()
    }
}

/// Records the loss as a scalar node over all head maps.
pub fn detection_loss_op<T: Real>(
    tape: &mut Tape<T>,
    heads: &[Var],
    targets: &Targets,
    classes: usize,
) -> Result<(Var, LossBreakdown)> {
    let ev = {
        let values = tape.values(heads);
        evaluate(&values, targets, classes)?
    };
    if tape.verifying() {
        tape.note_margin(ev.margin);
        tape.note_decisions(ev.decisions);
    }
    let value = Tensor4::full((1, 1, 1, 1), T::of(ev.parts.total));
    let out = tape.record(value, heads, DetectionLossRule { grads: ev.grads });
    Ok((out, ev.parts))
}

pub fn detection_loss<T: Real>(heads: &[Tensor4<T>], targets: &Targets, classes: usize) -> Result<LossBreakdown> {
    let refs: Vec<&Tensor4<T>> = heads.iter().collect();
    Ok(evaluate(&refs, targets, classes)?.parts)
}
