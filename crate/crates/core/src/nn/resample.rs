//! Power-of-two resampling between pyramid levels: nearest-neighbour replication
//! up, repeated 2x2 max pooling down.

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Replicates every pixel over a `2^m x 2^m` block.
pub fn upsample_nearest<T: Real>(x: &Tensor4<T>, m: u32) -> Tensor4<T> {
    assert!(m >= 1, "upsample factor exponent must be positive");
    let f = 1usize << m;
    let s = x.shape();
    let os = s.with_spatial(s.h * f, s.w * f);
    let mut out = Tensor4::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..os.h {
                let srow = &src[(y / f) * s.w..][..s.w];
                let drow = &mut dst[y * os.w..][..os.w];
                for (block, &v) in drow.chunks_exact_mut(f).zip(srow) {
                    block.fill(v);
                }
            }
        }
    }
    out
}

/// Sums the upstream gradient over each replicated block.
pub fn upsample_nearest_backward<T: Real>(upstream: &Tensor4<T>, m: u32) -> Tensor4<T> {
    let f = 1usize << m;
    let us = upstream.shape();
    let s = us.with_spatial(us.h / f, us.w / f);
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = upstream.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..us.h {
                let srow = &src[y * us.w..][..us.w];
                let drow = &mut dst[(y / f) * s.w..][..s.w];
                for (d, block) in drow.iter_mut().zip(srow.chunks_exact(f)) {
                    *d += block.iter().fold(T::zero(), |a, &v| a + v);
                }
            }
        }
    }
    out
}

/// One 2x2 stride-2 pooling stage. Returns the pooled map, the flat input index
/// chosen for each output (first row-major maximum), and the smallest gap
/// between a window's maximum and its runner-up.
fn pool2<T: Real>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<usize>, f64) {
    let s = x.shape();
    let os = s.with_spatial(s.h / 2, s.w / 2);
    let mut out = Tensor4::zeros(os);
    let mut arg = Vec::with_capacity(os.len());
    let mut margin = f64::INFINITY;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.offset(n, c, 0, 0);
            let src = x.plane(n, c);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let cand = [
                        (2 * oy) * s.w + 2 * ox,
                        (2 * oy) * s.w + 2 * ox + 1,
                        (2 * oy + 1) * s.w + 2 * ox,
                        (2 * oy + 1) * s.w + 2 * ox + 1,
                    ];
                    let mut best = cand[0];
                    for &i in &cand[1..] {
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    let top = src[best];
                    for &i in &cand {
                        if i != best {
                            margin = margin.min((top - src[i]).as_f64());
                        }
                    }
                    out[os.offset(n, c, oy, ox)] = top;
                    arg.push(base + best);
                }
            }
        }
    }
    (out, arg, margin)
}

fn check_divisible(h: usize, w: usize, m: u32) -> Result<()> {
    let f = 1usize << m;
    if h % f != 0 || w % f != 0 {
        return Err(Error::NotDivisible {
            op: "downsample_max",
            h,
            w,
            factor: f,
        });
    }
    Ok(())
}

/// Output of [`downsample_max_routed`].
pub struct Downsampled<T> {
    pub output: Tensor4<T>,
    /// Flat input index that supplied each output element.
    pub source: Vec<usize>,
    /// Smallest max/runner-up gap over all pooling windows of all stages.
    pub margin: f64,
}

/// `m` repeated 2x2 max-pool stages, with the composite routing of each output.
pub fn downsample_max_routed<T: Real>(x: &Tensor4<T>, m: u32) -> Result<Downsampled<T>> {
    assert!(m >= 1, "downsample factor exponent must be positive");
    let s = x.shape();
    check_divisible(s.h, s.w, m)?;
    let (mut cur, mut source, mut margin) = pool2(x);
    for _ in 1..m {
        let (next, arg, mg) = pool2(&cur);
        source = arg.into_iter().map(|i| source[i]).collect();
        margin = margin.min(mg);
        cur = next;
    }
    Ok(Downsampled {
        output: cur,
        source,
        margin,
    })
}

pub fn downsample_max<T: Real>(x: &Tensor4<T>, m: u32) -> Result<Tensor4<T>> {
    Ok(downsample_max_routed(x, m)?.output)
}

/// Scatters upstream gradients back to the routed input positions.
pub fn route_backward<T: Real>(input: &Tensor4<T>, source: &[usize], upstream: &Tensor4<T>) -> Tensor4<T> {
    let mut g = Tensor4::zeros(input.shape());
    for (&i, &u) in source.iter().zip(upstream.data()) {
        g[i] += u;
    }
    g
}

struct UpsampleRule(u32);

impl<T: Real> Backward<T> for UpsampleRule {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn backward(&self, _: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, _: &[bool]) -> Vec<Option<Tensor4<T>>> {
        vec![Some(upsample_nearest_backward(up, self.0))]
    }
}

pub fn upsample_op<T: Real>(tape: &mut Tape<T>, x: Var, m: u32) -> Var {
    let out = upsample_nearest(tape.value(x), m);
    tape.record(out, &[x], UpsampleRule(m))
}

struct DownsampleRule {
    source: Vec<usize>,
}

impl<T: Real> Backward<T> for DownsampleRule {
    fn name(&self) -> &'static str {
        "downsample_max"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, _: &[bool]) -> Vec<Option<Tensor4<T>>> {
        vec![Some(route_backward(inputs[0], &self.source, up))]
    }
}

pub fn downsample_op<T: Real>(tape: &mut Tape<T>, x: Var, m: u32) -> Result<Var> {
    let d = downsample_max_routed(tape.value(x), m)?;
    if tape.verifying() {
        tape.note_margin(d.margin);
        tape.note_decisions(d.source.iter().map(|&i| i as u64));
    }
    Ok(tape.record(d.output, &[x], DownsampleRule { source: d.source }))
}
