//! Stride-1 convolution with `floor(k/2)` zero padding (k = 1 or 3), lowered to GEMM.

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{InitScheme, Real, Shape4, Tensor4};

/// Kernel `(out, in, k, k)` plus one bias per output channel, stored `(1, out, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Real> ConvWeights<T> {
    pub fn new(weight: Tensor4<T>, bias: Tensor4<T>) -> Result<Self> {
        let s = weight.shape();
        check_kernel(s)?;
        if bias.shape() != Shape4::new(1, s.n, 1, 1) {
            return Err(Error::ShapeMismatch {
                op: "conv bias",
                lhs: bias.shape(),
                rhs: Shape4::new(1, s.n, 1, 1),
            });
        }
        Ok(Self { weight, bias })
    }

    /// Fan-in uniform kernel and zero bias.
    pub fn init(out_channels: usize, in_channels: usize, k: usize, seed: u64) -> Result<Self> {
        let weight = Tensor4::seeded((out_channels, in_channels, k, k), seed, InitScheme::UniformFanIn)?;
        Self::new(weight, Tensor4::zeros((1, out_channels, 1, 1)))
    }

    /// 1x1 channel identity with zero bias.
    pub fn identity(channels: usize) -> Self {
        let weight = Tensor4::from_fn((channels, channels, 1, 1), |o, i, _, _| if o == i { T::one() } else { T::zero() });
        Self {
            weight,
            bias: Tensor4::zeros((1, channels, 1, 1)),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn k(&self) -> usize {
        self.weight.shape().h
    }
}

fn check_kernel(s: Shape4) -> Result<()> {
    if s.h != s.w || !(s.h == 1 || s.h == 3) {
        return Err(Error::KernelSize(s.h));
    }
    Ok(())
}

fn check_input(x: Shape4, w: Shape4, bias: Shape4) -> Result<()> {
    check_kernel(w)?;
    if x.c != w.c {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: w.c,
            actual: x.c,
        });
    }
    if bias.len() != w.n {
        return Err(Error::ShapeMismatch {
            op: "conv bias",
            lhs: bias,
            rhs: Shape4::new(1, w.n, 1, 1),
        });
    }
    Ok(())
}

/// Unfolds one `(c, h, w)` item into a `(c * 9, h * w)` patch matrix.
fn im2col3<T: Real>(item: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let plane = h * w;
    for ci in 0..c {
        let src = &item[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 3 + ky) * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&srow[..w - 1]);
                        }
                        1 => dst.copy_from_slice(srow),
                        _ => {
                            dst[..w - 1].copy_from_slice(&srow[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: folds a patch-matrix gradient back onto the item.
fn col2im3<T: Real>(col: &[T], c: usize, h: usize, w: usize, item: &mut [T]) {
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut item[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 3 + ky) * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in drow[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in drow.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in drow[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation plus bias; spatial extents are preserved.
pub fn conv2d_raw<T: Real>(x: &Tensor4<T>, weight: &Tensor4<T>, bias: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    check_input(xs, ws, bias.shape())?;
    let (cout, k) = (ws.n, ws.h);
    let plane = xs.plane();
    let inner = xs.c * k * k;
    let mut out = Tensor4::zeros(xs.with_channels(cout));
    let mut col = if k == 3 { vec![T::zero(); inner * plane] } else { Vec::new() };
    for n in 0..xs.n {
        let dst = out.item_mut(n);
        for (o, chunk) in dst.chunks_exact_mut(plane).enumerate() {
            chunk.fill(bias[o]);
        }
        let patches: &[T] = if k == 3 {
            im2col3(x.item(n), xs.c, xs.h, xs.w, &mut col);
            &col
        } else {
            x.item(n)
        };
        T::gemm(cout, inner, plane, T::one(), weight.data(), false, patches, false, T::one(), dst);
    }
    Ok(out)
}

pub fn conv2d<T: Real>(x: &Tensor4<T>, w: &ConvWeights<T>) -> Result<Tensor4<T>> {
    conv2d_raw(x, &w.weight, &w.bias)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Option<Tensor4<T>>,
    pub bias: Option<Tensor4<T>>,
}

/// Gradients of a convolution given the upstream gradient of its output.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    upstream: &Tensor4<T>,
    want: [bool; 3],
) -> ConvGrads<T> {
    let (xs, ws) = (x.shape(), weight.shape());
    let (cout, k) = (ws.n, ws.h);
    let plane = xs.plane();
    let inner = xs.c * k * k;
    let mut dx = want[0].then(|| Tensor4::zeros(xs));
    let mut dw = want[1].then(|| Tensor4::zeros(ws));
    let db = want[2].then(|| {
        let mut db = Tensor4::zeros((1, cout, 1, 1));
        for n in 0..xs.n {
            for (o, chunk) in upstream.item(n).chunks_exact(plane).enumerate() {
                db[o] += chunk.iter().fold(T::zero(), |a, &v| a + v);
            }
        }
        db
    });
    let mut col = if k == 3 { vec![T::zero(); inner * plane] } else { Vec::new() };
    let mut dcol = if k == 3 && want[0] { vec![T::zero(); inner * plane] } else { Vec::new() };
    for n in 0..xs.n {
        let dy = upstream.item(n);
        if let Some(dw) = dw.as_mut() {
            let patches: &[T] = if k == 3 {
                im2col3(x.item(n), xs.c, xs.h, xs.w, &mut col);
                &col
            } else {
                x.item(n)
            };
            T::gemm(cout, plane, inner, T::one(), dy, false, patches, true, T::one(), dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            if k == 3 {
                T::gemm(inner, cout, plane, T::one(), weight.data(), true, dy, false, T::zero(), &mut dcol);
                col2im3(&dcol, xs.c, xs.h, xs.w, dx.item_mut(n));
            } else {
                T::gemm(inner, cout, plane, T::one(), weight.data(), true, dy, false, T::zero(), dx.item_mut(n));
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

struct ConvRule;

impl<T: Real> Backward<T> for ConvRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, wanted: &[bool]) -> Vec<Option<Tensor4<T>>> {
        let g = conv2d_backward(inputs[0], inputs[1], up, [wanted[0], wanted[1], wanted[2]]);
        vec![g.input, g.weight, g.bias]
    }
}

/// Tape-bound convolution parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl ConvVars {
    pub fn bind<T: Real>(tape: &mut Tape<T>, w: &ConvWeights<T>) -> Self {
        Self {
            weight: tape.param(w.weight.clone()),
            bias: tape.param(w.bias.clone()),
        }
    }
}

pub fn conv2d_op<T: Real>(tape: &mut Tape<T>, x: Var, w: ConvVars) -> Result<Var> {
    let out = conv2d_raw(tape.value(x), tape.value(w.weight), tape.value(w.bias))?;
    Ok(tape.record(out, &[x, w.weight, w.bias], ConvRule))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution used as an independent reference.
    fn conv_naive(x: &Tensor4<f64>, w: &ConvWeights<f64>) -> Tensor4<f64> {
        let s = x.shape();
        let k = w.k() as isize;
        let pad = k / 2;
        Tensor4::from_fn(s.with_channels(w.out_channels()), |n, o, y, xx| {
            let mut acc = w.bias[o];
            for i in 0..s.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky - pad;
                        let sx = xx as isize + kx - pad;
                        if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                            acc += w.weight.at(o, i, ky as usize, kx as usize) * x.at(n, i, sy as usize, sx as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_1x1_is_noop() {
        let x = Tensor4::<f64>::randn((2, 3, 4, 5), 1, 1.0);
        assert_eq!(conv2d(&x, &ConvWeights::identity(3)).unwrap(), x);
    }

    #[test]
    fn delta_3x3_is_noop() {
        let x = Tensor4::<f64>::randn((1, 1, 5, 4), 2, 1.0);
        let mut weight = Tensor4::zeros((1, 1, 3, 3));
        weight[4] = 1.0;
        let w = ConvWeights::new(weight, Tensor4::zeros((1, 1, 1, 1))).unwrap();
        assert_eq!(conv2d(&x, &w).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let v = 1.75;
        let x = Tensor4::<f64>::full((1, 1, 4, 4), v);
        let w = ConvWeights::new(Tensor4::ones((1, 1, 3, 3)), Tensor4::zeros((1, 1, 1, 1))).unwrap();
        let y = conv2d(&x, &w).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0 * v);
        assert_eq!(y.at(0, 0, 0, 0), 4.0 * v);
        assert_eq!(y.at(0, 0, 0, 2), 6.0 * v);
        assert_eq!(y.at(0, 0, 3, 3), 4.0 * v);
    }

    #[test]
    fn matches_naive_reference() {
        for (k, seed) in [(1usize, 3u64), (3, 4), (3, 5)] {
            let x = Tensor4::<f64>::randn((2, 3, 5, 7), seed, 1.0);
            let mut w = ConvWeights::init(4, 3, k, seed + 10).unwrap();
            w.bias = Tensor4::randn((1, 4, 1, 1), seed + 20, 1.0);
            let fast = conv2d(&x, &w).unwrap();
            let slow = conv_naive(&x, &w);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_bad_kernel() {
        let x = Tensor4::<f64>::zeros((1, 2, 3, 3));
        let w = ConvWeights::<f64>::init(1, 3, 3, 0).unwrap();
        assert!(matches!(conv2d(&x, &w), Err(Error::ChannelMismatch { .. })));
        assert!(ConvWeights::<f64>::init(1, 1, 5, 0).is_err());
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), u> == <x, conv^T(u)> for the input gradient.
        let x = Tensor4::<f64>::randn((2, 3, 4, 6), 7, 1.0);
        let w = ConvWeights::init(5, 3, 3, 8).unwrap();
        let zero_bias = Tensor4::zeros((1, 5, 1, 1));
        let y = conv2d_raw(&x, &w.weight, &zero_bias).unwrap();
        let u = Tensor4::randn(y.shape(), 9, 1.0);
        let g = conv2d_backward(&x, &w.weight, &u, [true, false, false]).input.unwrap();
        let lhs: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
