//! Dense batch-major 4-D tensors.
//!
//! Layout is fixed: `(n, c, h, w)` row-major, so element `(b, ch, y, x)` lives at
//! `((b * c + ch) * h + y) * w + x`. Every kernel in the crate indexes this way.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{AddAssign, Index, IndexMut};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Scalar element type. `f64` is the verification precision, `f32` the training one.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    /// Byte tag written into tensor dumps.
    const TAG: u8;
    const NAME: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k` when `trans_b`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

fn gemm_strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Row-major storage of the un-transposed operand; swap strides for transpose.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $tag:expr, $name:expr, $gemm:path) => {
        impl Real for $t {
            const TAG: u8 = $tag;
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs buffer too short");
                assert!(b.len() >= k * n, "gemm: rhs buffer too short");
                assert!(c.len() >= m * n, "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, trans_a);
                let (rsb, csb) = gemm_strides(k, n, trans_b);
                // SAFETY: the asserts above guarantee every index touched by the
                // requested strides is inside the three slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("exact width"))
            }
        }
    };
}

impl_real!(f32, 4, "f32", matrixmultiply::sgemm);
impl_real!(f64, 8, "f64", matrixmultiply::dgemm);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub const fn with_spatial(self, h: usize, w: usize) -> Self {
        Self { h, w, ..self }
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape4 {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Self::new(n, c, h, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Symmetric uniform with bound `1 / sqrt(fan_in)`, fan-in = `c * h * w`.
    UniformFanIn,
    Zeros,
    Ones,
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4<{}>{} ", std::any::type_name::<T>(), self.shape)?;
        if self.data.len() <= 32 {
            f.debug_list().entries(&self.data).finish()
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

impl<T: Real> Tensor4<T> {
    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(Error::LengthMismatch {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from `f64` values, converting to the target precision.
    pub fn from_f64s(shape: impl Into<Shape4>, values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn from_fn(shape: impl Into<Shape4>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Deterministic initialization from `(shape, seed, scheme)`.
    pub fn seeded(shape: impl Into<Shape4>, seed: u64, scheme: InitScheme) -> Result<Self> {
        let shape = shape.into();
        match scheme {
            InitScheme::Zeros => Ok(Self::zeros(shape)),
            InitScheme::Ones => Ok(Self::ones(shape)),
            InitScheme::UniformFanIn => {
                if shape.is_empty() {
                    return Err(Error::EmptyShape(shape));
                }
                let fan_in = shape.c * shape.h * shape.w;
                let bound = (1.0 / fan_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = (0..shape.len())
                    .map(|_| T::of(rng.gen_range(-bound..bound)))
                    .collect();
                Ok(Self { shape, data })
            }
        }
    }

    /// Standard-normal entries scaled by `std`, deterministic in `seed`.
    pub fn randn(shape: impl Into<Shape4>, seed: u64, std: f64) -> Self {
        let shape = shape.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| {
                // Box-Muller keeps this free of extra distribution crates.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                T::of(std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos())
            })
            .collect();
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    /// Contiguous `h * w` plane for batch item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n` as one contiguous `c * h * w` slice.
    pub fn item(&self, n: usize) -> &[T] {
        let stride = self.shape.c * self.shape.plane();
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.shape.c * self.shape.plane();
        &mut self.data[n * stride..(n + 1) * stride]
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other, op)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// In-place `self += other`; panics on shape mismatch (internal accumulation only).
    pub fn accumulate(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "gradient accumulation shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Concatenates along the channel axis; all parts must agree on `n`, `h`, `w`.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?
            .shape;
        let mut total_c = 0;
        for p in parts {
            let s = p.shape;
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: first,
                    rhs: s,
                });
            }
            total_c += s.c;
        }
        let shape = first.with_channels(total_c);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.item(n));
            }
        }
        Ok(Self { shape, data })
    }

    /// Channels `start .. start + count` as a new tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Self {
        assert!(start + count <= self.shape.c, "channel slice out of range");
        let shape = self.shape.with_channels(count);
        let p = self.shape.plane();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..self.shape.n {
            let item = self.item(n);
            data.extend_from_slice(&item[start * p..(start + count) * p]);
        }
        Self { shape, data }
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let s = self.shape;
        Self::from_fn(s, |n, c, y, x| self.at(n, c, y, s.w - 1 - x))
    }

    /// Swap height and width.
    pub fn transpose_spatial(&self) -> Self {
        let s = self.shape;
        Self::from_fn(s.with_spatial(s.w, s.h), |n, c, y, x| self.at(n, c, x, y))
    }

    /// Serializes as `T4v1`, four little-endian `u32` extents, a precision tag, then values.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(21 + self.data.len() * std::mem::size_of::<T>());
        buf.extend_from_slice(DUMP_MAGIC);
        for e in [self.shape.n, self.shape.c, self.shape.h, self.shape.w] {
            let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} exceeds u32")))?;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        buf.push(T::TAG);
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 21];
        input.read_exact(&mut header)?;
        if &header[..4] != DUMP_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let ext = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let shape = Shape4::new(ext(0), ext(1), ext(2), ext(3));
        let tag = header[20];
        if tag != T::TAG {
            return Err(Error::Format(format!(
                "precision tag {tag} does not match requested {}",
                T::NAME
            )));
        }
        let width = std::mem::size_of::<T>();
        let mut raw = vec![0u8; shape.len() * width];
        input.read_exact(&mut raw)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        Ok(Self { shape, data })
    }
}

pub const DUMP_MAGIC: &[u8; 4] = b"T4v1";

impl<T> Index<usize> for Tensor4<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Tensor4<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_identity_and_units() {
        let a = Tensor4::<f64>::zeros((1, 1, 2, 2));
        let b = Tensor4::from_f64s((1, 1, 2, 2), &[1.5, -2.0, 3.0, 0.25]).unwrap();
        assert_eq!(a.add(&b).unwrap(), b);

        let one = Tensor4::<f64>::ones((1, 1, 1, 1));
        assert_eq!(one.add(&one).unwrap().data(), &[2.0]);
    }

    #[test]
    fn add_rejects_mismatched_extents() {
        let a = Tensor4::<f32>::zeros((1, 1, 2, 2));
        let b = Tensor4::<f32>::zeros((1, 2, 2, 2));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("(1, 1, 2, 2)") && err.contains("(1, 2, 2, 2)"), "{err}");
    }

    #[test]
    fn seeded_init_schemes() {
        let z = Tensor4::<f64>::seeded((1, 1, 2, 2), 7, InitScheme::Zeros).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        let a = Tensor4::<f64>::seeded((8, 8, 3, 3), 1, InitScheme::UniformFanIn).unwrap();
        let b = Tensor4::<f64>::seeded((8, 8, 3, 3), 1, InitScheme::UniformFanIn).unwrap();
        assert_eq!(a.data(), b.data());
        let bound = (1.0f64 / 72.0).sqrt();
        assert!(a.max_abs() <= bound);
        // Not degenerate: spread covers most of the interval.
        assert!(a.max_abs() > 0.8 * bound);

        let c = Tensor4::<f64>::seeded((8, 8, 3, 3), 2, InitScheme::UniformFanIn).unwrap();
        assert_ne!(a.data(), c.data());

        assert!(Tensor4::<f64>::seeded((0, 1, 1, 1), 1, InitScheme::UniformFanIn).is_err());
    }

    #[test]
    fn f32_init_is_cast_of_f64_init() {
        let a = Tensor4::<f64>::seeded((4, 2, 3, 3), 9, InitScheme::UniformFanIn).unwrap();
        let b = Tensor4::<f32>::seeded((4, 2, 3, 3), 9, InitScheme::UniformFanIn).unwrap();
        assert_eq!(a.cast::<f32>(), b);
    }

    #[test]
    fn concat_and_slice_channels() {
        let a = Tensor4::<f64>::from_fn((2, 1, 2, 2), |n, _, y, x| (n * 10 + y * 2 + x) as f64);
        let b = a.scale(-1.0);
        let cat = Tensor4::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape4::new(2, 2, 2, 2));
        assert_eq!(cat.channel_slice(0, 1), a);
        assert_eq!(cat.channel_slice(1, 1), b);
        assert_eq!(cat.at(1, 1, 1, 0), -12.0);
    }

    #[test]
    fn dump_load_round_trip_and_header() {
        let t = Tensor4::<f32>::from_fn((1, 2, 3, 4), |_, c, y, x| (c * 12 + y * 4 + x) as f32 * 0.5);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"T4v1");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &4u32.to_le_bytes());
        assert_eq!(buf[20], 4);
        assert_eq!(buf.len(), 21 + 24 * 4);
        assert_eq!(&buf[25..29], &0.5f32.to_le_bytes());
        let back = Tensor4::<f32>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, t);

        assert!(Tensor4::<f64>::read_from(buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(Tensor4::<f32>::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn gemm_transposes() {
        // a: 2x3, b: 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // a^T stored as 3x2 gives the same product.
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c2 = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &at, true, &b, false, 0.0, &mut c2);
        assert_eq!(c, c2);
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c3 = [1.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, false, &bt, true, 1.0, &mut c3);
        assert_eq!(c3, [59.0, 65.0, 140.0, 155.0]);
    }
}
