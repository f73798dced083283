//! Boundary activation: running-max scans from each of the four image edges.
//!
//! A scan "from the right" replaces every element by the maximum of itself and
//! everything to its right in the same row, so the rightmost column is copied and
//! values propagate leftwards until they meet something larger. The other three
//! directions are the mirrored and transposed versions of the same recurrence.
//!
//! Three implementations live here:
//!
//! * [`directional_max_scan_naive`] evaluates the definition literally, taking an
//!   explicit max over the whole trailing run for every element. It is the oracle.
//! * [`scan_column_loop`] runs the recurrence down each column for the vertical
//!   directions, touching memory with a stride of one row per step.
//! * [`directional_max_scan`] is the production kernel. Horizontal scans walk each
//!   row in place; vertical scans use the stride-swapped form of the recurrence,
//!   `B[y] = max(A[y], B[y -/+ 1])` applied to whole rows at a time, so the inner
//!   loop is always contiguous.
//!
//! All three agree bit-for-bit: max never rounds.

use crate::autograd::{Backward, Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    /// Starts at the last column and moves left (captures left boundaries).
    FromRight,
    FromLeft,
    /// Starts at the last row and moves up.
    FromBottom,
    FromTop,
}

impl ScanDirection {
    /// Fixed aggregation order.
    pub const ALL: [ScanDirection; 4] = [Self::FromRight, Self::FromLeft, Self::FromBottom, Self::FromTop];

    pub fn is_horizontal(self) -> bool {
        matches!(self, Self::FromRight | Self::FromLeft)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FromRight => "from-right",
            Self::FromLeft => "from-left",
            Self::FromBottom => "from-bottom",
            Self::FromTop => "from-top",
        }
    }
}

/// How the four scans are merged into one map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum BaFusion {
    /// Channel concatenation in [`ScanDirection::ALL`] order (4x channels).
    #[default]
    Concat,
    /// Elementwise maximum of the four scans (same channel count).
    MaxFuse,
}

/// Scan output plus, for every element, the flat index of the input that won.
pub struct RoutedScan<T> {
    pub output: Tensor4<T>,
    pub source: Vec<u32>,
    /// Smallest gap between the two competitors of any step of the recurrence.
    pub margin: f64,
}

/// Literal definition: each element is the max over its full trailing run.
pub fn directional_max_scan_naive<T: Real>(a: &Tensor4<T>, d: ScanDirection) -> Tensor4<T> {
    let s = a.shape();
    Tensor4::from_fn(s, |n, c, y, x| {
        let (ys, xs): (Vec<usize>, Vec<usize>) = match d {
            ScanDirection::FromRight => ((y..=y).collect(), (x..s.w).collect()),
            ScanDirection::FromLeft => ((y..=y).collect(), (0..=x).collect()),
            ScanDirection::FromBottom => ((y..s.h).collect(), (x..=x).collect()),
            ScanDirection::FromTop => ((0..=y).collect(), (x..=x).collect()),
        };
        let mut best = a.at(n, c, ys[0], xs[0]);
        for &yy in &ys {
            for &xx in &xs {
                best = best.max(a.at(n, c, yy, xx));
            }
        }
        best
    })
}

/// Vertical scans walking each column top-to-bottom or bottom-to-top.
///
/// This is the straightforward strided kernel that the row-sweep path replaces;
/// it is kept as the benchmark baseline. Horizontal directions fall through to
/// the row kernel.
pub fn scan_column_loop<T: Real>(a: &Tensor4<T>, d: ScanDirection) -> Tensor4<T> {
    if d.is_horizontal() {
        return directional_max_scan(a, d);
    }
    let s = a.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = a.plane(n, c);
            let dst = out.plane_mut(n, c);
            for x in 0..s.w {
                let mut run = T::neg_infinity();
                for step in 0..s.h {
                    let y = if d == ScanDirection::FromBottom { s.h - 1 - step } else { step };
                    let i = y * s.w + x;
                    run = run.max(src[i]);
                    dst[i] = run;
                }
            }
        }
    }
    out
}

pub fn directional_max_scan<T: Real>(a: &Tensor4<T>, d: ScanDirection) -> Tensor4<T> {
    let s = a.shape();
    let mut out = a.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            scan_plane_in_place(out.plane_mut(n, c), s.h, s.w, d);
        }
    }
    out
}

fn scan_plane_in_place<T: Real>(p: &mut [T], h: usize, w: usize, d: ScanDirection) {
    match d {
        ScanDirection::FromRight => {
            for row in p.chunks_exact_mut(w) {
                for x in (0..w.saturating_sub(1)).rev() {
                    row[x] = row[x].max(row[x + 1]);
                }
            }
        }
        ScanDirection::FromLeft => {
            for row in p.chunks_exact_mut(w) {
                for x in 1..w {
                    row[x] = row[x].max(row[x - 1]);
                }
            }
        }
        ScanDirection::FromBottom => {
            for y in (0..h.saturating_sub(1)).rev() {
                let (cur, below) = p[y * w..(y + 2) * w].split_at_mut(w);
                for (c, &b) in cur.iter_mut().zip(below.iter()) {
                    *c = c.max(b);
                }
            }
        }
        ScanDirection::FromTop => {
            for y in 1..h {
                let (above, cur) = p[(y - 1) * w..(y + 1) * w].split_at_mut(w);
                for (c, &a) in cur.iter_mut().zip(above.iter()) {
                    *c = c.max(a);
                }
            }
        }
    }
}

/// Scan that also records which input element each output came from.
///
/// On ties the element nearest the scan start wins, which is what a sequential
/// running max with a strict comparison produces.
pub fn directional_max_scan_routed<T: Real>(a: &Tensor4<T>, d: ScanDirection) -> RoutedScan<T> {
    let s = a.shape();
    let mut output = a.clone();
    let mut source: Vec<u32> = (0..s.len() as u32).collect();
    let mut margin = f64::INFINITY;
    let (h, w) = (s.h, s.w);
    let plane = s.plane();
    for nc in 0..s.n * s.c {
        let out = &mut output.data_mut()[nc * plane..(nc + 1) * plane];
        let src = &mut source[nc * plane..(nc + 1) * plane];
        // `step(cur, prev)`: position `cur` competes with the running max held at `prev`.
        let mut step = |cur: usize, prev: usize| {
            let (v, run) = (out[cur], out[prev]);
            margin = margin.min((v - run).abs().as_f64());
            if !(v > run) {
                out[cur] = run;
                src[cur] = src[prev];
            }
        };
        match d {
            ScanDirection::FromRight => {
                for y in 0..h {
                    for x in (0..w.saturating_sub(1)).rev() {
                        step(y * w + x, y * w + x + 1);
                    }
                }
            }
            ScanDirection::FromLeft => {
                for y in 0..h {
                    for x in 1..w {
                        step(y * w + x, y * w + x - 1);
                    }
                }
            }
            ScanDirection::FromBottom => {
                for y in (0..h.saturating_sub(1)).rev() {
                    for x in 0..w {
                        step(y * w + x, (y + 1) * w + x);
                    }
                }
            }
            ScanDirection::FromTop => {
                for y in 1..h {
                    for x in 0..w {
                        step(y * w + x, (y - 1) * w + x);
                    }
                }
            }
        }
    }
    RoutedScan { output, source, margin }
}

/// Routes each upstream gradient to the input position that attained the max.
/// Positions selected by several outputs receive the sum.
pub fn scan_backward<T: Real>(a: &Tensor4<T>, d: ScanDirection, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    a.expect_shape(upstream, "scan_backward")?;
    let routed = directional_max_scan_routed(a, d);
    Ok(scatter(a.shape(), &routed.source, upstream.data()))
}

fn scatter<T: Real>(shape: Shape4, source: &[u32], upstream: &[T]) -> Tensor4<T> {
    let mut g = Tensor4::zeros(shape);
    for (&i, &u) in source.iter().zip(upstream) {
        g[i as usize] += u;
    }
    g
}

/// All four scans, merged according to `fusion`.
pub fn ba_aggregate_with<T: Real>(a: &Tensor4<T>, fusion: BaFusion) -> Tensor4<T> {
    let scans: Vec<Tensor4<T>> = ScanDirection::ALL.iter().map(|&d| directional_max_scan(a, d)).collect();
    match fusion {
        BaFusion::Concat => {
            let refs: Vec<&Tensor4<T>> = scans.iter().collect();
            Tensor4::concat_channels(&refs).expect("scans share extents")
        }
        BaFusion::MaxFuse => {
            let mut out = scans[0].clone();
            for s in &scans[1..] {
                for (o, &v) in out.data_mut().iter_mut().zip(s.data()) {
                    *o = o.max(v);
                }
            }
            out
        }
    }
}

/// Channel concatenation of the four scans: `(n, 4c, h, w)`.
pub fn ba_aggregate<T: Real>(a: &Tensor4<T>) -> Tensor4<T> {
    ba_aggregate_with(a, BaFusion::Concat)
}

struct ScanRule {
    source: Vec<u32>,
}

impl<T: Real> Backward<T> for ScanRule {
    fn name(&self) -> &'static str {
        "directional_max_scan"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, _: &[bool]) -> Vec<Option<Tensor4<T>>> {
        vec![Some(scatter(inputs[0].shape(), &self.source, up.data()))]
    }
}

pub fn directional_max_scan_op<T: Real>(tape: &mut Tape<T>, x: Var, d: ScanDirection) -> Var {
    let r = directional_max_scan_routed(tape.value(x), d);
    if tape.verifying() {
        tape.note_margin(r.margin);
        tape.note_decisions(r.source.iter().map(|&i| i as u64));
    }
    tape.record(r.output, &[x], ScanRule { source: r.source })
}

struct AggregateRule {
    fusion: BaFusion,
    /// Per direction, the routing of that scan.
    sources: Vec<Vec<u32>>,
    /// MaxFuse only: index into `sources` that won each element.
    winner: Vec<u8>,
}

impl<T: Real> Backward<T> for AggregateRule {
    fn name(&self) -> &'static str {
        "ba_aggregate"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, _: &[bool]) -> Vec<Option<Tensor4<T>>> {
        let s = inputs[0].shape();
        let mut g = Tensor4::zeros(s);
        match self.fusion {
            BaFusion::Concat => {
                let item = s.c * s.plane();
                for n in 0..s.n {
                    let up_item = up.item(n);
                    for (k, src) in self.sources.iter().enumerate() {
                        let src = &src[n * item..(n + 1) * item];
                        for (&i, &u) in src.iter().zip(&up_item[k * item..(k + 1) * item]) {
                            g[i as usize] += u;
                        }
                    }
                }
            }
            BaFusion::MaxFuse => {
                for (e, (&k, &u)) in self.winner.iter().zip(up.data()).enumerate() {
                    g[self.sources[k as usize][e] as usize] += u;
                }
            }
        }
        vec![Some(g)]
    }
}

/// Records the four-direction aggregation as one node.
pub fn ba_aggregate_op<T: Real>(tape: &mut Tape<T>, x: Var, fusion: BaFusion) -> Var {
    let a = tape.value(x);
    let routed: Vec<RoutedScan<T>> = ScanDirection::ALL
        .iter()
        .map(|&d| directional_max_scan_routed(a, d))
        .collect();
    let mut margin = routed.iter().fold(f64::INFINITY, |m, r| m.min(r.margin));
    let (out, winner) = match fusion {
        BaFusion::Concat => {
            let refs: Vec<&Tensor4<T>> = routed.iter().map(|r| &r.output).collect();
            (Tensor4::concat_channels(&refs).expect("scans share extents"), Vec::new())
        }
        BaFusion::MaxFuse => {
            let mut out = routed[0].output.clone();
            let mut winner = vec![0u8; out.len()];
            for (k, r) in routed.iter().enumerate().skip(1) {
                for ((o, w), &v) in out.data_mut().iter_mut().zip(winner.iter_mut()).zip(r.output.data()) {
                    if v > *o {
                        *o = v;
                        *w = k as u8;
                    }
                }
            }
            // Distinct competing values closer than the margin make the fused max a kink.
            for (e, &o) in out.data().iter().enumerate() {
                for (k, r) in routed.iter().enumerate() {
                    if k as u8 != winner[e] && r.source[e] != routed[winner[e] as usize].source[e] {
                        margin = margin.min((o - r.output[e]).as_f64());
                    }
                }
            }
            (out, winner)
        }
    };
    if tape.verifying() {
        tape.note_margin(margin);
        for r in &routed {
            tape.note_decisions(r.source.iter().map(|&i| i as u64));
        }
        tape.note_decisions(winner.iter().map(|&k| k as u64));
    }
    let sources = routed.into_iter().map(|r| r.source).collect();
    tape.record(out, &[x], AggregateRule { fusion, sources, winner })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f64]) -> Tensor4<f64> {
        Tensor4::from_f64s((1, 1, 1, vals.len()), vals).unwrap()
    }

    #[test]
    fn from_right_examples() {
        assert_eq!(directional_max_scan(&row(&[1.0, 3.0, 2.0]), ScanDirection::FromRight).data(), &[3.0, 3.0, 2.0]);
        assert_eq!(directional_max_scan(&row(&[5.0, 4.0, 3.0]), ScanDirection::FromRight).data(), &[5.0, 4.0, 3.0]);
        assert_eq!(directional_max_scan_naive(&row(&[2.0, 1.0]), ScanDirection::FromLeft).data(), &[2.0, 2.0]);
    }

    #[test]
    fn constant_map_unchanged() {
        let a = Tensor4::<f64>::full((2, 3, 4, 5), 1.5);
        for d in ScanDirection::ALL {
            assert_eq!(directional_max_scan(&a, d), a);
        }
    }

    #[test]
    fn single_column_horizontal_is_identity() {
        let a = Tensor4::<f64>::randn((1, 2, 5, 1), 3, 1.0);
        for d in [ScanDirection::FromRight, ScanDirection::FromLeft] {
            assert_eq!(directional_max_scan_naive(&a, d), a);
            assert_eq!(directional_max_scan(&a, d), a);
        }
    }

    #[test]
    fn three_kernels_agree() {
        let a = Tensor4::<f64>::from_fn((2, 3, 7, 5), |n, c, y, x| ((n * 31 + c * 17 + y * 7 + x * 13) % 11) as f64);
        for d in ScanDirection::ALL {
            let naive = directional_max_scan_naive(&a, d);
            assert_eq!(directional_max_scan(&a, d), naive, "{d:?}");
            assert_eq!(scan_column_loop(&a, d), naive, "{d:?}");
            assert_eq!(directional_max_scan_routed(&a, d).output, naive, "{d:?}");
        }
    }

    #[test]
    fn backward_hand_trace() {
        let a = row(&[1.0, 2.0]);
        let g = scan_backward(&a, ScanDirection::FromRight, &row(&[0.25, 4.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 4.25]);

        let a = row(&[5.0, 4.0, 3.0]);
        let up = row(&[1.0, 2.0, 3.0]);
        assert_eq!(scan_backward(&a, ScanDirection::FromRight, &up).unwrap(), up);
    }

    #[test]
    fn ties_route_to_scan_start() {
        let a = row(&[2.0, 2.0, 2.0]);
        let up = row(&[1.0, 1.0, 1.0]);
        assert_eq!(scan_backward(&a, ScanDirection::FromRight, &up).unwrap().data(), &[0.0, 0.0, 3.0]);
        assert_eq!(scan_backward(&a, ScanDirection::FromLeft, &up).unwrap().data(), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn aggregate_layout() {
        let a = Tensor4::<f64>::randn((2, 3, 4, 4), 9, 1.0);
        let b = ba_aggregate(&a);
        assert_eq!(b.shape(), Shape4::new(2, 12, 4, 4));
        for (k, d) in ScanDirection::ALL.into_iter().enumerate() {
            assert_eq!(b.channel_slice(3 * k, 3), directional_max_scan(&a, d));
        }
        let fused = ba_aggregate_with(&a, BaFusion::MaxFuse);
        assert_eq!(fused.shape(), a.shape());
    }

    #[test]
    fn mirrored_input_swaps_horizontal_scans() {
        let a = Tensor4::<f64>::randn((1, 2, 3, 6), 4, 1.0);
        let m = a.flip_horizontal();
        let c = a.shape().c;
        let from_right_of_mirror = ba_aggregate(&m).channel_slice(0, c);
        let from_left_of_original = directional_max_scan_naive(&a, ScanDirection::FromLeft);
        assert_eq!(from_right_of_mirror, from_left_of_original.flip_horizontal());
    }

    #[test]
    fn transposed_input_swaps_axes() {
        let a = Tensor4::<f64>::randn((1, 1, 4, 6), 5, 1.0);
        let t = a.transpose_spatial();
        assert_eq!(
            directional_max_scan(&t, ScanDirection::FromBottom),
            directional_max_scan(&a, ScanDirection::FromRight).transpose_spatial()
        );
    }

    #[test]
    fn aggregate_op_matches_plain_and_conserves_mass() {
        let a = Tensor4::<f64>::randn((2, 2, 3, 5), 6, 1.0);
        for fusion in [BaFusion::Concat, BaFusion::MaxFuse] {
            let mut tape = Tape::new();
            let x = tape.param(a.clone());
            let y = ba_aggregate_op(&mut tape, x, fusion);
            assert_eq!(tape.value(y), &ba_aggregate_with(&a, fusion));
            let up = Tensor4::randn(tape.value(y).shape(), 7, 1.0);
            let g = tape.backward_with(y, up.clone());
            assert!((g.get(x).unwrap().sum() - up.sum()).abs() < 1e-12);
        }
    }
}
