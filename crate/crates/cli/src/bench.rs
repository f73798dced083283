//! Vertical running-max scans: the strided column loop against the row-sweep
//! kernel, gated on bit-identical outputs.

use std::time::Instant;

use anyhow::{bail, Result};
use lim_core::boundary::{directional_max_scan, scan_column_loop};
use lim_core::{ScanDirection, Tensor4};

use crate::settings::Settings;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            channels: 64,
            height: 256,
            width: 256,
            repeats: 3,
            seed: 0,
        }
    }
}

impl Settings for BenchSettings {
    const KEYS: &'static [&'static str] = &["channels", "height", "width", "repeats", "seed"];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "channels" => self.channels = value.parse()?,
            "height" => self.height = value.parse()?,
            "width" => self.width = value.parse()?,
            "repeats" => self.repeats = value.parse()?,
            _ => self.seed = value.parse()?,
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    /// Elements scanned per timed pass (both vertical directions).
    pub elements: usize,
    /// Elements per second of the column loop, best of the repeats.
    pub column_loop: f64,
    /// Elements per second of the row-sweep kernel, best of the repeats.
    pub row_sweep: f64,
}

impl BenchReport {
    /// Row-sweep throughput over column-loop throughput.
    pub fn speedup(&self) -> f64 {
        self.row_sweep / self.column_loop
    }

    pub fn render(&self, s: &BenchSettings) -> String {
        format!(
            "map {}x{}x{}, {} repeats, outputs bit-identical\n\
             column loop : {:>12.4e} elements/s\n\
             row sweep   : {:>12.4e} elements/s\n\
             speedup     : {:.2}x\n",
            s.channels,
            s.height,
            s.width,
            s.repeats,
            self.column_loop,
            self.row_sweep,
            self.speedup()
        )
    }
}

const VERTICAL: [ScanDirection; 2] = [ScanDirection::FromBottom, ScanDirection::FromTop];

fn bits_equal(a: &Tensor4<f32>, b: &Tensor4<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn best_rate(elements: usize, repeats: usize, mut f: impl FnMut()) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let t = Instant::now();
        f();
        best = best.min(t.elapsed().as_secs_f64());
    }
    elements as f64 / best.max(1e-9)
}

/// Fails before any timing if the two kernels disagree on any element.
pub fn scan_bench(s: &BenchSettings) -> Result<BenchReport> {
    if s.channels == 0 || s.height == 0 || s.width == 0 || s.repeats == 0 {
        bail!("channels, height, width and repeats must be positive");
    }
    let a = Tensor4::<f32>::randn((1, s.channels, s.height, s.width), s.seed, 1.0);
    for d in VERTICAL {
        if !bits_equal(&scan_column_loop(&a, d), &directional_max_scan(&a, d)) {
            bail!("scan outputs differ for direction {}", d.name());
        }
    }
    let elements = VERTICAL.len() * a.len();
    let column_loop = best_rate(elements, s.repeats, || {
        for d in VERTICAL {
            std::hint::black_box(scan_column_loop(std::hint::black_box(&a), d));
        }
    });
    let row_sweep = best_rate(elements, s.repeats, || {
        for d in VERTICAL {
            std::hint::black_box(directional_max_scan(std::hint::black_box(&a), d));
        }
    });
    Ok(BenchReport {
        elements,
        column_loop,
        row_sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_map_passes_the_gate() {
        let s = BenchSettings {
            channels: 1,
            height: 1,
            width: 1,
            repeats: 1,
            seed: 0,
        };
        let r = scan_bench(&s).unwrap();
        assert_eq!(r.elements, 2);
        assert!(r.speedup().is_finite() && r.speedup() > 0.0);
        assert!(r.render(&s).contains("speedup"));
    }

    #[test]
    fn zero_dims_rejected() {
        let s = BenchSettings {
            height: 0,
            ..BenchSettings::default()
        };
        assert!(scan_bench(&s).is_err());
    }
}
