//! Ground truth to per-cell training targets.
//!
//! A box goes to the level with the largest stride not exceeding the square
//! root of its area (the finest level when none qualifies), at the cell
//! containing its center. The cell stores the class and the offsets
//! `(cx / s - col, cy / s - row, ln(w / s), ln(h / s))`. When boxes collide on
//! one cell the smallest one keeps it.

use crate::config::DetectorConfig;

/// A ground-truth box with its class index. Coordinates are unchecked;
/// degenerate boxes are skipped during assignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class: usize,
}

impl GtBox {
    fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x2 > self.x1 && self.y2 > self.y1
    }

    /// Total order used to settle collisions independently of input order.
    fn rank_key(&self) -> (f64, f64, f64, f64, f64, usize) {
        (self.area(), self.x1, self.y1, self.x2, self.y2, self.class)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellTarget {
    pub class: usize,
    pub offsets: [f64; 4],
    key: (f64, f64, f64, f64, f64, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelTargets {
    pub stride: usize,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    /// Indexed `(n * h + row) * w + col`.
    pub cells: Vec<Option<CellTarget>>,
}

impl LevelTargets {
    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub levels: Vec<LevelTargets>,
    /// Degenerate boxes that were ignored.
    pub skipped: usize,
}

impl Targets {
    pub fn positives(&self) -> usize {
        self.levels.iter().map(LevelTargets::positives).sum()
    }
}

/// Level index for a box of the given area.
pub fn level_for(area: f64, strides: &[usize]) -> usize {
    let side = area.sqrt();
    strides.iter().rposition(|&s| s as f64 <= side).unwrap_or(0)
}

/// Builds targets for a batch; `boxes[n]` are the boxes of image `n`.
pub fn assign_targets(boxes: &[Vec<GtBox>], cfg: &DetectorConfig) -> Targets {
    let strides = cfg.strides();
    let mut levels: Vec<LevelTargets> = strides
        .iter()
        .map(|&s| {
            let side = cfg.resolution / s;
            LevelTargets {
                stride: s,
                batch: boxes.len(),
                h: side,
                w: side,
                cells: vec![None; boxes.len() * side * side],
            }
        })
        .collect();
    let mut skipped = 0;
    for (n, image) in boxes.iter().enumerate() {
        for b in image {
            if !b.is_valid() {
                skipped += 1;
                continue;
            }
            let l = level_for(b.area(), &strides);
            let lt = &mut levels[l];
            let s = lt.stride as f64;
            let (cx, cy) = (0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2));
            let col = ((cx / s).floor().max(0.0) as usize).min(lt.w - 1);
            let row = ((cy / s).floor().max(0.0) as usize).min(lt.h - 1);
            let t = CellTarget {
                class: b.class,
                offsets: [
                    cx / s - col as f64,
                    cy / s - row as f64,
                    ((b.x2 - b.x1) / s).ln(),
                    ((b.y2 - b.y1) / s).ln(),
                ],
                key: b.rank_key(),
            };
            let slot = &mut lt.cells[(n * lt.h + row) * lt.w + col];
            match slot {
                Some(old) if old.key.partial_cmp(&t.key) != Some(std::cmp::Ordering::Greater) => {}
                _ => *slot = Some(t),
            }
        }
    }
    Targets { levels, skipped }
}
