//! Head maps to scored boxes, followed by greedy per-class NMS.

use lim_core::{Real, Tensor4};
use lim_eval::{iou, BoundingBox};

use crate::loss::sigmoid;

/// A decoded prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class: usize,
    pub score: f64,
    /// Position in decode order (level, row, col), used to break score ties.
    pub index: usize,
}

/// Decodes every cell of image `n` whose score `sigmoid(obj) * max softmax`
/// reaches `score_thresh`. Boxes are clipped to the image.
pub fn decode_image<T: Real>(
    heads: &[Tensor4<T>],
    strides: &[usize],
    n: usize,
    classes: usize,
    image_size: f64,
    score_thresh: f64,
) -> Vec<Detection> {
    let mut out = Vec::new();
    let mut index = 0;
    for (pred, &stride) in heads.iter().zip(strides) {
        let s = pred.shape();
        let plane = s.h * s.w;
        let x = pred.data();
        let at = |c: usize, p: usize| x[(n * s.c + c) * plane + p].as_f64();
        let st = stride as f64;
        let max_log = (image_size / st).ln() + 1.0;
        for p in 0..plane {
            let this = index;
            index += 1;
            let obj = sigmoid(at(0, p));
            if obj < score_thresh {
                continue;
            }
            let logits: Vec<f64> = (0..classes).map(|k| at(5 + k, p)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
            let class = logits.iter().position(|&v| v == m).unwrap_or(0);
            let score = obj / z;
            if !(score >= score_thresh) {
                continue;
            }
            let (row, col) = ((p / s.w) as f64, (p % s.w) as f64);
            let cx = (col + at(1, p)) * st;
            let cy = (row + at(2, p)) * st;
            let w = at(3, p).min(max_log).exp() * st;
            let h = at(4, p).min(max_log).exp() * st;
            let raw = BoundingBox {
                x1: cx - w / 2.0,
                y1: cy - h / 2.0,
                x2: cx + w / 2.0,
                y2: cy + h / 2.0,
            };
            if let Some(bbox) = raw.clip(image_size, image_size) {
                out.push(Detection {
                    bbox,
                    class,
                    score,
                    index: this,
                });
            }
        }
    }
    out
}

/// Greedy per-class suppression: highest score first (ties by `index`),
/// dropping any box whose IoU with a kept box of its class is at least
/// `iou_thresh`. At most `max_keep` detections survive.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64, max_keep: usize) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().any(|k| k.class == d.class && iou(&k.bbox, &d.bbox) >= iou_thresh) {
            continue;
        }
        kept.push(d);
    }
    kept
}

pub const MAX_DETECTIONS: usize = 100;

/// Decoding and NMS for every image of a batch.
pub fn decode_and_nms<T: Real>(
    heads: &[Tensor4<T>],
    strides: &[usize],
    classes: usize,
    image_size: f64,
    score_thresh: f64,
    iou_thresh: f64,
) -> Vec<Vec<Detection>> {
    let batch = heads.first().map_or(0, |h| h.shape().n);
    (0..batch)
        .map(|n| {
            nms(
                decode_image(heads, strides, n, classes, image_size, score_thresh),
                iou_thresh,
                MAX_DETECTIONS,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: [f64; 4], class: usize, score: f64, index: usize) -> Detection {
        Detection {
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            class,
            score,
            index,
        }
    }

    #[test]
    fn identical_boxes_keep_best() {
        let kept = nms(vec![det([0., 0., 10., 10.], 0, 0.8, 0), det([0., 0., 10., 10.], 0, 0.9, 1)], 0.5, 10);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn disjoint_boxes_survive() {
        let kept = nms(vec![det([0., 0., 10., 10.], 0, 0.8, 0), det([20., 20., 30., 30.], 0, 0.9, 1)], 0.5, 10);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn iou_of_exactly_half_is_suppressed() {
        // Intersection 50, union 100.
        let a = det([0., 0., 10., 10.], 0, 0.9, 0);
        let b = det([0., 0., 10., 5.], 0, 0.8, 1);
        assert_eq!(iou(&a.bbox, &b.bbox), 0.5);
        assert_eq!(nms(vec![a, b], 0.5, 10).len(), 1);
    }

    #[test]
    fn classes_do_not_suppress_each_other() {
        let kept = nms(vec![det([0., 0., 10., 10.], 0, 0.8, 0), det([0., 0., 10., 10.], 1, 0.9, 1)], 0.5, 10);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn equal_scores_break_by_index() {
        let kept = nms(vec![det([0., 0., 10., 10.], 0, 0.5, 7), det([0., 0., 10., 9.], 0, 0.5, 3)], 0.5, 10);
        assert_eq!(kept[0].index, 3);
    }
}
