use std::collections::{BTreeSet, HashMap};

use crate::bbox::{iou, Annotation, Detection};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub ground_truths: usize,
    pub detections: usize,
    pub true_positives: usize,
    /// Set when there were no ground truths; `ap` is then 0.
    pub no_ground_truth: bool,
}

/// All-points interpolated AP for a single category.
///
/// Detections are visited by descending score, equal scores in input order.
/// Each one claims the unmatched ground truth of its image with the highest
/// IoU, provided that IoU reaches `iou_thresh`.
pub fn average_precision(dets: &[Detection], gts: &[Annotation], iou_thresh: f64) -> ApResult {
    let mut by_image: HashMap<&str, Vec<(usize, bool)>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image.as_str()).or_default().push((i, false));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut hits = Vec::with_capacity(dets.len());
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(f64, usize)> = None;
        if let Some(cands) = by_image.get(det.image.as_str()) {
            for (slot, &(g, used)) in cands.iter().enumerate() {
                if used {
                    continue;
                }
                let o = iou(&det.bbox, &gts[g].bbox);
                if o >= iou_thresh && best.is_none_or(|(b, _)| o > b) {
                    best = Some((o, slot));
                }
            }
        }
        if let Some((_, slot)) = best {
            by_image.get_mut(det.image.as_str()).unwrap()[slot].1 = true;
        }
        hits.push(best.is_some());
    }

    let n_gt = gts.len();
    let tp_total = hits.iter().filter(|&&h| h).count();
    let result = |ap| ApResult {
        ap,
        ground_truths: n_gt,
        detections: dets.len(),
        true_positives: tp_total,
        no_ground_truth: n_gt == 0,
    };
    if n_gt == 0 {
        return result(0.0);
    }

    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Precision envelope from the right, then area over recall steps.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    result(ap)
}

/// Unweighted mean.
pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::NoCategories);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_class: Vec<(String, ApResult)>,
    pub map: f64,
}

impl Evaluation {
    /// Aligned text table, one row per category plus the mean.
    pub fn table(&self) -> String {
        let width = self.per_class.iter().map(|(c, _)| c.len()).max().unwrap_or(0).max(8);
        let mut s = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>8}\n", "category", "gt", "det", "tp", "AP@0.5");
        for (c, r) in &self.per_class {
            s += &format!(
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>8.4}\n",
                c, r.ground_truths, r.detections, r.true_positives, r.ap
            );
        }
        s += &format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>8.4}\n", "mAP", "", "", "", self.map);
        s
    }
}

/// Per-category AP and their mean. With empty `categories`, every category
/// seen in the ground truth is evaluated, in sorted order.
pub fn evaluate(dets: &[Detection], gts: &[Annotation], categories: &[String], iou_thresh: f64) -> Result<Evaluation> {
    let cats: Vec<String> = if categories.is_empty() {
        gts.iter().map(|g| g.category.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        categories.to_vec()
    };
    let per_class: Vec<(String, ApResult)> = cats
        .into_iter()
        .map(|c| {
            let d: Vec<Detection> = dets.iter().filter(|d| d.category == c).cloned().collect();
            let g: Vec<Annotation> = gts.iter().filter(|g| g.category == c).cloned().collect();
            let r = average_precision(&d, &g, iou_thresh);
            (c, r)
        })
        .collect();
    let aps: Vec<f64> = per_class.iter().map(|(_, r)| r.ap).collect();
    let map = mean_ap(&aps)?;
    Ok(Evaluation { per_class, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BoundingBox;

    fn gt(img: &str, b: [f64; 4]) -> Annotation {
        Annotation {
            image: img.into(),
            category: "c".into(),
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        }
    }

    fn det(img: &str, s: f64, b: [f64; 4]) -> Detection {
        Detection::new(img, "c", s, BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()).unwrap()
    }

    #[test]
    fn single_hit_is_perfect() {
        // A detection covering 60% of the ground truth has IoU 0.6.
        let g = gt("i", [0.0, 0.0, 10.0, 10.0]);
        let d = det("i", 0.9, [0.0, 0.0, 10.0, 6.0]);
        assert!((iou(&g.bbox, &d.bbox) - 0.6).abs() < 1e-12);
        assert_eq!(average_precision(&[d], &[g], 0.5).ap, 1.0);
    }

    #[test]
    fn no_detections_is_zero() {
        let r = average_precision(&[], &[gt("i", [0.0, 0.0, 1.0, 1.0])], 0.5);
        assert_eq!(r.ap, 0.0);
        assert!(!r.no_ground_truth);
    }

    #[test]
    fn miss_then_hit_is_half() {
        let g = gt("i", [0.0, 0.0, 10.0, 10.0]);
        let miss = det("i", 0.9, [50.0, 50.0, 60.0, 60.0]);
        let hit = det("i", 0.8, [0.0, 0.0, 10.0, 10.0]);
        assert_eq!(average_precision(&[hit, miss], &[g], 0.5).ap, 0.5);
    }

    #[test]
    fn no_ground_truth_is_flagged() {
        let r = average_precision(&[det("i", 0.5, [0.0, 0.0, 1.0, 1.0])], &[], 0.5);
        assert_eq!(r.ap, 0.0);
        assert!(r.no_ground_truth);
    }

    #[test]
    fn ground_truth_used_once() {
        let g = gt("i", [0.0, 0.0, 10.0, 10.0]);
        let a = det("i", 0.9, [0.0, 0.0, 10.0, 10.0]);
        let b = det("i", 0.8, [0.0, 0.0, 10.0, 9.0]);
        let r = average_precision(&[a, b], &[g], 0.5);
        assert_eq!(r.true_positives, 1);
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn matching_stays_within_image() {
        let g = gt("a", [0.0, 0.0, 10.0, 10.0]);
        let d = det("b", 0.9, [0.0, 0.0, 10.0, 10.0]);
        assert_eq!(average_precision(&[d], &[g], 0.5).ap, 0.0);
    }

    #[test]
    fn iou_threshold_is_inclusive() {
        let g = gt("i", [0.0, 0.0, 10.0, 10.0]);
        let d = det("i", 0.9, [0.0, 0.0, 10.0, 5.0]);
        assert_eq!(average_precision(&[d], &[g], 0.5).ap, 1.0);
    }

    #[test]
    fn means() {
        assert_eq!(mean_ap(&[0.7]).unwrap(), 0.7);
        assert_eq!(mean_ap(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_ap(&[0.8, 0.6, 0.7]).unwrap() - 0.7).abs() < 1e-15);
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn evaluate_splits_categories() {
        let mut g2 = gt("i", [20.0, 20.0, 30.0, 30.0]);
        g2.category = "d".into();
        let gts = vec![gt("i", [0.0, 0.0, 10.0, 10.0]), g2];
        let dets = vec![det("i", 0.9, [0.0, 0.0, 10.0, 10.0])];
        let e = evaluate(&dets, &gts, &[], 0.5).unwrap();
        assert_eq!(e.per_class[0].1.ap, 1.0);
        assert_eq!(e.per_class[1].1.ap, 0.0);
        assert_eq!(e.map, 0.5);
        assert!(e.table().contains("mAP"));
    }
}
