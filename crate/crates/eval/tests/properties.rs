use lim_eval::{average_precision, classify_size, iou, Annotation, BoundingBox, Detection, SizeClass};
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0u32..40, 0u32..40, 1u32..30, 1u32..30)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64).unwrap())
}

fn scene() -> impl Strategy<Value = (Vec<Annotation>, Vec<Detection>)> {
    (
        proptest::collection::vec((0u8..3, bbox()), 1..6),
        proptest::collection::vec((0u8..3, bbox()), 0..10),
    )
        .prop_map(|(g, d)| {
            let gts = g
                .into_iter()
                .map(|(i, b)| Annotation {
                    image: format!("img{i}"),
                    category: "c".into(),
                    bbox: b,
                })
                .collect();
            let n = d.len();
            let dets = d
                .into_iter()
                .enumerate()
                .map(|(k, (i, b))| Detection::new(format!("img{i}"), "c", (k + 1) as f64 / (n + 1) as f64, b).unwrap())
                .collect();
            (gts, dets)
        })
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v == 1.0, a == b);
    }

    #[test]
    fn ap_order_invariant_with_distinct_scores((gts, dets) in scene()) {
        let mut rev = dets.clone();
        rev.reverse();
        prop_assert_eq!(average_precision(&dets, &gts, 0.5).ap, average_precision(&rev, &gts, 0.5).ap);
    }

    #[test]
    fn removing_false_positive_never_lowers_ap((gts, dets) in scene(), pick in 0usize..10) {
        prop_assume!(!dets.is_empty());
        let k = pick % dets.len();
        let best = gts.iter().filter(|g| g.image == dets[k].image).map(|g| iou(&g.bbox, &dets[k].bbox)).fold(0.0, f64::max);
        // A detection overlapping no ground truth enough is a false positive whatever the order.
        prop_assume!(best < 0.5);
        let mut fewer = dets.clone();
        fewer.remove(k);
        prop_assert!(average_precision(&fewer, &gts, 0.5).ap >= average_precision(&dets, &gts, 0.5).ap);
    }

    #[test]
    fn size_classes_partition(b in bbox(), w in 50u32..2000, h in 50u32..2000) {
        let c = classify_size(&b, w as f64, h as f64);
        let r = b.area() / (w as f64 * h as f64);
        let expected = [r < 0.001, (0.001..=0.002).contains(&r), r > 0.002];
        prop_assert_eq!(expected.iter().filter(|&&x| x).count(), 1);
        prop_assert!(expected[SizeClass::ALL.iter().position(|&s| s == c).unwrap()]);
    }
}
