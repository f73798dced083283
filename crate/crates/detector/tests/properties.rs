use lim_core::{ParamStore, Tensor4};
use lim_detector::decode::{decode_and_nms, Detection};
use lim_detector::train::{train, train_step};
use lim_detector::{assign_targets, load_split, nms, Dataset, Detector, DetectorConfig, GtBox, Sgd, TrainConfig, Variant};
use lim_eval::BoundingBox;
use lim_synth::{write_dataset, DatasetConfig, ShapeKind, Split};
use proptest::prelude::*;

fn cfg64() -> DetectorConfig {
    DetectorConfig {
        resolution: 64,
        ..DetectorConfig::default()
    }
}

/// Head maps encoding each target cell with near-certain scores.
fn encode(boxes: &[Vec<GtBox>], cfg: &DetectorConfig) -> Vec<Tensor4<f64>> {
    let targets = assign_targets(boxes, cfg);
    targets
        .levels
        .iter()
        .map(|l| {
            let mut t = Tensor4::full((l.batch, cfg.head_channels(), l.h, l.w), 0.0);
            let s = t.shape();
            for n in 0..l.batch {
                for r in 0..l.h {
                    for c in 0..l.w {
                        match &l.cells[(n * l.h + r) * l.w + c] {
                            Some(ct) => {
                                t[s.offset(n, 0, r, c)] = 30.0;
                                for k in 0..4 {
                                    t[s.offset(n, 1 + k, r, c)] = ct.offsets[k];
                                }
                                t[s.offset(n, 5 + ct.class, r, c)] = 30.0;
                            }
                            None => t[s.offset(n, 0, r, c)] = -30.0,
                        }
                    }
                }
            }
            t
        })
        .collect()
}

fn gt_box() -> impl Strategy<Value = GtBox> {
    (1.0f64..40.0, 1.0f64..40.0, 0.0f64..1.0, 0.0f64..1.0, 0usize..3).prop_map(|(w, h, fx, fy, class)| {
        let x1 = fx * (64.0 - w);
        let y1 = fy * (64.0 - h);
        GtBox { x1, y1, x2: x1 + w, y2: y1 + h, class }
    })
}

fn detection() -> impl Strategy<Value = (f64, f64, f64, f64, usize, f64)> {
    (0.0f64..50.0, 0.0f64..50.0, 1.0f64..20.0, 1.0f64..20.0, 0usize..2, 0.0f64..1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoded_targets_decode_to_their_boxes(boxes in prop::collection::vec(gt_box(), 1..5)) {
        let cfg = cfg64();
        let batch: Vec<Vec<GtBox>> = boxes.iter().map(|b| vec![*b]).collect();
        let dets = decode_and_nms(&encode(&batch, &cfg), &cfg.strides(), cfg.classes, 64.0, 0.5, 0.5);
        for (b, d) in boxes.iter().zip(&dets) {
            prop_assert_eq!(d.len(), 1);
            let got = d[0].bbox;
            prop_assert_eq!(d[0].class, b.class);
            for (x, y) in [(got.x1, b.x1), (got.y1, b.y1), (got.x2, b.x2), (got.y2, b.y2)] {
                prop_assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", got, b);
            }
        }
    }

    #[test]
    fn assignment_ignores_annotation_order(
        (boxes, shuffled) in prop::collection::vec(gt_box(), 0..10)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
    ) {
        let cfg = cfg64();
        prop_assert_eq!(assign_targets(&[boxes], &cfg), assign_targets(&[shuffled], &cfg));
    }

    #[test]
    fn nms_ignores_input_order(
        (dets, perm) in prop::collection::vec(detection(), 0..20)
            .prop_flat_map(|v| {
                let n = v.len();
                (Just(v), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            })
    ) {
        let dets: Vec<Detection> = dets
            .iter()
            .enumerate()
            .map(|(index, &(x, y, w, h, class, score))| Detection {
                bbox: BoundingBox::new(x, y, x + w, y + h).unwrap(),
                class,
                score: (score * 8.0).round() / 8.0,
                index,
            })
            .collect();
        let permuted: Vec<Detection> = perm.iter().map(|&i| dets[i]).collect();
        let kept = nms(dets, 0.5, 100);
        prop_assert_eq!(&kept, &nms(permuted, 0.5, 100));
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class != b.class || lim_eval::iou(&a.bbox, &b.bbox) < 0.5);
            }
        }
    }
}

fn tiny() -> (DetectorConfig, Dataset<f32>, Dataset<f32>, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let data = DatasetConfig {
        width: 32,
        height: 32,
        min_size: 4.0,
        max_size: 10.0,
        ..DatasetConfig::default()
    };
    write_dataset(20, dir.path(), 5, &data).unwrap();
    let labels = ShapeKind::labels(3);
    let train_set = load_split(dir.path(), Split::Train, &labels).unwrap();
    let test_set = load_split(dir.path(), Split::Test, &labels).unwrap();
    let cfg = DetectorConfig {
        resolution: 32,
        levels: 2,
        width: 4,
        stem_channels: 2,
        variant: Variant::Full,
        ..DetectorConfig::default()
    };
    (cfg, train_set, test_set, dir)
}

#[test]
fn one_step_reduces_batch_loss() {
    let (cfg, train_set, _, _dir) = tiny();
    let mut store = ParamStore::new();
    let model = Detector::init(&cfg, &mut store, 3).unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut sgd = Sgd::new(&store, tc);
    let idx: Vec<usize> = (0..8).collect();
    let before = train_step(&model, &mut store, &mut sgd, &train_set, &idx).unwrap().total;
    let after = train_step(&model, &mut store, &mut sgd, &train_set, &idx).unwrap().total;
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn training_is_repeatable() {
    let (cfg, train_set, test_set, _dir) = tiny();
    let tc = TrainConfig {
        batch_size: 4,
        steps: 12,
        eval_every: 6,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut store = ParamStore::new();
        let model = Detector::init(&cfg, &mut store, 3).unwrap();
        let r = train(&model, &mut store, &train_set, &test_set, &tc, &mut |_, _| {}).unwrap();
        (r.losses, r.evals)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.len(), 12);
    assert_eq!(a.1.len(), 2);
    assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.1, b.1);
}
