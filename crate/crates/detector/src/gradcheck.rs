//! Gradient checks for the detector's own differentiable pieces, in the form
//! consumed by [`lim_core::gradcheck::run_check`].

use std::rc::Rc;

use lim_core::gradcheck::{flatten_levels, OpCheck};
use lim_core::{ParamStore, Tensor4};

use crate::config::{DetectorConfig, Variant};
use crate::loss::detection_loss_op;
use crate::model::{Detector, Phase};
use crate::targets::{assign_targets, GtBox};

fn small_config(variant: Variant) -> DetectorConfig {
    DetectorConfig {
        resolution: 32,
        levels: 2,
        width: 3,
        stem_channels: 2,
        classes: 2,
        variant,
        ..DetectorConfig::default()
    }
}

pub fn detector_checks() -> Vec<OpCheck> {
    let cfg = small_config(Variant::Baseline);
    let boxes = vec![
        vec![
            GtBox { x1: 1.0, y1: 2.0, x2: 7.0, y2: 6.5, class: 1 },
            GtBox { x1: 9.0, y1: 8.0, x2: 27.0, y2: 30.0, class: 0 },
        ],
        vec![GtBox { x1: 12.0, y1: 3.0, x2: 22.0, y2: 11.0, class: 1 }],
    ];
    let targets = Rc::new(assign_targets(&boxes, &cfg));
    let shapes: Vec<(usize, usize, usize, usize)> = targets
        .levels
        .iter()
        .map(|l| (l.batch, cfg.head_channels(), l.h, l.w))
        .collect();
    let loss = OpCheck::new(
        "detection_loss",
        move |s| {
            shapes
                .iter()
                .enumerate()
                .map(|(l, &sh)| Tensor4::randn(sh, s * 7 + l as u64, 1.5))
                .collect()
        },
        move |t, v| Ok(detection_loss_op(t, v, &targets, 2).map_err(|e| lim_core::Error::Config(e.to_string()))?.0),
    );

    let backbone_cfg = small_config(Variant::Baseline);
    let mut store = ParamStore::<f64>::new();
    let model = Rc::new(Detector::init(&backbone_cfg, &mut store, 11).expect("valid config"));
    let store = Rc::new(store);
    let m = model.clone();
    let backbone = OpCheck::new(
        "backbone",
        move |s| vec![Tensor4::randn(m.input_shape(1), s, 1.0)],
        move |t, v| {
            let b = store.bind(t);
            let levels = model
                .backbone_op(t, &store, &b, v[0], Phase::Train, &mut Vec::new())
                .map_err(|e| lim_core::Error::Config(e.to_string()))?;
            flatten_levels(t, &levels)
        },
    );

    let full_cfg = DetectorConfig {
        resolution: 16,
        ..small_config(Variant::Full)
    };
    let mut store = ParamStore::<f64>::new();
    let model = Rc::new(Detector::init(&full_cfg, &mut store, 13).expect("valid config"));
    let neck: Vec<_> = store.ids().filter(|&id| store.entry(id).name.starts_with("lim.")).collect();
    for (k, id) in neck.into_iter().enumerate() {
        let shape = store.get(id).shape();
        *store.get_mut(id) = Tensor4::randn(shape, 500 + k as u64, 0.5);
    }
    let store = Rc::new(store);
    let m = model.clone();
    let detector = OpCheck::new(
        "detector_forward",
        move |s| vec![Tensor4::randn(m.input_shape(2), s, 1.0)],
        move |t, v| {
            let b = store.bind(t);
            let f = model
                .forward_op(t, &store, &b, v[0], Phase::Train)
                .map_err(|e| lim_core::Error::Config(e.to_string()))?;
            flatten_levels(t, &f.heads)
        },
    );
    vec![loss, backbone, detector]
}
