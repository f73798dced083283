use std::fs;

use lim_synth::scene::ShapeDesc;
use lim_synth::{generate_scene, read_manifest, write_dataset, DatasetConfig, SceneSpec};
use proptest::prelude::*;

#[test]
fn regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = DatasetConfig::default();
    write_dataset(12, a.path(), 42, &cfg).unwrap();
    write_dataset(12, b.path(), 42, &cfg).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12 * 2 + 1);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn annotations_lie_inside_images_and_match_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig::default();
    let m = write_dataset(20, dir.path(), 7, &cfg).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap(), m);
    for e in &m.entries {
        let anns = lim_eval::parse_annotation_file(dir.path().join(e.annotation_file()), &[]).unwrap();
        assert!(anns.is_clean());
        assert_eq!(anns.items.len(), e.instances);
        for a in &anns.items {
            let b = a.bbox;
            assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= cfg.width as f64 && b.y2 <= cfg.height as f64);
        }
        assert!(e.occlusion.iter().all(|o| (0.0..=1.0).contains(o)));
    }
}

fn spec_strategy() -> impl Strategy<Value = SceneSpec> {
    (0u64..10_000).prop_map(|seed| SceneSpec::random(40, 40, 3, (6.0, 20.0), seed).unwrap())
}

proptest! {
    #[test]
    fn image_is_independent_of_draw_order(spec in spec_strategy(), rot in 0usize..10) {
        let mut shuffled = spec.clone();
        let k = rot % spec.shapes.len();
        shuffled.shapes.rotate_left(k);
        let (a, b) = (generate_scene(&spec), generate_scene(&shuffled));
        prop_assert_eq!(&a.image, &b.image);
        let boxes = |s: &lim_synth::Scene| {
            let mut v: Vec<_> = s.instances.iter().map(|i| format!("{:?}", i.bbox)).collect();
            v.sort();
            v
        };
        prop_assert_eq!(boxes(&a), boxes(&b));
    }

    #[test]
    fn box_is_tight_hull_of_shape(spec in spec_strategy()) {
        let scene = generate_scene(&spec);
        let shapes: Vec<&ShapeDesc> = spec.shapes.iter().collect();
        for (inst, s) in scene.instances.iter().zip(shapes) {
            let b = inst.bbox;
            let (x1, y1, x2, y2) = (b.x1 as usize, b.y1 as usize, b.x2 as usize, b.y2 as usize);
            let row_hit = |y: usize| (x1..x2).any(|x| s.covers(x as f64 + 0.5, y as f64 + 0.5));
            let col_hit = |x: usize| (y1..y2).any(|y| s.covers(x as f64 + 0.5, y as f64 + 0.5));
            prop_assert!(row_hit(y1) && row_hit(y2 - 1) && col_hit(x1) && col_hit(x2 - 1));
        }
    }
}
