use lim_core::boundary::{
    directional_max_scan, directional_max_scan_naive, directional_max_scan_routed, scan_backward, ScanDirection,
};
use lim_core::nn::{batch_norm, downsample_max, upsample_nearest, BatchNormState};
use lim_core::{Shape4, Tensor4};
use proptest::prelude::*;

fn int_tensor(max_dim: usize) -> impl Strategy<Value = Tensor4<f64>> {
    (1..=2usize, 1..=3usize, 1..=max_dim, 1..=max_dim).prop_flat_map(|(n, c, h, w)| {
        proptest::collection::vec(-20i32..20, n * c * h * w).prop_map(move |v| {
            Tensor4::from_vec(Shape4::new(n, c, h, w), v.into_iter().map(f64::from).collect()).unwrap()
        })
    })
}

fn direction() -> impl Strategy<Value = ScanDirection> {
    prop::sample::select(ScanDirection::ALL.to_vec())
}

proptest! {
    #[test]
    fn fast_scan_equals_naive(a in int_tensor(9), d in direction()) {
        let naive = directional_max_scan_naive(&a, d);
        prop_assert_eq!(&directional_max_scan(&a, d), &naive);
        prop_assert_eq!(&directional_max_scan_routed(&a, d).output, &naive);
    }

    #[test]
    fn scan_dominates_input(a in int_tensor(8), d in direction()) {
        let s = directional_max_scan(&a, d);
        for (o, i) in s.data().iter().zip(a.data()) {
            prop_assert!(o >= i);
        }
    }

    #[test]
    fn scan_is_idempotent(a in int_tensor(8), d in direction()) {
        let s = directional_max_scan(&a, d);
        prop_assert_eq!(directional_max_scan(&s, d), s);
    }

    #[test]
    fn scan_is_monotone(a in int_tensor(8), bump in proptest::collection::vec(0u8..5, 1..600), d in direction()) {
        let b = Tensor4::from_vec(a.shape(), (0..a.len()).map(|i| a[i] + f64::from(bump[i % bump.len()])).collect()).unwrap();
        let (sa, sb) = (directional_max_scan(&a, d), directional_max_scan(&b, d));
        for (x, y) in sa.data().iter().zip(sb.data()) {
            prop_assert!(x <= y);
        }
    }

    #[test]
    fn scan_backward_conserves_mass(a in int_tensor(8), d in direction(), seed in 0u64..1000) {
        let g = Tensor4::from_vec(a.shape(), (0..a.len() as u64).map(|i| ((i * 7 + seed) % 11) as f64 - 5.0).collect()).unwrap();
        let back = scan_backward(&a, d, &g).unwrap();
        prop_assert_eq!(back.sum(), g.sum());
    }

    #[test]
    fn downsample_inverts_upsample(a in int_tensor(5), m in 1u32..3) {
        prop_assert_eq!(downsample_max(&upsample_nearest(&a, m), m).unwrap(), a);
    }

    #[test]
    fn upsample_multiplies_extent(a in int_tensor(5), m in 1u32..3) {
        let s = upsample_nearest(&a, m).shape();
        prop_assert_eq!((s.h, s.w), (a.shape().h << m, a.shape().w << m));
    }

    #[test]
    fn tensor_addition_commutes(a in int_tensor(6)) {
        let b = a.map(|v| 2.0 * v - 1.0);
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        prop_assert_eq!(a.add(&Tensor4::zeros(a.shape())).unwrap(), a.clone());
    }

    #[test]
    fn train_batch_norm_centers_channels(a in int_tensor(6)) {
        prop_assume!(a.shape().n * a.shape().h * a.shape().w >= 2);
        let mut s = BatchNormState::new(a.shape().c);
        let y = batch_norm(&a, &mut s).unwrap();
        let sh = y.shape();
        for c in 0..sh.c {
            let mut sum = 0.0;
            for n in 0..sh.n {
                sum += y.plane(n, c).iter().sum::<f64>();
            }
            prop_assert!(sum.abs() < 1e-9);
        }
    }
}
