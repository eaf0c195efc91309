use hstrnet::fusion::reconstruct;
use hstrnet::metrics::{psnr, ssim, PSNR_CAP};
use hstrnet::network::PadRecord;
use hstrnet::pipeline::{window_starts, STRIDE, WINDOW};
use hstrnet::resample::degrade;
use hstrnet::train::epoch_order;
use hstrnet::ImageF;
use proptest::prelude::*;

fn image(h: usize, w: usize, data: &[f32]) -> ImageF {
    ImageF::from_fn(h, w, |y, x, c| data[((y * w + x) * 3 + c) % data.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn blend_endpoints_are_exact(h in 1usize..12, w in 1usize..12, a in prop::collection::vec(0.0f32..1.0, 48), b in prop::collection::vec(0.0f32..1.0, 48)) {
        let (warped, lr) = (image(h, w, &a), image(h, w, &b));
        let zero = vec![0.0; h * w * 3];
        prop_assert_eq!(reconstruct(&warped, &lr, &zero, &vec![1.0; h * w]).unwrap(), warped.clone());
        prop_assert_eq!(reconstruct(&warped, &lr, &zero, &vec![0.0; h * w]).unwrap(), lr);
    }

    #[test]
    fn metrics_are_symmetric(a in prop::collection::vec(0.0f32..1.0, 60), b in prop::collection::vec(0.0f32..1.0, 60)) {
        let (x, y) = (image(12, 14, &a), image(12, 14, &b));
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        prop_assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        prop_assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    }

    #[test]
    fn degradation_keeps_size_and_range(hk in 1usize..6, wk in 1usize..6, a in prop::collection::vec(0.0f32..1.0, 30)) {
        let img = image(4 * hk, 4 * wk, &a);
        let lr = degrade(&img, 4).unwrap();
        prop_assert_eq!(lr.dims(), img.dims());
        prop_assert!(lr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn padding_reaches_the_multiple(h in 1usize..500, w in 1usize..500) {
        let p = PadRecord::new(h, w, 16);
        prop_assert_eq!(p.padded_height % 16, 0);
        prop_assert_eq!(p.padded_width % 16, 0);
        prop_assert!(p.padded_height - h < 16 && p.padded_width - w < 16);
        prop_assert_eq!(p.top + p.bottom + h, p.padded_height);
        prop_assert_eq!(p.left + p.right + w, p.padded_width);
        prop_assert_eq!(p.is_identity(), h % 16 == 0 && w % 16 == 0);
    }

    #[test]
    fn windows_stay_in_range(n in 5usize..200) {
        let starts = window_starts(n).unwrap();
        prop_assert_eq!(starts[0], 0);
        prop_assert!(starts.iter().all(|s| s + WINDOW <= n));
        prop_assert!(starts.windows(2).all(|p| p[1] - p[0] == STRIDE));
        prop_assert!(starts.last().unwrap() + WINDOW + STRIDE > n);
    }

    #[test]
    fn epoch_order_is_a_permutation(n in 1usize..64, seed in any::<u64>(), epoch in 0usize..8) {
        let mut order = epoch_order(n, seed, epoch);
        prop_assert_eq!(&order, &epoch_order(n, seed, epoch));
        order.sort();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }
}
