mod support;

use proptest::prelude::*;
use rockflow_core::metrics::{area_error, mse, pcc, ssim};
use support::{pcc_oracle, worst_metric_deviation};

#[test]
fn thousand_random_grids_match_brute_force() {
    let worst = worst_metric_deviation(1000, 2024);
    assert!(worst.iter().all(|&w| w < 1e-6), "{worst:?}");
}

#[test]
fn oracles_agree_on_a_hand_computed_pair() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [2.0, 4.0, 5.0, 9.0];
    // deviations from the means 2.5 and 5: sum of products 11, squares 5 and 26
    let r = 11.0 / (5.0f64 * 26.0).sqrt();
    assert!((pcc_oracle(&x, &y).unwrap() - r).abs() < 1e-12);
    assert!((pcc(&x, &y).unwrap().unwrap() - r).abs() < 1e-12);
}

#[test]
fn ssim_of_inverted_half_plane_matches_reference() {
    let x: Vec<f64> = (0..256).map(|k| if k % 16 < 8 { 1.0 } else { 0.0 }).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
    let s = ssim(&x, &y, 16, 16).unwrap();
    // scikit-image structural_similarity, Gaussian weights, population covariance
    assert!((s - (-0.43529683658849117)).abs() < 1e-6, "{s}");
    assert!(s < 0.0);
}

#[test]
fn ssim_of_offset_constants_matches_reference() {
    let s = ssim(&[0.3f64; 256], &[0.4f64; 256], 16, 16).unwrap();
    assert!((s - 0.9600159936025592).abs() < 1e-6, "{s}");
    assert!(s > 0.0 && s < 1.0);
}

#[test]
fn ssim_of_smooth_patterns_matches_reference() {
    let (h, w) = (20, 24);
    let x: Vec<f64> = (0..h * w).map(|k| 0.5 + 0.4 * (0.7 * (k / w) as f64 + 0.3 * (k % w) as f64).sin()).collect();
    let y: Vec<f64> = (0..h * w).map(|k| 0.5 + 0.35 * (0.5 * (k / w) as f64 - 0.2 * (k % w) as f64).cos()).collect();
    let s = ssim(&x, &y, h, w).unwrap();
    assert!((s - (-0.014864104292801491)).abs() < 1e-6, "{s}");
}

fn grid() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 256)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pcc_is_symmetric_and_affine_invariant(x in grid(), y in grid(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let p = pcc(&x, &y).unwrap().unwrap();
        prop_assert!((p - pcc(&y, &x).unwrap().unwrap()).abs() < 1e-12);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((p - pcc(&ax, &y).unwrap().unwrap()).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&p));
    }

    #[test]
    fn ssim_is_symmetric_and_one_only_on_identity(x in grid(), y in grid()) {
        let s = ssim(&x, &y, 16, 16).unwrap();
        prop_assert!((s - ssim(&y, &x, 16, 16).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&x, &x, 16, 16).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!(s < 1.0 - 1e-9);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn area_error_is_antisymmetric(x in grid(), y in grid()) {
        prop_assert_eq!(area_error(&x, &y, 0.5).unwrap(), -area_error(&y, &x, 0.5).unwrap());
    }

    #[test]
    fn mse_is_non_negative(x in grid(), y in grid()) {
        prop_assert!(mse(&x, &y).unwrap() >= 0.0);
    }
}
