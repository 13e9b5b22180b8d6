mod common;

use proptest::prelude::*;
use rand::Rng;

use common::rng;
use gap_core::features::{extract_features, gaussian_patch_weights, reflect_index, FeatureConfig};
use gap_core::metrics::{
    boundary_accuracy, boundary_distance_map, collapse_sediment, overall_accuracy, EvalReport,
};
use gap_core::raster_io::{LabelMask, RasterPatch};

fn brute_force_db(mask: &LabelMask) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let l = mask.labels();
    (0..h * w)
        .map(|p| {
            if l[p] == 255 {
                return f64::INFINITY;
            }
            (0..h * w)
                .filter(|&q| l[q] != 255 && l[q] != l[p])
                .map(|q| {
                    let dr = (q / w) as i64 - (p / w) as i64;
                    let dc = (q % w) as i64 - (p % w) as i64;
                    ((dr * dr + dc * dc) as f64).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> LabelMask {
    let codes = [0u8, 1, 2, 255];
    let used = rng.gen_range(1..=4);
    let sparse = rng.gen_bool(0.5);
    let labels = (0..h * w)
        .map(|_| {
            if sparse && rng.gen_bool(0.9) {
                0
            } else {
                codes[rng.gen_range(0..used)]
            }
        })
        .collect();
    LabelMask::new(h, w, labels).unwrap()
}

fn naive_reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    (if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i }) as usize
}

#[test]
fn reflection_examples() {
    assert_eq!(reflect_index(3, 5).unwrap(), 3);
    assert_eq!(reflect_index(-1, 5).unwrap(), 1);
    assert_eq!(reflect_index(6, 5).unwrap(), 2);
    assert!(reflect_index(-1, 1).is_err());
}

#[test]
fn corner_weight_for_k3() {
    let w = gaussian_patch_weights(&FeatureConfig::new(3, 1.5));
    assert_eq!(w[24], 1.0);
    assert!((w[0] - (-4.0f64).exp()).abs() < 1e-15);
}

#[test]
fn boundary_accuracy_ignores_far_errors() {
    let truth = LabelMask::new(1, 20, (0..20).map(|i| (i >= 10) as u8).collect()).unwrap();
    let mut labels = truth.labels().to_vec();
    labels[1] = 1;
    let pred = LabelMask::new(1, 20, labels).unwrap();
    assert_eq!(boundary_accuracy(&pred, &truth, 3.0).unwrap(), Some(1.0));
    assert_eq!(overall_accuracy(&pred, &truth).unwrap(), Some(0.95));
    assert_eq!(boundary_accuracy(&pred, &truth, 9.0).unwrap(), Some(17.0 / 18.0));
}

#[test]
fn naive_all_land_classifier() {
    let mut labels = vec![0u8; 100];
    labels[80..].fill(1);
    let truth = LabelMask::new(10, 10, labels).unwrap();
    let land = LabelMask::filled(10, 10, 0).unwrap();
    assert_eq!(overall_accuracy(&land, &truth).unwrap(), Some(0.8));
}

#[test]
fn collapse_is_idempotent() {
    let m = LabelMask::new(1, 4, vec![0, 1, 2, 255]).unwrap();
    let once = collapse_sediment(&m);
    assert_eq!(once.labels(), &[0, 1, 0, 255]);
    assert_eq!(collapse_sediment(&once), once);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn distance_map_is_exact(seed in any::<u64>(), h in 1usize..=32, w in 1usize..=32) {
        let mut rng = rng(seed);
        let mask = random_mask(&mut rng, h, w);
        prop_assert_eq!(boundary_distance_map(&mask), brute_force_db(&mask));
    }

    #[test]
    fn distance_map_commutes_with_transpose(seed in any::<u64>(), h in 1usize..=20, w in 1usize..=20) {
        let mut rng = rng(seed);
        let mask = random_mask(&mut rng, h, w);
        let t: Vec<u8> = (0..w * h).map(|p| mask.get(p % h, p / h)).collect();
        let tm = LabelMask::new(w, h, t).unwrap();
        let d = boundary_distance_map(&mask);
        let dt = boundary_distance_map(&tm);
        for r in 0..h {
            for c in 0..w {
                prop_assert_eq!(d[r * w + c], dt[c * h + r]);
            }
        }
    }

    #[test]
    fn boundary_band_grows_with_distance(seed in any::<u64>(), h in 2usize..=24, w in 2usize..=24) {
        let mut rng = rng(seed);
        let truth = random_mask(&mut rng, h, w);
        let pred = LabelMask::new(h, w, (0..h * w).map(|_| rng.gen_range(0..3)).collect()).unwrap();
        let distances = [0.0, 1.0, 1.5, 3.0, 10.0, f64::INFINITY];
        let report = EvalReport::evaluate(&pred, &truth, &distances).unwrap();
        let sizes: Vec<usize> = report.ba_denominators().iter().map(|d| d.1).collect();
        prop_assert!(sizes.windows(2).all(|p| p[0] <= p[1]));
        prop_assert_eq!(*sizes.last().unwrap(), report.pixels);
        let total: u64 = report.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, report.pixels);
    }

    #[test]
    fn features_match_naive_loops(seed in any::<u64>(), h in 2usize..=8, w in 2usize..=8, bands in 1usize..=2) {
        let mut rng = rng(seed);
        let k = rng.gen_range(1..h.min(w));
        let sigma = rng.gen_range(0.3..3.0);
        let samples = (0..h * w * bands).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
        let patch = RasterPatch::new(h, w, bands, samples).unwrap();
        let f = extract_features(&patch, &FeatureConfig::new(k, sigma), 3).unwrap();
        prop_assert_eq!(f.dim(), (2 * k + 1) * (2 * k + 1) * bands);
        let k = k as isize;
        for r in 0..h {
            for c in 0..w {
                let mut want = Vec::new();
                for dr in -k..=k {
                    for dc in -k..=k {
                        let wgt = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
                        let (rr, cc) = (naive_reflect(r as isize + dr, h), naive_reflect(c as isize + dc, w));
                        for b in 0..bands {
                            want.push((wgt * patch.sample(rr, cc, b) as f64) as f32);
                        }
                    }
                }
                let got: Vec<u32> = f.row(r * w + c).iter().map(|v| v.to_bits()).collect();
                let want: Vec<u32> = want.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(got, want);
                // The centre entry is the pixel itself.
                let centre = ((2 * k + 1) * k + k) as usize * bands;
                for b in 0..bands {
                    prop_assert_eq!(f.row(r * w + c)[centre + b], patch.sample(r, c, b));
                }
            }
        }
    }
}
