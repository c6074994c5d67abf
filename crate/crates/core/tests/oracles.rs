mod common;

use common::oracle::*;
use reactxgb::gbdt::{train_ensemble, GbdtConfig};

#[test]
fn binary_conv_matches_sign_conv_on_1000_geometries() {
    for seed in 0..1000 {
        binary_conv_case(seed).unwrap();
    }
}

#[test]
fn best_split_and_grow_tree_match_brute_force() {
    for seed in 0..300 {
        split_case(seed).unwrap_or_else(|e| panic!("seed {}: {}", seed, e));
    }
}

#[test]
fn tie_breaks_prefer_lowest_feature_then_lowest_threshold() {
    // features 0 and 1 are identical and both separate the classes at two
    // equally good places
    use reactxgb::data::FeatureMatrix;
    use reactxgb::gbdt::{best_split, SortedColumns};
    let col = [0.0, 1.0, 2.0, 3.0];
    let values: Vec<f64> = col.iter().flat_map(|&v| [5.0, v, v]).collect();
    let x = FeatureMatrix::new(4, 3, values, vec![0; 4]).unwrap();
    let g = [-1.0, 1.0, 1.0, -1.0];
    let h = [1.0; 4];
    let cfg = GbdtConfig {
        reg_lambda: 1.0,
        min_child_weight: 0.0,
        class_count: 2,
        ..GbdtConfig::default()
    };
    let s = best_split(&SortedColumns::new(&x), &g, &h, &[0, 1, 2, 3], &cfg).unwrap();
    assert_eq!((s.feature, s.threshold), (1, 0.5));
}

#[test]
fn boosting_loss_never_increases_on_synthetic_data() {
    for seed in 0..50 {
        let (x, k) = synthetic_features(seed);
        let cfg = GbdtConfig {
            class_count: k,
            max_depth: 1 + seed as usize % 6,
            ..GbdtConfig::default()
        };
        let (_, log) = train_ensemble(&x, &cfg).unwrap();
        for w in log.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "seed {}: {:?}", seed, w);
        }
    }
}
