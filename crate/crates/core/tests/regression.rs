use strsparse::experiments::sparse_regression::{
    regression_train_config, sparse_regression_run, support_score, RegressionOptions, SparseRegressionProblem,
};
use strsparse::{Granularity, TrainConfig};

/// Condition number above which plain GD cannot reach 1e-6 in the step budget.
const MAX_COND: f64 = 100.0;

#[test]
fn square_system_recovers_w_star_with_zero_threshold() {
    let (d, r) = (10, 3);
    let opts = RegressionOptions { granularity: Granularity::PerLayer, ..RegressionOptions::default() };
    let mut checked = 0;
    for seed in 0..6 {
        let sv = SparseRegressionProblem::generate(d, d, r, seed).unwrap().x.svd(false, false).singular_values;
        if sv.max() / sv.min() > MAX_COND {
            continue;
        }
        let cfg = TrainConfig { lambda: 0.0, s_init: -3200.0, base_lr: 0.2, epochs: 20000, ..regression_train_config(d, seed) };
        let out = sparse_regression_run(d, d, r, &opts, &cfg).unwrap();
        assert!(out.error <= 1e-6, "seed {seed}: ||w~ - w*|| = {:e}", out.error);
        checked += 1;
    }
    assert!(checked >= 4, "only {checked} well-conditioned designs");
}

#[test]
fn empty_support_scores_one() {
    let cfg = TrainConfig { epochs: 300, ..regression_train_config(20, 3) };
    let out = sparse_regression_run(40, 20, 0, &RegressionOptions::default(), &cfg).unwrap();
    assert!(out.support.is_empty());
    assert_eq!(out.nnz, 0, "recovered {:?}", out.recovered);
    assert_eq!(out.f1, 1.0);
}

#[test]
fn support_has_r_unit_entries_and_noiseless_targets() {
    let p = SparseRegressionProblem::generate(50, 20, 4, 7).unwrap();
    assert_eq!(p.support.len(), 4);
    assert_eq!(p.w_star.iter().filter(|&&v| v == 1.0).count(), 4);
    assert_eq!(p.w_star.iter().filter(|&&v| v != 0.0).count(), 4);
    assert!((&p.x * &p.w_star - &p.y).norm() == 0.0);
    assert!(p.identifiable());
}

#[test]
fn f1_definition() {
    let s = support_score(&[1, 2, 3, 4], &[1, 2]);
    assert_eq!((s.precision, s.recall), (0.5, 1.0));
    assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(support_score(&[5], &[]).f1, 0.0);
}
