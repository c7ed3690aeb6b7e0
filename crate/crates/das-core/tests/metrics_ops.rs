mod common;

use common::rng;
use das_core::metrics::ConfusionMatrix;
use rand::Rng;

#[test]
fn hand_computed_two_class_case() {
    let cm = ConfusionMatrix::from_counts(2, vec![8, 2, 1, 9]).unwrap();
    let m = cm.compute().unwrap();
    assert!((m.oa - 0.85).abs() < 1e-12);
    assert!((m.aa - 0.85).abs() < 1e-12);
    assert!((m.kappa - 0.70).abs() < 1e-12);
    assert!((m.per_class[0] - 0.8).abs() < 1e-12);
    assert!((m.per_class[1] - 0.9).abs() < 1e-12);
}

#[test]
fn perfect_and_chance_predictors() {
    let cm = ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 7, 0, 0, 0, 2]).unwrap();
    let m = cm.compute().unwrap();
    assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));

    // everything predicted as class 0 on a balanced truth
    let cm = ConfusionMatrix::from_counts(2, vec![10, 0, 10, 0]).unwrap();
    let m = cm.compute().unwrap();
    assert!((m.oa - 0.5).abs() < 1e-12);
    assert!(m.kappa.abs() < 1e-12);
}

#[test]
fn accumulation_matches_direct_counts() {
    let mut cm = ConfusionMatrix::new(2).unwrap();
    for _ in 0..8 {
        cm.accumulate(0, 0).unwrap();
    }
    for _ in 0..2 {
        cm.accumulate(0, 1).unwrap();
    }
    cm.accumulate(1, 0).unwrap();
    for _ in 0..9 {
        cm.accumulate(1, 1).unwrap();
    }
    assert_eq!(cm, ConfusionMatrix::from_counts(2, vec![8, 2, 1, 9]).unwrap());
    assert_eq!(cm.total(), 20);
    assert!(cm.accumulate(2, 0).is_err());
    assert!(cm.accumulate(0, 2).is_err());
}

#[test]
fn merge_adds_counts() {
    let mut a = ConfusionMatrix::from_counts(2, vec![1, 2, 3, 4]).unwrap();
    let b = ConfusionMatrix::from_counts(2, vec![10, 0, 0, 10]).unwrap();
    a.merge(&b).unwrap();
    assert_eq!(a, ConfusionMatrix::from_counts(2, vec![11, 2, 3, 14]).unwrap());
    let c = ConfusionMatrix::new(3).unwrap();
    assert!(a.merge(&c).is_err());
}

#[test]
fn degenerate_and_error_cases() {
    assert!(ConfusionMatrix::new(0).is_err());
    assert!(ConfusionMatrix::from_counts(2, vec![1, 2, 3]).is_err());
    // empty matrix
    assert!(ConfusionMatrix::new(2).unwrap().compute().is_err());
    // a class with no samples
    let cm = ConfusionMatrix::from_counts(2, vec![5, 1, 0, 0]).unwrap();
    assert!(cm.compute().is_err());
    // single-class truth and prediction: chance agreement 1, perfect accuracy
    let cm = ConfusionMatrix::from_counts(1, vec![7]).unwrap();
    let m = cm.compute().unwrap();
    assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));
}

fn random_matrix(classes: usize, rng: &mut impl Rng) -> Vec<u64> {
    // at least one diagonal hit per class so every row sum is positive
    (0..classes * classes)
        .map(|i| {
            let diag = i % (classes + 1) == 0;
            rng.gen_range(if diag { 1..40 } else { 0..40 })
        })
        .collect()
}

#[test]
fn permuting_classes_preserves_all_criteria() {
    let mut rng = rng(41);
    for _ in 0..100 {
        let c = rng.gen_range(2..=6);
        let counts = random_matrix(c, &mut rng);
        let base = ConfusionMatrix::from_counts(c, counts.clone())
            .unwrap()
            .compute()
            .unwrap();

        let mut perm: Vec<usize> = (0..c).collect();
        for i in (1..c).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let mut permuted = vec![0u64; c * c];
        for i in 0..c {
            for j in 0..c {
                permuted[perm[i] * c + perm[j]] = counts[i * c + j];
            }
        }
        let p = ConfusionMatrix::from_counts(c, permuted)
            .unwrap()
            .compute()
            .unwrap();
        assert!((base.oa - p.oa).abs() < 1e-12);
        assert!((base.aa - p.aa).abs() < 1e-12);
        assert!((base.kappa - p.kappa).abs() < 1e-12);
        for i in 0..c {
            assert!((base.per_class[i] - p.per_class[perm[i]]).abs() < 1e-12);
        }
    }
}

#[test]
fn scaling_counts_preserves_all_criteria() {
    let mut rng = rng(42);
    for _ in 0..100 {
        let c = rng.gen_range(2..=5);
        let counts = random_matrix(c, &mut rng);
        let factor = rng.gen_range(2u64..=9);
        let scaled: Vec<u64> = counts.iter().map(|&v| v * factor).collect();
        let a = ConfusionMatrix::from_counts(c, counts)
            .unwrap()
            .compute()
            .unwrap();
        let b = ConfusionMatrix::from_counts(c, scaled)
            .unwrap()
            .compute()
            .unwrap();
        assert!((a.oa - b.oa).abs() < 1e-12);
        assert!((a.aa - b.aa).abs() < 1e-12);
        assert!((a.kappa - b.kappa).abs() < 1e-12);
    }
}

#[test]
fn report_layout() {
    let cm = ConfusionMatrix::from_counts(2, vec![8, 2, 1, 9]).unwrap();
    let r = cm.compute().unwrap().report();
    let lines: Vec<&str> = r.lines().collect();
    assert_eq!(lines[0], "OA=0.8500 AA=0.8500 Kappa=0.7000");
    assert_eq!(lines[1], "class1=0.8000");
    assert_eq!(lines[2], "class2=0.9000");
}
