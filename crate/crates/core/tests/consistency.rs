//! Cross-checks between the affine and general fiber-system code paths.

use ifslab_core::skewprod::{code_fiber_point, lambda_sup, FiberSystem};
use ifslab_core::thermo::{partition_sum, similarity_dimension, DIMENSION_TOL};
use ifslab_core::{build_interval_example, BackwardSeq, CodedSystem};

#[test]
fn affine_family_and_its_fiber_system_code_the_same_points() {
    let fam = build_interval_example(4, 0.21).unwrap();
    let fiber = FiberSystem::from_affine(&fam).unwrap();
    for p in [0.3, 0.5, 0.7] {
        for seq in [BackwardSeq::constant(0), BackwardSeq::periodic(vec![4, 1, 2]), BackwardSeq::constant(4)] {
            let a = fam.code_point(&[p], &seq, 40).unwrap();
            let b = code_fiber_point(&fiber, &[p], &[], &seq, 40).unwrap();
            assert!((a.value[0] - b.value[0]).abs() < 1e-12, "p = {p}");
        }
    }
}

#[test]
fn contraction_rates_agree_between_representations() {
    let fam = build_interval_example(2, 0.4).unwrap();
    let fiber = FiberSystem::from_affine(&fam).unwrap();
    let word = [0, 1, 2, 2, 1, 0, 1];
    let direct = fam.contraction_rate(&[0.5], &[], &word).unwrap();
    let sampled = lambda_sup(&fiber, &[0.5], &[], &word, 9).unwrap();
    assert!((direct - 0.4f64.powi(7)).abs() < 1e-15);
    assert!((sampled.lower - direct).abs() < 1e-15);
}

#[test]
fn partition_sums_and_dimensions_agree() {
    let fam = build_interval_example(4, 0.21).unwrap();
    let fiber = FiberSystem::from_affine(&fam).unwrap();
    for n in 1..=5 {
        let a = partition_sum(&fam, &[0.5], &[], 1.0, n).unwrap();
        let b = partition_sum(&fiber, &[0.5], &[], 1.0, n).unwrap();
        assert!((a / b - 1.0).abs() < 1e-12);
    }
    let da = similarity_dimension(&fam, &[0.5], &[], &[1], DIMENSION_TOL).unwrap();
    let db = similarity_dimension(&fiber, &[0.5], &[], &[1, 2, 3], DIMENSION_TOL).unwrap();
    assert!((da - db).abs() < 1e-9);
}
