use aai::kernel::{attend, masked_softmax, scaled_dot_product, softmax, Matrix};
use aai::AaiError;
use proptest::prelude::*;

fn square(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max).prop_flat_map(|n| {
        prop::collection::vec(-40.0f64..40.0, n * n).prop_map(move |d| Matrix::new(n, n, d).unwrap())
    })
}

/// Scores plus a mask that hides some cells but keeps one finite entry per row.
fn scores_and_mask() -> impl Strategy<Value = (Matrix, Matrix)> {
    square(12).prop_flat_map(|s| {
        let n = s.rows();
        (
            Just(s),
            prop::collection::vec(prop::bool::weighted(0.35), n * n),
            prop::collection::vec(0..n, n),
            prop::collection::vec(-5.0f64..5.0, n * n),
        )
            .prop_map(move |(s, hide, keep, bias)| {
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let v = if hide[i * n + j] && j != keep[i] { f64::NEG_INFINITY } else { bias[i * n + j] };
                        m.set(i, j, v);
                    }
                }
                (s, m)
            })
    })
}

proptest! {
    #[test]
    fn rows_are_distributions((s, m) in scores_and_mask()) {
        let w = masked_softmax(&s, &m).unwrap();
        for i in 0..w.rows() {
            let sum: f64 = w.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "row {} sums to {}", i, sum);
            for j in 0..w.cols() {
                prop_assert!((0.0..=1.0).contains(&w.get(i, j)));
                if m.get(i, j) == f64::NEG_INFINITY {
                    prop_assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn row_shift_is_a_no_op((s, m) in scores_and_mask(), shift in -1e3f64..1e3, row in 0usize..12) {
        let row = row % s.rows();
        let mut shifted = s.clone();
        for v in shifted.row_mut(row) {
            *v += shift;
        }
        let a = masked_softmax(&s, &m).unwrap();
        let b = masked_softmax(&shifted, &m).unwrap();
        for j in 0..s.cols() {
            prop_assert!((a.get(row, j) - b.get(row, j)).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_mask_is_plain_softmax(s in square(12)) {
        let zero = Matrix::zeros(s.rows(), s.cols());
        prop_assert_eq!(masked_softmax(&s, &zero).unwrap(), softmax(&s).unwrap());
    }

    #[test]
    fn one_hot_rows_select_values(n in 1usize..10, d in 1usize..6, seed in any::<u64>()) {
        let values = Matrix::new(n, d, (0..n * d).map(|k| (k as f64 + seed as f64 % 97.0).sin()).collect()).unwrap();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            a.set(i, (i * 7 + seed as usize) % n, 1.0);
        }
        let out = attend(&a, &values).unwrap();
        for i in 0..n {
            prop_assert_eq!(out.row(i), values.row((i * 7 + seed as usize) % n));
        }
    }
}

#[test]
fn fully_masked_row_is_rejected() {
    let s = Matrix::zeros(2, 2);
    let mut m = Matrix::zeros(2, 2);
    m.set(1, 0, f64::NEG_INFINITY);
    m.set(1, 1, f64::NEG_INFINITY);
    assert!(matches!(masked_softmax(&s, &m), Err(AaiError::DegenerateRow { .. })));
}

#[test]
fn scaled_scores_by_hand() {
    let q = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
    let k = Matrix::from_rows(&[[3.0, 4.0], [1.0, 1.0]]).unwrap();
    let s = scaled_dot_product(&q, &k, 2).unwrap();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let want = [3.0 * r, r, 8.0 * r, 2.0 * r];
    for (got, want) in s.data().iter().zip(want) {
        assert!((got - want).abs() < 1e-15);
    }
}
