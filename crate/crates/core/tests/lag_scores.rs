use cab_core::numerics::{l2_normalize_cols, L2_EPSILON};
use cab_core::xcorr::{lag_parts, topk_count, topk_lags, LagPath};
use cab_core::Matrix;
use proptest::prelude::*;

fn normalized(t: usize, d: usize, values: &[f64]) -> Matrix {
    let m = Matrix::from_fn(t, d, |i, j| values[(i * d + j) % values.len()]);
    l2_normalize_cols(&m, L2_EPSILON).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_ignore_feature_order_and_sign(
        t in 4usize..40,
        d in 1usize..6,
        values in prop::collection::vec(-3.0f64..3.0, 8..64),
        shift in 0usize..6,
        flip in 0usize..6,
        lambda in 0.0f64..=1.0,
    ) {
        let q = normalized(t, d, &values);
        let k = normalized(t, d, &values.iter().rev().copied().collect::<Vec<_>>());
        let remap = |m: &Matrix| Matrix::from_fn(t, d, |i, j| {
            let src = (j + shift) % d;
            let sign = if src == flip % d { -1.0 } else { 1.0 };
            sign * m[(i, src)]
        });
        let base = lag_parts(&q, &k, LagPath::Naive, 1).unwrap().combine(lambda).unwrap();
        let moved = lag_parts(&remap(&q), &remap(&k), LagPath::Naive, 1).unwrap().combine(lambda).unwrap();
        prop_assert!(close(&base.diag_scores, &moved.diag_scores, 1e-10));
        prop_assert!(close(&base.nondiag_scores, &moved.nondiag_scores, 1e-10));
    }

    #[test]
    fn fft_and_naive_paths_agree(
        t in 2usize..64,
        d in 1usize..5,
        values in prop::collection::vec(-3.0f64..3.0, 8..64),
    ) {
        let q = normalized(t, d, &values);
        let k = normalized(t, d, &values[1..]);
        let naive = lag_parts(&q, &k, LagPath::Naive, 1).unwrap().combine(0.3).unwrap();
        let fft = lag_parts(&q, &k, LagPath::Fft, 1).unwrap().combine(0.3).unwrap();
        prop_assert!(close(&naive.combined, &fft.combined, 1e-9));
    }

    #[test]
    fn selection_is_distinct_nonzero_and_sorted(
        t in 2usize..80,
        c in 1usize..4,
        values in prop::collection::vec(-3.0f64..3.0, 8..64),
    ) {
        let x = normalized(t, 2, &values);
        let scores = lag_parts(&x, &x, LagPath::Fft, 1).unwrap().combine(0.5).unwrap();
        let sel = topk_lags(&scores, c, t).unwrap();
        prop_assert_eq!(sel.k(), topk_count(t, c));
        let mut seen = sel.lags.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), sel.k());
        prop_assert!(sel.lags.iter().all(|&l| (1..t).contains(&l)));
        prop_assert!(sel.scores.windows(2).all(|w| w[0] >= w[1] - 1e-9));
    }
}
