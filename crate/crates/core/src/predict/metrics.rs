use super::PredictError;

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64, PredictError> {
    if actual.len() != predicted.len() {
        return Err(PredictError::DimensionMismatch { expected: actual.len(), got: predicted.len() });
    }
    if actual.is_empty() {
        return Err(PredictError::EmptyInput);
    }
    let mut total = 0.0;
    for (&a, &p) in actual.iter().zip(predicted) {
        if a == 0.0 {
            return Err(PredictError::ZeroDenominator);
        }
        total += ((a - p) / a).abs();
    }
    Ok(100.0 * total / actual.len() as f64)
}

/// Kendall tau-b in `O(n log n)` (Knight's algorithm): sort by `a` then
/// `b`, then count the exchanges a merge sort on `b` performs.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64, PredictError> {
    if a.len() != b.len() {
        return Err(PredictError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(PredictError::UndefinedCorrelation);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(PredictError::UndefinedCorrelation);
    }
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let total = (n as i64) * (n as i64 - 1) / 2;
    let tied_a = tie_pairs(pairs.iter().map(|p| p.0));
    let tied_joint = tie_pairs_by(&pairs, |p, q| p.0 == q.0 && p.1 == q.1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let tied_b = tie_pairs(ys.iter().copied());

    if tied_a == total || tied_b == total {
        return Err(PredictError::UndefinedCorrelation);
    }
    let numerator = total - tied_a - tied_b + tied_joint - 2 * swaps;
    Ok(numerator as f64 / (((total - tied_a) as f64) * ((total - tied_b) as f64)).sqrt())
}

/// Number of tied pairs in a sorted sequence.
fn tie_pairs(sorted: impl Iterator<Item = f64>) -> i64 {
    let v: Vec<f64> = sorted.collect();
    tie_pairs_by(&v, |x, y| x == y)
}

fn tie_pairs_by<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for k in 1..=sorted.len() {
        if k < sorted.len() && eq(&sorted[k], &sorted[k - 1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Stable merge sort returning the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        merge_count(left, &mut buf[..mid]) + merge_count(right, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = v[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    swaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic pair counting.
    fn tau_b_pairs(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let (mut conc, mut disc, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let da = a[i] - a[j];
                let db = b[i] - b[j];
                if da == 0.0 {
                    ta += 1;
                }
                if db == 0.0 {
                    tb += 1;
                }
                if da != 0.0 && db != 0.0 {
                    if (da > 0.0) == (db > 0.0) {
                        conc += 1;
                    } else {
                        disc += 1;
                    }
                }
            }
        }
        let total = (n * (n - 1) / 2) as i64;
        (conc - disc) as f64 / (((total - ta) as f64) * ((total - tb) as f64)).sqrt()
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[0.0, 1.0], &[1.0, 1.0]), Err(PredictError::ZeroDenominator));
    }

    #[test]
    fn mape_matches_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..100).map(|_| rng.gen_range(1.0..10.0)).collect();
        let p: Vec<f64> = (0..100).map(|_| rng.gen_range(1.0..10.0)).collect();
        let want = a.iter().zip(&p).map(|(x, y)| (x - y).abs() / x.abs()).sum::<f64>() / 100.0 * 100.0;
        assert!((mape(&a, &p).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn tau_extremes() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &[2.0, 4.0, 8.0, 9.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &[9.0, 4.0, 3.0, 1.0]).unwrap(), -1.0);
        assert_eq!(kendall_tau(&a, &[1.0; 4]), Err(PredictError::UndefinedCorrelation));
    }

    #[test]
    fn tau_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a: Vec<f64> = (0..50).map(|_| rng.gen_range(0..12) as f64).collect();
            let b: Vec<f64> = (0..50).map(|_| rng.gen_range(0..12) as f64).collect();
            assert_eq!(kendall_tau(&a, &b).unwrap(), tau_b_pairs(&a, &b));
        }
    }

    proptest::proptest! {
        #[test]
        fn tau_is_symmetric_and_rank_invariant(a in proptest::collection::vec(0u8..20, 3..40), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = a.iter().map(|_| rng.gen_range(0..20) as f64).collect();
            if let Ok(t) = kendall_tau(&a, &b) {
                let back = kendall_tau(&b, &a).unwrap();
                proptest::prop_assert!((t - back).abs() < 1e-12);
                let warped: Vec<f64> = a.iter().map(|x| (x * 0.3).exp() + 5.0).collect();
                proptest::prop_assert!((kendall_tau(&warped, &b).unwrap() - t).abs() < 1e-12);
            }
        }
    }
}
