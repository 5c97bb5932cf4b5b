//! Kendall's tau-b rank correlation with tie correction.
//!
//! Knight's O(n log n) formulation: concordant-minus-discordant is recovered
//! from the total pair count, the per-ranking tie counts, the jointly-tied
//! count, and a merge-sort inversion count. The test suite checks it against
//! a brute-force all-pairs oracle.

use super::EvalError;

/// Tau-b of two equal-length score sequences. +1 is perfect agreement, -1
/// perfect reversal; ties are corrected by the geometric-mean denominator.
pub fn kendall_tau_b(observed: &[f64], reference: &[f64]) -> Result<f64, EvalError> {
    if observed.len() != reference.len() {
        return Err(EvalError::LengthMismatch {
            left: observed.len(),
            right: reference.len(),
        });
    }
    let n = observed.len();
    if n < 2 {
        return Err(EvalError::LengthMismatch {
            left: n,
            right: n,
        });
    }
    if observed.iter().any(|v| !v.is_finite()) || reference.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFiniteInput);
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        observed[i]
            .partial_cmp(&observed[j])
            .unwrap()
            .then(reference[i].partial_cmp(&reference[j]).unwrap())
    });

    let n0 = n * (n - 1) / 2;
    let tied_pairs = |key: &dyn Fn(usize) -> (f64, Option<f64>), order: &[usize]| -> usize {
        let mut total = 0usize;
        let mut run = 1usize;
        for w in order.windows(2) {
            if key(w[0]) == key(w[1]) {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let n1 = tied_pairs(&|i| (observed[i], None), &idx);
    let n3 = tied_pairs(&|i| (observed[i], Some(reference[i])), &idx);

    let mut y_order = idx.clone();
    y_order.sort_by(|&i, &j| reference[i].partial_cmp(&reference[j]).unwrap());
    let n2 = tied_pairs(&|i| (reference[i], None), &y_order);

    if n1 == n0 || n2 == n0 {
        return Err(EvalError::DegenerateRanking);
    }

    // Discordant pairs: inversions of the reference sequence once sorted by
    // the observed ranking (ties in reference are not inversions).
    let y_seq: Vec<f64> = idx.iter().map(|&i| reference[i]).collect();
    let discordant = count_inversions(&y_seq);

    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * discordant as f64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(numer / denom)
}

fn count_inversions(seq: &[f64]) -> u64 {
    let mut work = seq.to_vec();
    let mut buf = vec![0.0; seq.len()];
    merge_count(&mut work, &mut buf)
}

fn merge_count(seq: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = seq.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = seq.split_at_mut(mid);
    let mut inv = merge_count(left, &mut buf[..mid]) + merge_count(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            buf[k] = right[j];
            inv += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        buf[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        buf[k] = right[j];
        j += 1;
        k += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    inv
}

/// Exhaustive all-pairs tau-b; the independent oracle the fast path is
/// verified against. Kept in the library so acceptance tests and downstream
/// callers can cross-check.
pub fn kendall_tau_b_bruteforce(observed: &[f64], reference: &[f64]) -> Result<f64, EvalError> {
    if observed.len() != reference.len() || observed.len() < 2 {
        return Err(EvalError::LengthMismatch {
            left: observed.len(),
            right: reference.len(),
        });
    }
    let n = observed.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    let mut untied = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = observed[i] - observed[j];
            let dy = reference[i] - reference[j];
            if dx == 0.0 && dy == 0.0 {
                tied_x += 1;
                tied_y += 1;
            } else if dx == 0.0 {
                tied_x += 1;
            } else if dy == 0.0 {
                tied_y += 1;
            } else {
                untied += 1;
                if dx * dy > 0.0 {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if tied_x == n0 || tied_y == n0 {
        return Err(EvalError::DegenerateRanking);
    }
    let _ = untied;
    let denom = (((n0 - tied_x) as f64) * ((n0 - tied_y) as f64)).sqrt();
    Ok((concordant - discordant) as f64 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rankings_give_one() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(kendall_tau_b(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn reversed_rankings_give_minus_one() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau_b(&x, &y).unwrap(), -1.0);
    }

    #[test]
    fn one_tie_matches_pair_counting_oracle() {
        let observed = [1.0, 2.0, 2.0, 4.0];
        let reference = [1.0, 2.0, 3.0, 4.0];
        let fast = kendall_tau_b(&observed, &reference).unwrap();
        let oracle = kendall_tau_b_bruteforce(&observed, &reference).unwrap();
        assert_relative_eq!(fast, oracle, epsilon = 1e-12);
        // 5 concordant pairs, 0 discordant, one tie in x:
        // tau_b = 5 / sqrt(5 * 6).
        assert_relative_eq!(fast, 5.0 / 30.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_all_tied_rejected() {
        assert!(matches!(
            kendall_tau_b(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::DegenerateRanking)
        ));
        assert!(matches!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[7.0, 7.0, 7.0]),
            Err(EvalError::DegenerateRanking)
        ));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            kendall_tau_b(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn antisymmetric_under_reversal_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let x: Vec<f64> = rand::seq::index::sample(&mut rng, 100, n)
                .iter()
                .map(|v| v as f64)
                .collect();
            let y: Vec<f64> = rand::seq::index::sample(&mut rng, 100, n)
                .iter()
                .map(|v| v as f64)
                .collect();
            let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
            let t = kendall_tau_b(&x, &y).unwrap();
            let t_rev = kendall_tau_b(&neg_x, &y).unwrap();
            assert_relative_eq!(t_rev, -t, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_oracle_on_random_tied_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let n = rng.gen_range(2..10);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
            match (kendall_tau_b(&x, &y), kendall_tau_b_bruteforce(&x, &y)) {
                (Ok(fast), Ok(oracle)) => assert_relative_eq!(fast, oracle, epsilon = 1e-12),
                (Err(EvalError::DegenerateRanking), Err(EvalError::DegenerateRanking)) => {}
                (a, b) => panic!("disagree: {a:?} vs {b:?} on {x:?} {y:?}"),
            }
        }
    }
}
