//! Statistics for comparing runs: expected online performance (EOP),
//! performance profiles and probability of improvement.
//!
//! EOP at budget `k` is the expected maximum score of `k` runs drawn without
//! replacement from the `N` observed runs. With scores sorted ascending as
//! `s(1) ≤ … ≤ s(N)`, the `i`-th smallest is the maximum of a `k`-subset with
//! probability `C(i-1, k-1) / C(N, k)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};

fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Probability that the `i`-th smallest (1-based) of `n` runs is the maximum
/// of a uniformly drawn `k`-subset, for every `i`.
fn max_weights(n: usize, k: usize) -> Vec<f64> {
    // w_k = 1 / C(n, k), then w_{i+1} = w_i · i / (i - k + 1)
    let mut c_n_k = 1.0;
    for j in 0..k {
        c_n_k = c_n_k * (n - j) as f64 / (j + 1) as f64;
    }
    let mut w = alloc::vec![0.0; n];
    w[k - 1] = 1.0 / c_n_k;
    for i in k..n {
        w[i] = w[i - 1] * i as f64 / (i - k + 1) as f64;
    }
    w
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        Err(Error::KOutOfRange { k, n })
    } else {
        Ok(())
    }
}

/// Expected best score among `k` runs drawn without replacement.
pub fn eop(scores: &[f64], k: usize) -> Result<f64> {
    let s = sorted(scores)?;
    check_k(s.len(), k)?;
    if k == 1 {
        return mean(scores);
    }
    if k == s.len() {
        return Ok(s[s.len() - 1]);
    }
    Ok(max_weights(s.len(), k).iter().zip(&s).map(|(w, x)| w * x).sum())
}

/// Standard deviation of the best score among `k` runs drawn without
/// replacement. Zero at `k = N`.
pub fn eop_std(scores: &[f64], k: usize) -> Result<f64> {
    let s = sorted(scores)?;
    check_k(s.len(), k)?;
    if k == s.len() {
        return Ok(0.0);
    }
    let w = max_weights(s.len(), k);
    let mean = eop(scores, k)?;
    let var: f64 = w.iter().zip(&s).map(|(w, x)| w * (x - mean) * (x - mean)).sum();
    Ok(libm::sqrt(var.max(0.0)))
}

/// Mean and std of the subset maximum by enumerating all `C(N, k)` subsets.
/// Only for small `N` (at most 20); the reference the closed form is tested
/// against.
pub fn eop_enumerate(scores: &[f64], k: usize) -> Result<(f64, f64)> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::EmptyScores);
    }
    check_k(n, k)?;
    assert!(n <= 20, "enumeration is exponential in N");
    let mut maxima = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let best = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        maxima.push(best);
    }
    let m = maxima.len() as f64;
    let mean = maxima.iter().sum::<f64>() / m;
    let var = maxima.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    Ok((mean, libm::sqrt(var)))
}

/// One EOP row: `(k, mean, std)` for each requested budget; budgets above
/// `N` map to `None`.
pub fn eop_curve(scores: &[f64], budgets: &[usize]) -> Result<Vec<(usize, Option<(f64, f64)>)>> {
    sorted(scores)?;
    budgets
        .iter()
        .map(|&k| {
            if k > scores.len() {
                Ok((k, None))
            } else {
                Ok((k, Some((eop(scores, k)?, eop_std(scores, k)?))))
            }
        })
        .collect()
}

/// Fraction of runs scoring strictly above each threshold.
pub fn performance_profile(scores: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    let s = sorted(scores)?;
    let n = s.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let at_or_below = s.partition_point(|&x| x <= t);
            (s.len() - at_or_below) as f64 / n
        })
        .collect())
}

/// Probability that a random run of `x` beats a random run of `y`, ties
/// counting one half.
pub fn probability_of_improvement(x: &[f64], y: &[f64]) -> Result<f64> {
    sorted(x)?;
    sorted(y)?;
    let mut total = 0.0;
    for &a in x {
        for &b in y {
            total += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(total / (x.len() * y.len()) as f64)
}

/// Probability of improvement averaged over tasks, each task given as the
/// pair of score lists `(x, y)`.
pub fn average_probability_of_improvement(tasks: &[(&[f64], &[f64])]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut acc = 0.0;
    for (x, y) in tasks {
        acc += probability_of_improvement(x, y)?;
    }
    Ok(acc / tasks.len() as f64)
}

pub fn mean(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(scores: &[f64]) -> Result<f64> {
    let m = mean(scores)?;
    Ok(libm::sqrt(scores.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / scores.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn eop_small_example() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_abs_diff_eq!(eop(&s, 2).unwrap(), 14.0 / 6.0, epsilon = 1e-12);
        // maxima over the six pairs: 1, 2, 3, 2, 3, 3
        let m: f64 = 14.0 / 6.0;
        let var = [1.0, 2.0, 3.0, 2.0, 3.0, 3.0f64].iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
        assert_abs_diff_eq!(eop_std(&s, 2).unwrap(), var.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(eop_std(&s, 2).unwrap(), 0.7454, epsilon = 1e-4);
        assert_eq!(eop(&s, 1).unwrap(), 1.5);
        assert_eq!(eop(&s, 4).unwrap(), 3.0);
    }

    #[test]
    fn eop_edge_cases() {
        assert_eq!(eop(&[7.0], 1).unwrap(), 7.0);
        assert_eq!(eop_std(&[7.0], 1).unwrap(), 0.0);
        assert_eq!(eop(&[1.0, 2.0], 3).unwrap_err(), Error::KOutOfRange { k: 3, n: 2 });
        assert_eq!(eop(&[1.0, 2.0], 0).unwrap_err(), Error::KOutOfRange { k: 0, n: 2 });
        assert_eq!(eop(&[], 1).unwrap_err(), Error::EmptyScores);
        let c = eop_curve(&[1.0, 2.0, 3.0], &[1, 2, 5]).unwrap();
        assert!(c[2].1.is_none());
    }

    #[test]
    fn weights_sum_to_one_for_large_n() {
        for k in [1, 2, 5, 50, 99, 100] {
            let w = max_weights(100, k);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn profile_and_improvement_examples() {
        let s = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(performance_profile(&s, &[0.0, 20.0, 40.0]).unwrap(), vec![1.0, 0.5, 0.0]);
        assert_eq!(probability_of_improvement(&[1.0, 2.0], &[0.0, 3.0]).unwrap(), 0.5);
        assert_eq!(probability_of_improvement(&[5.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(probability_of_improvement(&[], &[1.0]).unwrap_err(), Error::EmptyScores);
        let avg = average_probability_of_improvement(&[(&[5.0], &[1.0]), (&[0.0], &[1.0])]).unwrap();
        assert_eq!(avg, 0.5);
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, 1..=10)
    }

    proptest! {
        #[test]
        fn closed_form_matches_enumeration(s in scores_strategy(), k_frac in 0.0..1.0f64) {
            let k = 1 + ((s.len() - 1) as f64 * k_frac) as usize;
            let (m, sd) = eop_enumerate(&s, k).unwrap();
            prop_assert!((eop(&s, k).unwrap() - m).abs() < 1e-8);
            prop_assert!((eop_std(&s, k).unwrap() - sd).abs() < 1e-6);
        }

        #[test]
        fn eop_is_monotone_and_bounded(s in scores_strategy()) {
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=s.len() {
                let v = eop(&s, k).unwrap();
                prop_assert!(v >= prev - 1e-9);
                prev = v;
            }
            prop_assert!((eop(&s, 1).unwrap() - mean(&s).unwrap()).abs() < 1e-9);
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((eop(&s, s.len()).unwrap() - max).abs() < 1e-9);
        }

        #[test]
        fn eop_is_affine_equivariant(s in scores_strategy(), a in 0.1..10.0f64, b in -50.0..50.0f64) {
            let t: Vec<f64> = s.iter().map(|x| a * x + b).collect();
            for k in 1..=s.len() {
                prop_assert!((eop(&t, k).unwrap() - (a * eop(&s, k).unwrap() + b)).abs() < 1e-6);
                prop_assert!((eop_std(&t, k).unwrap() - a * eop_std(&s, k).unwrap()).abs() < 1e-6);
            }
        }

        #[test]
        fn profile_is_nonincreasing(s in scores_strategy(), mut t in prop::collection::vec(-150.0..150.0f64, 1..20)) {
            t.sort_by(f64::total_cmp);
            let p = performance_profile(&s, &t).unwrap();
            for w in p.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn improvement_is_antisymmetric(x in scores_strategy(), y in scores_strategy()) {
            prop_assert_eq!(probability_of_improvement(&x, &x).unwrap(), 0.5);
            let pxy = probability_of_improvement(&x, &y).unwrap();
            let pyx = probability_of_improvement(&y, &x).unwrap();
            prop_assert!((pxy + pyx - 1.0).abs() < 1e-12);
        }
    }
}
