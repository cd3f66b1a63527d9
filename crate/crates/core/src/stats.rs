//! Small statistical helpers: ranks, normal tails and two-sample t-tests.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Average ranks (1-based) of `values`; tied values share the mean of the
/// ranks they occupy.
///
/// NaN values are ranked last in input order; callers are expected to reject
/// NaN before ranking.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// Upper tail `P(N(0,1) >= z)`, accurate far into the tail.
pub fn normal_sf(z: f64) -> f64 {
    std_normal().sf(z)
}

/// Standard normal quantile.
///
/// # Panics
/// Panics when `p` is outside `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "normal quantile needs p in (0,1), got {p}"
    );
    std_normal().inverse_cdf(p)
}

/// Two-sided p-value for a standard normal deviate.
pub fn two_sided_normal_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `n - 1`; `NaN` when `n < 2`.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Median of a slice (average of the middle pair for even lengths).
pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Welch two-sample t-test p-value (two-sided) for samples `a` and `b`.
///
/// Returns 1 when both samples have zero variance and equal means, and 0 when
/// they have zero variance but different means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return if diff == 0.0 { 1.0 } else { 0.0 };
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(
            average_ranks(&[1.0, 2.0, 2.0, 5.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(average_ranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn normal_reference_values() {
        assert_relative_eq!(normal_sf(2.0), 0.022750131948179195, max_relative = 1e-10);
        assert_relative_eq!(normal_quantile(0.9875), 2.241402727604947, epsilon = 1e-9);
        assert_relative_eq!(
            two_sided_normal_p(1.959963984540054),
            0.05,
            max_relative = 1e-10
        );
    }

    #[test]
    fn welch_identical_groups_gives_one() {
        assert_relative_eq!(welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
    }

    #[test]
    fn welch_matches_reference() {
        // scipy.stats.ttest_ind([1,2,3,4],[2,4,6,9], equal_var=False).pvalue
        let p = welch_t_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 9.0]);
        assert_relative_eq!(p, 0.1647020796280566, epsilon = 1e-9);
    }
}
