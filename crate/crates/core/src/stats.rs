//! Rank-sum and effect-size statistics.
//!
//! The two-sample comparison is a Mann-Whitney U with midrank tie handling.
//! Small pooled samples (up to 12 values) get an exact permutation p-value;
//! larger ones use the normal approximation with tie-corrected variance and
//! a continuity correction.

use crate::error::{Error, Result};

/// Pooled sample size up to which the exact permutation distribution is
/// enumerated.
pub const EXACT_ENUMERATION_LIMIT: usize = 12;

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n-1) sample variance.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::DegenerateInput(format!("{name} sample is empty")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter(format!(
            "{name} sample contains a non-finite value"
        )));
    }
    Ok(())
}

/// Midranks of `pooled`, aligned to its order. Tied values share the mean of
/// the ranks they occupy.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pooled[i].partial_cmp(&pooled[j]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // Positions i..=j are one tie group; 1-based ranks i+1..=j+1.
        let rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Mann-Whitney U test. Returns `(U, p)` where `U` is the
/// statistic of the first sample.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    check_finite("first", a)?;
    check_finite("second", b)?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let mut pooled = Vec::with_capacity(n);
    pooled.extend_from_slice(a);
    pooled.extend_from_slice(b);
    let ranks = midranks(&pooled);
    let r_a: f64 = ranks[..na].iter().sum();
    let u = r_a - (na * (na + 1)) as f64 / 2.0;
    let mu = (na * nb) as f64 / 2.0;

    let p = if n <= EXACT_ENUMERATION_LIMIT {
        exact_two_sided_p(&ranks, na, u, mu)
    } else {
        normal_approx_p(&pooled, na, nb, u, mu)
    };
    Ok((u, p))
}

/// Exact permutation p-value: the fraction of all size-`na` subsets of the
/// pooled ranks whose U sits at least as far from the mean as the observed
/// one.
fn exact_two_sided_p(ranks: &[f64], na: usize, u_obs: f64, mu: f64) -> f64 {
    let n = ranks.len();
    let offset = (na * (na + 1)) as f64 / 2.0;
    let threshold = (u_obs - mu).abs() - 1e-9;
    let mut total: u64 = 0;
    let mut at_least: u64 = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        total += 1;
        let mut r_sum = 0.0;
        for (i, rank) in ranks.iter().enumerate() {
            if mask & (1 << i) != 0 {
                r_sum += rank;
            }
        }
        if (r_sum - offset - mu).abs() >= threshold {
            at_least += 1;
        }
    }
    at_least as f64 / total as f64
}

fn normal_approx_p(pooled: &[f64], na: usize, nb: usize, u: f64, mu: f64) -> f64 {
    let n = pooled.len();
    let mut sorted = pooled.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let nf = n as f64;
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * (1.0 - normal_cdf(z))).clamp(0.0, 1.0)
}

/// Cohen's d with the pooled (n-1) standard deviation: positive when the
/// first sample's mean is larger.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Parameter(format!(
            "effect size needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    check_finite("first", a)?;
    check_finite("second", b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled_var =
        ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if pooled_var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((mean(a) - mean(b)) / pooled_var.sqrt())
}

/// Quantile of a sorted slice with linear interpolation between order
/// statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Pearson chi-square statistic of observed counts against a uniform
/// expectation.
pub fn chi_square_uniform_statistic(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let diff = c as f64 - expected;
            diff * diff / expected
        })
        .sum()
}

/// Upper critical values of the chi-square distribution at tail mass 0.01,
/// for 1 to 10 degrees of freedom. A statistic below the critical value
/// means p > 0.01.
pub fn chi_square_critical_p01(df: usize) -> f64 {
    const TABLE: [f64; 10] = [
        6.6349, 9.2103, 11.3449, 13.2767, 15.0863, 16.8119, 18.4753, 20.0902, 21.6660, 23.2093,
    ];
    assert!((1..=TABLE.len()).contains(&df), "df {df} outside table");
    TABLE[df - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u_statistic_fully_separated_pair() {
        let (u, p) = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(u, 0.0);
        assert!((p - 1.0 / 3.0).abs() < 1e-12, "p {p}");
    }

    #[test]
    fn u_statistic_three_vs_three() {
        // Full separation of 3 vs 3: only the two extreme subsets reach
        // |U - 4.5| = 4.5, so p = 2/20.
        let (u, p) = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(u, 0.0);
        assert!((p - 0.1).abs() < 1e-12, "p {p}");
    }

    #[test]
    fn identical_samples_center_the_statistic() {
        let a = [3.0, 1.0, 2.0];
        let (u, p) = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(u, 4.5);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn swap_symmetry() {
        let a = [1.0, 5.0, 3.0, 3.0, 8.0];
        let b = [2.0, 3.0, 9.0, 4.0];
        let (ua, pa) = mann_whitney_u(&a, &b).unwrap();
        let (ub, pb) = mann_whitney_u(&b, &a).unwrap();
        assert!((ua + ub - (a.len() * b.len()) as f64).abs() < 1e-12);
        assert!((pa - pb).abs() < 1e-12);
    }

    #[test]
    fn ties_share_midranks() {
        let (u, p) = mann_whitney_u(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        // Ranks of {1,1,1,2} are {2,2,2,4}; R_a = 4, U = 1.
        assert_eq!(u, 1.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn large_shifted_samples_reject() {
        let a: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..60).map(|i| i as f64 * 0.1 + 4.0).collect();
        let (_, p) = mann_whitney_u(&a, &b).unwrap();
        assert!(p < 1e-6, "p {p}");
        let (_, p_same) = mann_whitney_u(&a, &a).unwrap();
        assert!(p_same > 0.9, "p {p_same}");
    }

    #[test]
    fn all_tied_large_sample_yields_p_one() {
        let a = vec![2.0; 30];
        let b = vec![2.0; 25];
        let (u, p) = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(u, (30 * 25) as f64 / 2.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        assert!(mann_whitney_u(&[1.0], &[f64::NAN]).is_err());
        assert!(cohens_d(&[1.0, f64::INFINITY], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn effect_size_frozen_case() {
        // means 0.5 and 1.5, pooled variance 1/3.
        let d = cohens_d(&[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((d + 3.0f64.sqrt()).abs() < 1e-12, "d {d}");
    }

    #[test]
    fn effect_size_antisymmetric_and_sized() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.5, 3.5, 4.5];
        let d_ab = cohens_d(&a, &b).unwrap();
        let d_ba = cohens_d(&b, &a).unwrap();
        assert!((d_ab + d_ba).abs() < 1e-12);
        assert!(cohens_d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_pooled_variance_is_reported() {
        match cohens_d(&[2.0, 2.0], &[2.0, 2.0]) {
            Err(Error::ZeroVariance) => {}
            other => panic!("expected zero-variance error, got {other:?}"),
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let xs = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quantile_sorted(&xs, 0.25), 2.0);
        assert_eq!(quantile_sorted(&xs, 0.75), 4.0);
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        let even = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&even, 0.25), 1.75);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-9);
        assert!((normal_cdf(-1.959_963_984_540_054) - 0.025).abs() < 1e-9);
    }

    #[test]
    fn chi_square_statistic_and_critical_values() {
        assert_eq!(chi_square_uniform_statistic(&[10, 10, 10, 10]), 0.0);
        // Observed (30, 10) vs expected (20, 20): 2 * 100/20 = 10.
        assert_eq!(chi_square_uniform_statistic(&[30, 10]), 10.0);
        assert!(chi_square_uniform_statistic(&[30, 10]) > chi_square_critical_p01(1));
        assert!(chi_square_uniform_statistic(&[21, 19]) < chi_square_critical_p01(1));
    }
}
