//! Summary statistics and the Mann-Whitney U test.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// 95% normal quantile used for all confidence half-widths.
pub const Z95: f64 = 1.96;

/// Largest `|a|·|b|` handled by exact enumeration.
pub const EXACT_LIMIT: usize = 64;

/// Mean and unbiased (n − 1) standard deviation. A single value has sd 0.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, libm::sqrt(ss / (n - 1.0))))
}

/// Mean and 95% half-width `1.96·sd/√n`.
pub fn mean_ci(values: &[f64]) -> Result<(f64, f64)> {
    let (mean, sd) = mean_sd(values)?;
    Ok((mean, Z95 * sd / libm::sqrt(values.len() as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MannWhitney {
    /// U for the first sample: the number of (a, b) pairs with a > b, ties counting one half.
    pub u: f64,
    /// Two-sided p-value, clamped to `[f64::MIN_POSITIVE, 1]`.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample, and the tie group sizes.
fn midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    idx.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0; idx.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && idx[j].0 == idx[i].0 {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &(_, k) in &idx[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn u_statistic(ranks: &[f64], n: usize) -> f64 {
    let r: f64 = ranks[..n].iter().sum();
    r - (n * (n + 1)) as f64 / 2.0
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Mann-Whitney U test, choosing the exact path when `|a|·|b| ≤ 64`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.len() * b.len() <= EXACT_LIMIT {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// Exact null distribution of U conditional on the observed midranks,
/// counted over all C(n+m, n) ways of drawing the first sample.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = a.len();
    let (ranks, _) = midranks(a, b);
    let u = u_statistic(&ranks, n);
    // Twice a midrank is an integer, so rank sums live on a half-integer grid.
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s.
    let mut ways = vec![vec![0u128; max_sum + 1]; n + 1];
    ways[0][0] = 1;
    for &r in &doubled {
        for k in (1..=n).rev() {
            for s in (r..=max_sum).rev() {
                ways[k][s] += ways[k - 1][s - r];
            }
        }
    }
    let total: u128 = ways[n].iter().sum();
    let offset = n * (n + 1); // doubled n(n+1)/2
    let observed = libm::round(2.0 * u) as i64;
    let (mut lo, mut hi) = (0u128, 0u128);
    for (s, &w) in ways[n].iter().enumerate() {
        if w == 0 {
            continue;
        }
        let u2 = s as i64 - offset as i64;
        if u2 <= observed {
            lo += w;
        }
        if u2 >= observed {
            hi += w;
        }
    }
    let tail = lo.min(hi) as f64 / total as f64;
    Ok(MannWhitney { u, p: clamp_p(2.0 * tail), exact: true })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (ranks, ties) = midranks(a, b);
    let u = u_statistic(&ranks, a.len());
    let big_n = n + m;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * m / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let z = ((u - n * m / 2.0).abs() - 0.5).max(0.0) / libm::sqrt(var);
    let p = libm::erfc(z / core::f64::consts::SQRT_2);
    Ok(MannWhitney { u, p: clamp_p(p), exact: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u, 8.0);
        assert!(r.p > 0.99);
    }

    #[test]
    fn separated_five_by_five() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [6.0, 7.0, 8.0, 9.0, 10.0];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(r.exact);
        assert_eq!(r.u, 0.0);
        assert!((r.p - 2.0 / 252.0).abs() < 1e-12);
    }

    /// Direct enumeration over all C(8, 4) label assignments.
    fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = a.len();
        let count_u = |first: &[f64], second: &[f64]| -> f64 {
            let mut u = 0.0;
            for x in first {
                for y in second {
                    u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
                }
            }
            u
        };
        let obs = count_u(a, b);
        let (mut lo, mut hi, mut total) = (0usize, 0usize, 0usize);
        for mask in 0u32..(1 << pooled.len()) {
            if mask.count_ones() as usize != n {
                continue;
            }
            let (f, s): (Vec<_>, Vec<_>) = (0..pooled.len()).partition(|i| mask & (1 << i) != 0);
            let f: Vec<f64> = f.iter().map(|&i| pooled[i]).collect();
            let s: Vec<f64> = s.iter().map(|&i| pooled[i]).collect();
            let u = count_u(&f, &s);
            total += 1;
            lo += (u <= obs) as usize;
            hi += (u >= obs) as usize;
        }
        (2.0 * lo.min(hi) as f64 / total as f64).min(1.0)
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let a = [1.0, 2.0, 2.0, 5.0];
        let b = [2.0, 3.0, 4.0, 4.0];
        let r = mann_whitney_exact(&a, &b).unwrap();
        assert!((r.p - brute_force_p(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn normal_path_tracks_exact_at_four_by_four() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let b = [4.0, 6.0, 7.0, 8.0];
        let e = mann_whitney_exact(&a, &b).unwrap();
        let n = mann_whitney_normal(&a, &b).unwrap();
        assert_eq!(e.u, n.u);
        assert!((e.p - 4.0 / 70.0).abs() < 1e-12);
        assert!((e.p - n.p).abs() < 0.02);
    }

    #[test]
    fn large_separated_samples_clamp_p() {
        let a: Vec<f64> = (0..600).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..600).map(|i| 1e4 + i as f64).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p > 0.0 && r.p < 1e-100);
    }

    #[test]
    fn all_tied_gives_one() {
        let r = mann_whitney_normal(&[1.0; 20], &[1.0; 20]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn ci_formula() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((h - 1.96 * libm::sqrt(5.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(mean_ci(&[7.0]).unwrap(), (7.0, 0.0));
        assert!(mean_ci(&[]).is_err());
    }

    proptest! {
        #[test]
        fn complementary_u(a in prop::collection::vec(-5i32..5, 1..12), b in prop::collection::vec(-5i32..5, 1..12)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = mann_whitney_u(&a, &b).unwrap();
            let ba = mann_whitney_u(&b, &a).unwrap();
            prop_assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-9);
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
        }
    }
}
