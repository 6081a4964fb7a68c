//! Mann-Whitney U test: exact null distribution for small samples, normal
//! approximation with tie and continuity correction otherwise.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::StatsError;

/// Exact enumeration is used when `n_a + n_b` is at most this.
pub const EXACT_MAX_TOTAL: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// Group a tends to be larger than group b.
    AGreater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Doubled mid-ranks (integers) of the pooled sample.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && pooled[order[end + 1]] == pooled[order[start]] {
            end += 1;
        }
        // ranks start..=end (1-based) share (start + 1 + end + 1) / 2
        let doubled = (start + end + 2) as u64;
        for &o in &order[start..=end] {
            ranks[o] = doubled;
        }
        start = end + 1;
    }
    ranks
}

fn tie_term(pooled: &[f64]) -> f64 {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        sum += t * t * t - t;
        i = j + 1;
    }
    sum
}

/// Visits every `k`-subset sum of `values`.
fn subset_sums(values: &[u64], k: usize, visit: &mut impl FnMut(u64)) {
    fn go(values: &[u64], k: usize, start: usize, acc: u64, visit: &mut impl FnMut(u64)) {
        if k == 0 {
            visit(acc);
            return;
        }
        for i in start..=values.len() - k {
            go(values, k - 1, i + 1, acc + values[i], visit);
        }
    }
    go(values, k, 0, 0, visit);
}

/// `U_a` counts pairs with `a > b` plus half the ties.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let offset = (na * (na + 1)) as u64;
    // 2 U_a = 2 R_a - n_a (n_a + 1), kept in integers
    let r2: u64 = ranks[..na].iter().sum();
    let u2 = r2 - offset;
    let nanb = (na * nb) as u64;
    let u_a = u2 as f64 / 2.0;
    let u_b = nanb as f64 - u_a;
    // centre of the null distribution, in the same half-units
    let centre2 = nanb as i64;
    if n <= EXACT_MAX_TOTAL {
        let obs_dev = (u2 as i64 - centre2).abs();
        let (mut hits, mut total) = (0u64, 0u64);
        subset_sums(&ranks, na, &mut |s| {
            let u = s - offset;
            total += 1;
            let extreme = match alternative {
                Alternative::AGreater => u >= u2,
                Alternative::TwoSided => (u as i64 - centre2).abs() >= obs_dev,
            };
            if extreme {
                hits += 1;
            }
        });
        return Ok(MannWhitney {
            u_a,
            u_b,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }
    let mean = nanb as f64 / 2.0;
    let nf = n as f64;
    let var = nanb as f64 / 12.0 * ((nf + 1.0) - tie_term(&pooled) / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let sd = var.sqrt();
        let normal = Normal::standard();
        match alternative {
            Alternative::AGreater => 1.0 - normal.cdf((u_a - mean - 0.5) / sd),
            Alternative::TwoSided => {
                let z = ((u_a - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * (1.0 - normal.cdf(z))).min(1.0)
            }
        }
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pair-counting U and label-assignment enumeration, in half-units.
    fn oracle(a: &[f64], b: &[f64], alt: Alternative) -> (u64, f64) {
        let u2 = |xs: &[f64], ys: &[f64]| -> u64 {
            let mut s = 0;
            for x in xs {
                for y in ys {
                    if x > y {
                        s += 2;
                    } else if x == y {
                        s += 1;
                    }
                }
            }
            s
        };
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let obs = u2(a, b) as i64;
        let centre = (a.len() * b.len()) as i64;
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let xs: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
            let ys: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
            let u = u2(&xs, &ys) as i64;
            total += 1;
            let extreme = match alt {
                Alternative::AGreater => u >= obs,
                Alternative::TwoSided => (u - centre).abs() >= (obs - centre).abs(),
            };
            if extreme {
                hits += 1;
            }
        }
        (obs as u64, hits as f64 / total as f64)
    }

    #[test]
    fn small_example() {
        let r = mann_whitney_u(&[3.0, 4.0], &[1.0, 2.0], Alternative::AGreater).unwrap();
        assert_eq!(r.u_a, 4.0);
        assert!(r.exact);
        assert_eq!(r.p_value, 1.0 / 6.0);
    }

    #[test]
    fn identical_groups() {
        let r = mann_whitney_u(&[1.0, 2.0, 5.0], &[1.0, 2.0, 5.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.u_a, 4.5);
        assert_eq!(r.p_value, 1.0);
        let big: Vec<f64> = (0..20).map(|i| (i % 7) as f64).collect();
        let r = mann_whitney_u(&big, &big, Alternative::TwoSided).unwrap();
        assert!(!r.exact);
        assert_eq!(r.u_a, 200.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert_eq!(
            mann_whitney_u(&[], &[1.0], Alternative::TwoSided).unwrap_err().kind(),
            "EmptyGroup"
        );
    }

    #[test]
    fn normal_approximation_detects_a_shift() {
        let a: Vec<f64> = (0..30).map(|i| 10.0 + i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let r = mann_whitney_u(&a, &b, Alternative::AGreater).unwrap();
        assert_eq!(r.u_a, 900.0);
        assert!(r.p_value < 1e-9);
        let r = mann_whitney_u(&b, &a, Alternative::AGreater).unwrap();
        assert!(r.p_value > 0.999);
    }

    #[test]
    fn normal_approximation_reference_value() {
        // all 20 values distinct, so ranks equal values: R_a = 112, U_a = 112 - 55 = 57,
        // variance 10 * 10 * 21 / 12 = 175
        let a = [3., 5., 6., 8., 11., 12., 14., 15., 18., 20.];
        let b = [1., 2., 4., 7., 9., 10., 13., 16., 17., 19.];
        let r = mann_whitney_u(&a, &b, Alternative::AGreater).unwrap();
        assert!(!r.exact);
        assert_eq!(r.u_a, 57.0);
        let expected = 1.0 - Normal::standard().cdf(6.5 / 175f64.sqrt());
        assert!((r.p_value - expected).abs() < 1e-15);
        let two = mann_whitney_u(&a, &b, Alternative::TwoSided).unwrap();
        assert!((two.p_value - 2.0 * expected).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            a in proptest::collection::vec(0u8..5, 1..5),
            b in proptest::collection::vec(0u8..5, 1..5),
            two_sided in any::<bool>(),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let alt = if two_sided { Alternative::TwoSided } else { Alternative::AGreater };
            let r = mann_whitney_u(&a, &b, alt).unwrap();
            let (u2, p) = oracle(&a, &b, alt);
            prop_assert_eq!(r.u_a * 2.0, u2 as f64);
            prop_assert_eq!(r.u_a + r.u_b, (a.len() * b.len()) as f64);
            prop_assert!((r.p_value - p).abs() <= 1e-12);
        }
    }
}
