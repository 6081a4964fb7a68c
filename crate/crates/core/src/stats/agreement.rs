//! Fowlkes-Mallows index and the fixed-cluster-size permutation test.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Clustering, StatsError};
use crate::data::{derive_seed, SeededRng};

/// Largest assignment count exact mode will enumerate.
pub const EXACT_LIMIT: u128 = 1_000_000;
const TOLERANCE: f64 = 1e-12;
const CHUNK: usize = 1024;

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// FM over two label vectors in the same item order.
fn fm_labels(a: &[usize], b: &[usize]) -> f64 {
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let tp: u64 = joint.values().map(|&c| pairs(c)).sum();
    let p1: u64 = rows.values().map(|&c| pairs(c)).sum();
    let p2: u64 = cols.values().map(|&c| pairs(c)).sum();
    if p1 == 0 && p2 == 0 {
        // both all-singletons: the clusterings coincide
        return 1.0;
    }
    if tp == 0 {
        return 0.0;
    }
    tp as f64 / ((p1 as f64) * (p2 as f64)).sqrt()
}

/// `TP / sqrt((TP + FP)(TP + FN))` over same-cluster item pairs. Zero when no
/// pair is shared; one when both clusterings are all singletons.
pub fn fowlkes_mallows(c1: &Clustering, c2: &Clustering) -> Result<f64, StatsError> {
    let b = c2.aligned_to(c1)?;
    Ok(fm_labels(&c1.assignment, &b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationMode {
    Exact,
    MonteCarlo { n_perm: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_fm: f64,
    pub p_value: f64,
    pub mode: PermutationMode,
    /// Assignments evaluated (all distinct ones in exact mode).
    pub evaluated: u128,
    /// Assignments with FM at least the observed value.
    pub at_least: u128,
}

fn distinct_assignments(labels: &[usize]) -> u128 {
    let mut counts: BTreeMap<usize, u128> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut remaining = labels.len() as u128;
    let mut total: u128 = 1;
    for &c in counts.values() {
        // multiply by C(remaining, c), built incrementally to stay integral
        let mut binom: u128 = 1;
        for i in 0..c {
            binom = match binom.checked_mul(remaining - i) {
                Some(v) => v / (i + 1),
                None => return u128::MAX,
            };
        }
        total = total.saturating_mul(binom);
        remaining -= c;
    }
    total
}

/// Advances to the next lexicographic arrangement; false after the last one.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Probability that reassigning the observed cluster labels to items at
/// random, keeping every cluster size fixed, agrees with `reference` at least
/// as well as the observed clustering does.
pub fn permutation_test_fm(
    reference: &Clustering,
    observed: &Clustering,
    mode: PermutationMode,
) -> Result<PermutationResult, StatsError> {
    let obs = observed.aligned_to(reference)?;
    let reference = &reference.assignment;
    let observed_fm = fm_labels(reference, &obs);
    let threshold = observed_fm - TOLERANCE;
    let (evaluated, at_least, p_value) = match mode {
        PermutationMode::Exact => {
            let total = distinct_assignments(&obs);
            if total > EXACT_LIMIT {
                return Err(StatsError::ExactTooLarge(total));
            }
            let mut perm = obs.clone();
            perm.sort_unstable();
            let mut hits: u128 = 0;
            let mut seen: u128 = 0;
            loop {
                seen += 1;
                if fm_labels(reference, &perm) >= threshold {
                    hits += 1;
                }
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            debug_assert_eq!(seen, total);
            (seen, hits, hits as f64 / seen as f64)
        }
        PermutationMode::MonteCarlo { n_perm, seed } => {
            if n_perm == 0 {
                return Err(StatsError::InvalidPermutations);
            }
            let chunks = n_perm.div_ceil(CHUNK);
            let hits: u128 = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = SeededRng::new(derive_seed(seed, c as u64));
                    let mut perm = obs.clone();
                    let len = CHUNK.min(n_perm - c * CHUNK);
                    let mut h = 0u128;
                    for _ in 0..len {
                        perm.shuffle(&mut rng);
                        if fm_labels(reference, &perm) >= threshold {
                            h += 1;
                        }
                    }
                    h
                })
                .sum();
            (n_perm as u128, hits, (1 + hits) as f64 / (1 + n_perm) as f64)
        }
    };
    Ok(PermutationResult {
        observed_fm,
        p_value,
        mode,
        evaluated,
        at_least,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clustering(labels: &[usize]) -> Clustering {
        let items = (0..labels.len()).map(|i| format!("i{i}")).collect();
        Clustering::from_labels(items, labels).unwrap()
    }

    /// Pair enumeration straight from the definition.
    fn fm_oracle(a: &[usize], b: &[usize]) -> f64 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        if tp + fp == 0 && tp + fn_ == 0 {
            1.0
        } else if tp == 0 {
            0.0
        } else {
            tp as f64 / (((tp + fp) * (tp + fn_)) as f64).sqrt()
        }
    }

    #[test]
    fn fm_examples() {
        let a = clustering(&[0, 0, 1]);
        assert_eq!(fowlkes_mallows(&a, &a).unwrap(), 1.0);
        let b = clustering(&[0, 1, 1]);
        assert_eq!(fowlkes_mallows(&a, &b).unwrap(), 0.0);
        assert_eq!(fowlkes_mallows(&b, &a).unwrap(), 0.0);
        // relabeling does not matter
        let c = Clustering::from_labels(a.items.clone(), &[7, 7, 3]).unwrap();
        assert_eq!(fowlkes_mallows(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn item_order_is_resolved_by_name() {
        let a = Clustering::from_labels(vec!["x".into(), "y".into(), "z".into()], &[0, 0, 1]).unwrap();
        let b = Clustering::from_labels(vec!["z".into(), "x".into(), "y".into()], &[5, 4, 4]).unwrap();
        assert_eq!(fowlkes_mallows(&a, &b).unwrap(), 1.0);
        let c = Clustering::from_labels(vec!["x".into(), "y".into(), "w".into()], &[0, 0, 1]).unwrap();
        assert_eq!(fowlkes_mallows(&a, &c).unwrap_err().kind(), "ItemMismatch");
    }

    proptest! {
        #[test]
        fn fm_matches_pair_oracle(
            a in proptest::collection::vec(0usize..4, 2..9),
            seed in any::<u64>(),
        ) {
            let mut rng = SeededRng::new(seed);
            let mut b = a.clone();
            b.shuffle(&mut rng);
            for x in b.iter_mut().step_by(3) {
                *x = (*x + 1) % 4;
            }
            let fm = fowlkes_mallows(&clustering(&a), &clustering(&b)).unwrap();
            prop_assert!((fm - fm_oracle(&a, &b)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&fm));
            let sym = fowlkes_mallows(&clustering(&b), &clustering(&a)).unwrap();
            prop_assert_eq!(fm, sym);
            let same = clustering(&a) .assignment == clustering(&b).assignment;
            prop_assert_eq!(fm == 1.0, same);
        }
    }

    #[test]
    fn assignment_counts() {
        assert_eq!(distinct_assignments(&[0, 0, 0, 1, 1, 2]), 60);
        assert_eq!(distinct_assignments(&[0, 0, 1, 1, 2, 2]), 90);
        assert_eq!(distinct_assignments(&[0, 1, 2, 3]), 24);
    }

    #[test]
    fn enumeration_visits_each_distinct_arrangement_once() {
        let mut v = vec![0, 0, 1, 1, 2];
        let mut all = std::collections::BTreeSet::new();
        loop {
            assert!(all.insert(v.clone()));
            if !next_permutation(&mut v) {
                break;
            }
        }
        assert_eq!(all.len(), 30);
    }

    #[test]
    fn perfect_agreement_three_two_one() {
        let r = clustering(&[0, 0, 0, 1, 1, 2]);
        let res = permutation_test_fm(&r, &r, PermutationMode::Exact).unwrap();
        assert_eq!(res.evaluated, 60);
        assert_eq!(res.at_least, 1);
        assert_eq!(res.p_value, 1.0 / 60.0);
        assert!((res.p_value - 0.016667).abs() < 1e-6);
    }

    #[test]
    fn perfect_agreement_two_two_two() {
        let r = clustering(&[0, 0, 1, 1, 2, 2]);
        let res = permutation_test_fm(&r, &r, PermutationMode::Exact).unwrap();
        // arrangements that recover the pairing: 3! relabelings of the pairs
        assert_eq!(res.evaluated, 90);
        assert_eq!(res.at_least, 6);
        assert_eq!(res.p_value, 1.0 / 15.0);
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let r = clustering(&[0, 0, 0, 1, 1, 2]);
        let o = clustering(&[0, 0, 1, 1, 2, 0]);
        let exact = permutation_test_fm(&r, &o, PermutationMode::Exact).unwrap().p_value;
        let mc = permutation_test_fm(
            &r,
            &o,
            PermutationMode::MonteCarlo {
                n_perm: 20_000,
                seed: 4,
            },
        )
        .unwrap()
        .p_value;
        let se = (exact * (1.0 - exact) / 20_000.0).sqrt();
        assert!((mc - exact).abs() <= 3.0 * se, "exact {exact} mc {mc}");
        let again = permutation_test_fm(
            &r,
            &o,
            PermutationMode::MonteCarlo {
                n_perm: 20_000,
                seed: 4,
            },
        )
        .unwrap()
        .p_value;
        assert_eq!(mc, again);
    }

    #[test]
    fn unrelated_clusterings_give_central_p_values() {
        let mut rng = SeededRng::new(99);
        let reference = clustering(&[0, 0, 0, 1, 1, 1, 2, 2]);
        let mut ps: Vec<f64> = (0..41)
            .map(|_| {
                let mut l = vec![0, 0, 0, 1, 1, 2, 2, 2];
                l.shuffle(&mut rng);
                permutation_test_fm(&reference, &clustering(&l), PermutationMode::Exact)
                    .unwrap()
                    .p_value
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let median = ps[ps.len() / 2];
        assert!((0.3..=0.7).contains(&median), "median p {median}");
    }

    #[test]
    fn exact_mode_has_a_ceiling() {
        let labels: Vec<usize> = (0..12).collect();
        let c = clustering(&labels);
        assert_eq!(
            permutation_test_fm(&c, &c, PermutationMode::Exact).unwrap_err().kind(),
            "ExactTooLarge"
        );
        assert!(permutation_test_fm(&c, &c, PermutationMode::MonteCarlo { n_perm: 0, seed: 1 }).is_err());
    }
}
