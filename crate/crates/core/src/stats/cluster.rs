//! Symmetrization, average-linkage (UPGMA) clustering and dendrogram cuts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::mmd::DistanceMatrix;
use crate::numeric::tree_sum;

/// `(M + M^T) / 2`. The diagonal is kept as is.
pub fn symmetrize(m: &DistanceMatrix) -> Result<DistanceMatrix, StatsError> {
    let n = m.len();
    if m.entries.len() != n || m.entries.iter().any(|r| r.len() != n) {
        return Err(StatsError::NotSquare);
    }
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.entries[i][j] = (m.entries[i][j] + m.entries[j][i]) * 0.5;
            }
        }
    }
    Ok(out)
}

/// One agglomeration step. Nodes `0..n` are leaves; merge `t` creates node `n + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    pub linkage: String,
}

impl Dendrogram {
    /// Indented text rendering, root first.
    pub fn render(&self) -> String {
        let n = self.leaves.len();
        let mut out = String::new();
        let mut stack = vec![(n + self.merges.len() - 1, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            let pad = "  ".repeat(depth);
            if node < n {
                out.push_str(&format!("{pad}{}\n", self.leaves[node]));
            } else {
                let m = &self.merges[node - n];
                out.push_str(&format!("{pad}+ {}\n", m.height));
                stack.push((m.b, depth + 1));
                stack.push((m.a, depth + 1));
            }
        }
        out
    }
}

struct Cluster {
    node: usize,
    members: Vec<usize>,
    key: String,
}

fn average_distance(d: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let terms: Vec<f64> = a.iter().flat_map(|&i| b.iter().map(move |&j| d[i][j])).collect();
    tree_sum(&terms) / terms.len() as f64
}

/// UPGMA on a symmetric, non-negative matrix. Among equally close pairs the
/// one whose (smaller name, larger name) key sorts first merges, where a
/// cluster's name is the smallest leaf name it contains.
pub fn agglomerative_cluster(m: &DistanceMatrix) -> Result<Dendrogram, StatsError> {
    let n = m.len();
    if m.entries.len() != n || m.entries.iter().any(|r| r.len() != n) {
        return Err(StatsError::NotSquare);
    }
    if n < 2 {
        return Err(StatsError::TooFewItems(2));
    }
    for i in 0..n {
        for j in 0..n {
            if !m.entries[i][j].is_finite() {
                return Err(StatsError::NonFinite);
            }
            if m.entries[i][j] != m.entries[j][i] {
                return Err(StatsError::NotSymmetric(i, j));
            }
        }
    }
    let mut active: Vec<Cluster> = (0..n)
        .map(|i| Cluster {
            node: i,
            members: vec![i],
            key: m.names[i].clone(),
        })
        .collect();
    let mut merges = Vec::with_capacity(n - 1);
    let mut last = f64::NEG_INFINITY;
    while active.len() > 1 {
        let mut best: Option<(f64, (String, String), usize, usize)> = None;
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                let d = average_distance(&m.entries, &active[x].members, &active[y].members);
                let (lo, hi) = if active[x].key <= active[y].key { (x, y) } else { (y, x) };
                let key = (active[lo].key.clone(), active[hi].key.clone());
                let better = match &best {
                    None => true,
                    Some((bd, bk, _, _)) => d < *bd || (d == *bd && key < *bk),
                };
                if better {
                    best = Some((d, key, lo, hi));
                }
            }
        }
        let (d, _, lo, hi) = best.expect("at least one pair");
        // Average linkage cannot invert mathematically; this only absorbs rounding.
        let height = d.max(last);
        last = height;
        let (first, second) = if lo < hi { (hi, lo) } else { (lo, hi) };
        let c_hi = active.remove(first);
        let c_lo = active.remove(second);
        let (ca, cb) = if lo < hi { (c_lo, c_hi) } else { (c_hi, c_lo) };
        let mut members = ca.members.clone();
        members.extend(&cb.members);
        members.sort_unstable();
        merges.push(Merge {
            a: ca.node,
            b: cb.node,
            height,
            size: members.len(),
        });
        active.push(Cluster {
            node: n + merges.len() - 1,
            members,
            key: ca.key.min(cb.key),
        });
    }
    Ok(Dendrogram {
        leaves: m.names.clone(),
        merges,
        linkage: "average (UPGMA)".to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub items: Vec<String>,
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl Clustering {
    /// Builds a clustering from arbitrary group labels; ids are renumbered in
    /// order of first appearance.
    pub fn from_labels<L: Ord + Clone>(items: Vec<String>, labels: &[L]) -> Result<Self, StatsError> {
        if items.len() != labels.len() {
            return Err(StatsError::ItemMismatch);
        }
        let mut ids = BTreeMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l.clone()).or_insert(next)
            })
            .collect();
        Ok(Clustering {
            items,
            assignment,
            k: ids.len(),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// Assignment re-expressed in the item order of `other`.
    pub(crate) fn aligned_to(&self, other: &Clustering) -> Result<Vec<usize>, StatsError> {
        if self.items.len() != other.items.len() {
            return Err(StatsError::ItemMismatch);
        }
        let pos: BTreeMap<&str, usize> = self.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if pos.len() != self.items.len() {
            return Err(StatsError::ItemMismatch);
        }
        other
            .items
            .iter()
            .map(|name| {
                pos.get(name.as_str())
                    .map(|&i| self.assignment[i])
                    .ok_or(StatsError::ItemMismatch)
            })
            .collect()
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Applies the first `n - k` merges; cluster ids follow leaf order of first
/// appearance.
pub fn cut_at_k(d: &Dendrogram, k: usize) -> Result<Clustering, StatsError> {
    let n = d.leaves.len();
    if k < 1 || k > n {
        return Err(StatsError::KOutOfRange { k, n });
    }
    let total = n + d.merges.len();
    let mut parent: Vec<usize> = (0..total).collect();
    for (t, m) in d.merges.iter().take(n - k).enumerate() {
        let node = n + t;
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = node;
        parent[rb] = node;
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Clustering::from_labels(d.leaves.clone(), &roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(names: &[&str], e: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix::new(names.iter().map(|s| s.to_string()).collect(), e).unwrap()
    }

    #[test]
    fn symmetrize_examples() {
        let m = matrix(&["a", "b"], vec![vec![0.0, 0.4], vec![0.6, 0.1]]);
        let s = symmetrize(&m).unwrap();
        assert_eq!(s.entries, vec![vec![0.0, 0.5], vec![0.5, 0.1]]);
        assert_eq!(symmetrize(&s).unwrap(), s);
    }

    #[test]
    fn two_leaves() {
        let d = agglomerative_cluster(&matrix(&["x", "y"], vec![vec![0.0, 3.0], vec![3.0, 0.0]])).unwrap();
        assert_eq!(
            d.merges,
            vec![Merge {
                a: 0,
                b: 1,
                height: 3.0,
                size: 2
            }]
        );
    }

    fn abc() -> DistanceMatrix {
        matrix(
            &["A", "B", "C"],
            vec![vec![0.0, 1.0, 10.0], vec![1.0, 0.0, 10.0], vec![10.0, 10.0, 0.0]],
        )
    }

    #[test]
    fn three_point_order_and_cuts() {
        let d = agglomerative_cluster(&abc()).unwrap();
        assert_eq!(
            d.merges[0],
            Merge {
                a: 0,
                b: 1,
                height: 1.0,
                size: 2
            }
        );
        assert_eq!(
            d.merges[1],
            Merge {
                a: 3,
                b: 2,
                height: 10.0,
                size: 3
            }
        );
        assert_eq!(cut_at_k(&d, 3).unwrap().assignment, vec![0, 1, 2]);
        assert_eq!(cut_at_k(&d, 1).unwrap().assignment, vec![0, 0, 0]);
        let two = cut_at_k(&d, 2).unwrap();
        assert_eq!(two.assignment, vec![0, 0, 1]);
        assert_eq!(two.k, 2);
        assert!(cut_at_k(&d, 0).is_err());
        assert_eq!(cut_at_k(&d, 4).unwrap_err().kind(), "KOutOfRange");
        assert!(d.render().contains("+ 10"));
    }

    #[test]
    fn average_linkage_uses_member_means() {
        // after {A,B} at 1, d({A,B},C) = (4 + 6) / 2 = 5 and d({A,B},D) = 7
        let m = matrix(
            &["A", "B", "C", "D"],
            vec![
                vec![0.0, 1.0, 4.0, 7.0],
                vec![1.0, 0.0, 6.0, 7.0],
                vec![4.0, 6.0, 0.0, 9.0],
                vec![7.0, 7.0, 9.0, 0.0],
            ],
        );
        let d = agglomerative_cluster(&m).unwrap();
        assert_eq!(d.merges[1].height, 5.0);
        // d({A,B,C},D) = (7 + 7 + 9) / 3
        assert!((d.merges[2].height - 23.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_name() {
        let m = matrix(
            &["d", "c", "b", "a"],
            vec![
                vec![0.0, 1.0, 5.0, 5.0],
                vec![1.0, 0.0, 5.0, 5.0],
                vec![5.0, 5.0, 0.0, 1.0],
                vec![5.0, 5.0, 1.0, 0.0],
            ],
        );
        let d = agglomerative_cluster(&m).unwrap();
        // {a,b} sorts before {c,d}
        assert_eq!((d.merges[0].a, d.merges[0].b), (3, 2));
    }

    #[test]
    fn planted_pairs_are_recovered() {
        let names = ["p0", "p1", "q0", "q1", "r0", "r1"];
        let family = |i: usize| i / 2;
        let e: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..6)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else if family(i) == family(j) {
                            0.1 + 0.01 * (i + j) as f64
                        } else {
                            1.0 + 0.05 * (i * j) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let c = cut_at_k(&agglomerative_cluster(&matrix(&names, e)).unwrap(), 3).unwrap();
        assert_eq!(c.assignment, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            agglomerative_cluster(&matrix(&["a"], vec![vec![0.0]]))
                .unwrap_err()
                .kind(),
            "TooFewItems"
        );
        let asym = matrix(&["a", "b"], vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert_eq!(agglomerative_cluster(&asym).unwrap_err().kind(), "NotSymmetric");
    }

    proptest! {
        #[test]
        fn heights_never_decrease(raw in proptest::collection::vec(0.0f64..10.0, 28)) {
            let n = 8;
            let mut e = vec![vec![0.0; n]; n];
            let mut it = raw.iter();
            for i in 0..n {
                for j in i + 1..n {
                    let v = *it.next().unwrap();
                    e[i][j] = v;
                    e[j][i] = v;
                }
            }
            let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            let d = agglomerative_cluster(&DistanceMatrix::new(names, e).unwrap()).unwrap();
            prop_assert_eq!(d.merges.len(), n - 1);
            prop_assert!(d.merges.windows(2).all(|w| w[0].height <= w[1].height));
            for k in 1..=n {
                let c = cut_at_k(&d, k).unwrap();
                prop_assert_eq!(c.k, k);
                prop_assert!(c.assignment.iter().all(|&a| a < k));
            }
        }
    }
}
