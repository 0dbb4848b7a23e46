//! Fill-reducing orderings.

use std::collections::BTreeSet;

use super::sparse::SparseSymmetric;

/// Ordering strategy applied before factorization.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Minimum degree on the explicit elimination graph.
    #[default]
    MinimumDegree,
    /// Identity permutation.
    Natural,
    /// Caller-supplied permutation, `perm[new] = old`.
    Given(Vec<usize>),
}

impl Ordering {
    pub(crate) fn permutation(&self, q: &SparseSymmetric) -> Vec<usize> {
        match self {
            Ordering::MinimumDegree => minimum_degree(q),
            Ordering::Natural => (0..q.dim()).collect(),
            Ordering::Given(p) => p.clone(),
        }
    }
}

/// Greedy minimum-degree ordering, ties broken by the lowest index.
///
/// Eliminating a node turns its remaining neighbourhood into a clique, so the
/// graph tracks the fill of the factor exactly. Quadratic in the dimension, which
/// is fine for the desk-scale problems this engine targets.
pub fn minimum_degree(q: &SparseSymmetric) -> Vec<usize> {
    let n = q.dim();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in q.lower_triplets() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| !eliminated[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .expect("an uneliminated node remains");
        eliminated[v] = true;
        perm.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (x, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[x + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrow_matrix_puts_hub_last() {
        // Node 0 is connected to all others; eliminating it first would fill everything.
        let n = 6;
        let mut t: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 10.0)).collect();
        for i in 1..n {
            t.push((i, 0, 1.0));
        }
        let q = SparseSymmetric::from_triplets(n, t).unwrap();
        let p = minimum_degree(&q);
        // Once the leaves are gone the hub and the last leaf tie at degree one.
        assert!(p.iter().position(|&v| v == 0).unwrap() >= n - 2);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }
}
