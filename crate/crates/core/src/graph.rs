//! Neighbourhood graphs and the structure matrices of structured random effects.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gmrf::SparseSymmetric;

/// Upper bound on the dimension of a Kronecker product.
pub const DEFAULT_KRONECKER_CAP: usize = 5_000_000;

/// Undirected neighbourhood graph over areas in canonical (input) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    areas: Vec<String>,
    index: HashMap<String, usize>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a symmetric, deduplicated graph from id pairs. Isolated areas are allowed.
    pub fn from_edges<A, E>(areas: &[A], edges: &[(E, E)]) -> Result<Self>
    where
        A: AsRef<str>,
        E: AsRef<str>,
    {
        let mut index = HashMap::with_capacity(areas.len());
        for (i, a) in areas.iter().enumerate() {
            if index.insert(a.as_ref().to_string(), i).is_some() {
                return Err(Error::DuplicateArea(a.as_ref().to_string()));
            }
        }
        let mut pairs = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            let i = *index.get(a).ok_or_else(|| Error::UnknownArea(a.to_string()))?;
            let j = *index.get(b).ok_or_else(|| Error::UnknownArea(b.to_string()))?;
            if i == j {
                return Err(Error::SelfLoop(a.to_string()));
            }
            pairs.push((i, j));
        }
        let areas: Vec<String> = areas.iter().map(|a| a.as_ref().to_string()).collect();
        Self::from_index_pairs(areas, index, &pairs)
    }

    /// Graph over `n` areas named `"0".."n-1"` from index pairs.
    pub fn from_indices(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let areas: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let index = areas.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::UnknownArea(i.max(j).to_string()));
            }
            if i == j {
                return Err(Error::SelfLoop(i.to_string()));
            }
        }
        Self::from_index_pairs(areas, index, edges)
    }

    /// Path graph `0 – 1 – … – n-1`.
    pub fn path(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_indices(n, &edges).expect("path edges are valid")
    }

    /// Rook-contiguity lattice with `rows × cols` cells in row-major order.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::from_indices(rows * cols, &edges).expect("lattice edges are valid")
    }

    fn from_index_pairs(areas: Vec<String>, index: HashMap<String, usize>, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); areas.len()];
        for &(i, j) in pairs {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            areas,
            index,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn areas(&self) -> &[String] {
        &self.areas
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Connected components, each sorted, ordered by their smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            label[start] = id;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if label[w] == usize::MAX {
                        label[w] = id;
                        members.push(w);
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }
}

/// Sparse symmetric positive semi-definite structure matrix `F` of a random effect.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix {
    matrix: SparseSymmetric,
    rank_deficiency: usize,
}

impl StructureMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: SparseSymmetric::identity(n),
            rank_deficiency: 0,
        }
    }

    /// ICAR structure `D − W`; its null space is spanned by the component indicators.
    pub fn icar(g: &AdjacencyGraph) -> Self {
        let n = g.len();
        let mut t = Vec::with_capacity(n + g.edges().len());
        for i in 0..n {
            let deg = g.neighbors(i).len() as f64;
            // Isolated areas keep an explicit zero diagonal.
            t.push((i, i, deg));
        }
        for (i, j) in g.edges() {
            t.push((j, i, -1.0));
        }
        Self {
            matrix: SparseSymmetric::from_triplets(n, t).expect("indices in range"),
            rank_deficiency: g.connected_components().len(),
        }
    }

    /// First-order random-walk structure over `t` equally spaced times.
    pub fn rw1(t: usize) -> Result<Self> {
        if t < 2 {
            return Err(Error::InvalidDimension(format!(
                "a random walk needs at least 2 time points, got {t}"
            )));
        }
        Ok(Self::icar(&AdjacencyGraph::path(t)))
    }

    /// `a ⊗ b`, area-major: entry `((i,k),(j,l))` at `(i·dim_b + k, j·dim_b + l)`.
    pub fn kronecker(a: &Self, b: &Self) -> Result<Self> {
        Self::kronecker_capped(a, b, DEFAULT_KRONECKER_CAP)
    }

    pub fn kronecker_capped(a: &Self, b: &Self, cap: usize) -> Result<Self> {
        let (na, nb) = (a.dim(), b.dim());
        let dim = na
            .checked_mul(nb)
            .filter(|&d| d <= cap)
            .ok_or_else(|| Error::InvalidDimension(format!("kronecker product {na}x{nb} exceeds cap {cap}")))?;
        let a_full = full_entries(&a.matrix);
        let b_full = full_entries(&b.matrix);
        let mut t = Vec::with_capacity(a_full.len() * b_full.len() / 2 + 1);
        for &(i, j, va) in &a_full {
            for &(k, l, vb) in &b_full {
                let (r, c) = (i * nb + k, j * nb + l);
                if r >= c {
                    t.push((r, c, va * vb));
                }
            }
        }
        let ra = na - a.rank_deficiency;
        let rb = nb - b.rank_deficiency;
        Ok(Self {
            matrix: SparseSymmetric::from_triplets(dim, t)?,
            rank_deficiency: dim - ra * rb,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn rank_deficiency(&self) -> usize {
        self.rank_deficiency
    }

    pub fn rank(&self) -> usize {
        self.dim() - self.rank_deficiency
    }

    pub fn matrix(&self) -> &SparseSymmetric {
        &self.matrix
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }
}

fn full_entries(m: &SparseSymmetric) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(2 * m.nnz());
    for (r, c, v) in m.lower_triplets() {
        out.push((r, c, v));
        if r != c {
            out.push((c, r, v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn path_adjacency() {
        let g = AdjacencyGraph::from_edges(&["A", "B", "C"], &[("A", "B"), ("B", "C")]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = AdjacencyGraph::from_edges(&["A", "B"], &[("A", "B"), ("B", "A"), ("A", "B")]).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn self_loop_and_unknown_rejected() {
        assert!(matches!(
            AdjacencyGraph::from_edges(&["A", "B"], &[("A", "A")]),
            Err(Error::SelfLoop(id)) if id == "A"
        ));
        assert!(matches!(
            AdjacencyGraph::from_edges(&["A", "B"], &[("A", "Z")]),
            Err(Error::UnknownArea(id)) if id == "Z"
        ));
        assert!(matches!(
            AdjacencyGraph::from_edges::<_, &str>(&["A", "A"], &[]),
            Err(Error::DuplicateArea(_))
        ));
    }

    #[test]
    fn icar_examples() {
        let tri = AdjacencyGraph::from_indices(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let f = StructureMatrix::icar(&tri);
        assert_eq!(f.to_dense(), dense(&[&[2., -1., -1.], &[-1., 2., -1.], &[-1., -1., 2.]]));
        assert_eq!(f.rank_deficiency(), 1);

        let f = StructureMatrix::icar(&AdjacencyGraph::path(3));
        assert_eq!(f.to_dense(), dense(&[&[1., -1., 0.], &[-1., 2., -1.], &[0., -1., 1.]]));
        assert_eq!(f.rank_deficiency(), 1);

        let f = StructureMatrix::icar(&AdjacencyGraph::from_indices(2, &[]).unwrap());
        assert_eq!(f.to_dense(), DMatrix::zeros(2, 2));
        assert_eq!(f.rank_deficiency(), 2);
    }

    #[test]
    fn rw1_examples() {
        assert_eq!(StructureMatrix::rw1(2).unwrap().to_dense(), dense(&[&[1., -1.], &[-1., 1.]]));
        assert_eq!(
            StructureMatrix::rw1(3).unwrap().to_dense(),
            dense(&[&[1., -1., 0.], &[-1., 2., -1.], &[0., -1., 1.]])
        );
        assert_eq!(StructureMatrix::rw1(3).unwrap().rank_deficiency(), 1);
        assert!(StructureMatrix::rw1(1).is_err());
    }

    #[test]
    fn kronecker_examples() {
        let i6 = StructureMatrix::kronecker(&StructureMatrix::identity(2), &StructureMatrix::identity(3)).unwrap();
        assert_eq!(i6.to_dense(), DMatrix::identity(6, 6));
        assert_eq!(i6.rank_deficiency(), 0);

        let r = StructureMatrix::rw1(2).unwrap();
        let k = StructureMatrix::kronecker(&r, &StructureMatrix::identity(1)).unwrap();
        assert_eq!(k.to_dense(), r.to_dense());

        let two_i = StructureMatrix {
            matrix: SparseSymmetric::diagonal(&[2.0, 2.0]),
            rank_deficiency: 0,
        };
        let k = StructureMatrix::kronecker(&two_i, &r).unwrap();
        let expected = dense(&[
            &[2., -2., 0., 0.],
            &[-2., 2., 0., 0.],
            &[0., 0., 2., -2.],
            &[0., 0., -2., 2.],
        ]);
        assert_eq!(k.to_dense(), expected);
        assert_eq!(k.rank_deficiency(), 2);
    }

    #[test]
    fn kronecker_cap() {
        let a = StructureMatrix::identity(10);
        assert!(StructureMatrix::kronecker_capped(&a, &a, 99).is_err());
    }

    #[test]
    fn components() {
        let g = AdjacencyGraph::path(3);
        assert_eq!(g.connected_components(), vec![vec![0, 1, 2]]);
        let g = AdjacencyGraph::from_indices(2, &[]).unwrap();
        assert_eq!(g.connected_components(), vec![vec![0], vec![1]]);
        let g = AdjacencyGraph::from_edges(&["A", "B", "C", "D"], &[("A", "B"), ("C", "D")]).unwrap();
        assert_eq!(g.connected_components(), vec![vec![0, 1], vec![2, 3]]);
    }
}
