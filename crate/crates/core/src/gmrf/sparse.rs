use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix stored as the lower triangle in compressed-column form.
///
/// Entries inserted explicitly stay structural even when their value is zero, so a
/// family of matrices built from the same triplet pattern shares one sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    dim: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds from `(row, col, value)` triplets; either triangle may be given and
    /// duplicates are summed.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(Error::InvalidDimension(format!(
                    "entry ({i},{j}) outside {dim}x{dim} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({i},{j})")));
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            entries.push((c, r, v));
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));

        let mut col_ptr = vec![0usize; dim + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (c, r, v) in entries {
            if last == Some((c, r)) {
                *values.last_mut().expect("entry present") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((c, r));
            }
        }
        for c in 0..dim {
            col_ptr[c + 1] += col_ptr[c];
        }
        Ok(Self {
            dim,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        Self {
            dim,
            col_ptr: (0..=dim).collect(),
            row_idx: (0..dim).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            col_ptr: vec![0; dim + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored lower-triangle entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates the stored lower triangle as `(row, col, value)` with `row >= col`.
    pub fn lower_triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |p| (self.row_idx[p], c, self.values[p]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        match rows.binary_search(&r) {
            Ok(p) => self.values[self.col_ptr[c] + p],
            Err(_) => 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `y = A x` using both triangles.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "vector length must match matrix dimension");
        let mut y = vec![0.0; self.dim];
        for (r, c, v) in self.lower_triplets() {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, c, v) in self.lower_triplets() {
            if r == c {
                acc += v * x[r] * x[r];
            } else {
                acc += 2.0 * v * x[r] * x[c];
            }
        }
        acc
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mul_vec(&vec![1.0; self.dim])
    }

    /// Maximum absolute row sum using both triangles.
    pub fn norm_inf(&self) -> f64 {
        let mut sums = vec![0.0; self.dim];
        for (r, c, v) in self.lower_triplets() {
            sums[r] += v.abs();
            if r != c {
                sums[c] += v.abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.lower_triplets() {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// Builds from a dense matrix, reading the lower triangle and dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        let mut t = Vec::new();
        for c in 0..n {
            for r in c..n {
                if m[(r, c)] != 0.0 {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(n, t)
    }
}

/// Reusable assembly of matrices from a fixed sequence of triplet positions.
///
/// Sorting happens once; later assemblies scatter values straight into the
/// compressed storage.
#[derive(Debug, Clone)]
pub struct TripletAssembly {
    template: SparseSymmetric,
    positions: Vec<(usize, usize)>,
    slots: Vec<usize>,
}

impl TripletAssembly {
    pub fn new(dim: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let template = SparseSymmetric::from_triplets(dim, triplets.iter().map(|&(i, j, _)| (i, j, 0.0)))?;
        let slots = triplets
            .iter()
            .map(|&(i, j, _)| {
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                let col = &template.row_idx[template.col_ptr[c]..template.col_ptr[c + 1]];
                template.col_ptr[c] + col.binary_search(&r).expect("entry in pattern")
            })
            .collect();
        Ok(Self {
            template,
            positions: triplets.iter().map(|&(i, j, _)| (i, j)).collect(),
            slots,
        })
    }

    /// True when `triplets` has the positions this assembly was built from.
    pub fn fits(&self, triplets: &[(usize, usize, f64)]) -> bool {
        triplets.len() == self.positions.len() && triplets.iter().zip(&self.positions).all(|(t, p)| (t.0, t.1) == *p)
    }

    pub fn assemble(&self, triplets: &[(usize, usize, f64)]) -> Result<SparseSymmetric> {
        if !self.fits(triplets) {
            return SparseSymmetric::from_triplets(self.template.dim, triplets.iter().copied());
        }
        let mut out = self.template.clone();
        for (&slot, &(i, j, v)) in self.slots.iter().zip(triplets) {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({i},{j})")));
            }
            out.values[slot] += v;
        }
        Ok(out)
    }
}
