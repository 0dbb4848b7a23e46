//! Sparse Cholesky factorization `PᵀQP = LLᵀ`.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::ordering::Ordering;
use super::sparse::SparseSymmetric;
use crate::error::{Error, Result};

/// Symbolic analysis: ordering plus the sparsity pattern of `L`.
///
/// Reusable across every matrix that shares the analysed pattern.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    dim: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    l_col_ptr: Vec<usize>,
    /// Row indices per column, diagonal first then ascending.
    l_row_idx: Vec<usize>,
    q_col_ptr: Vec<usize>,
    q_row_idx: Vec<usize>,
    /// Position in the factor's value array of each stored entry of `Q`.
    q_map: Vec<usize>,
}

impl SymbolicCholesky {
    pub fn analyze(q: &SparseSymmetric, ordering: &Ordering) -> Result<Self> {
        let n = q.dim();
        let perm = ordering.permutation(q);
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: perm.len(),
            });
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(Error::InvalidInput("ordering is not a permutation".into()));
            }
            inv[old] = new;
        }

        // Lower pattern of the permuted matrix, by column.
        let mut a_cols: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
        for (r, c, _) in q.lower_triplets() {
            let (pr, pc) = (inv[r], inv[c]);
            let (hi, lo) = if pr >= pc { (pr, pc) } else { (pc, pr) };
            if hi != lo {
                a_cols[lo].push(hi);
            }
        }

        // Column patterns of L: own entries plus those inherited from children
        // in the elimination tree.
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut l_cols: Vec<Vec<usize>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut rows = std::mem::take(&mut a_cols[j]);
            for &c in &children[j] {
                let col: &Vec<usize> = &l_cols[c];
                rows.extend(col.iter().copied().filter(|&r| r > j));
            }
            rows.sort_unstable();
            rows.dedup();
            if let Some(&parent) = rows.iter().find(|&&r| r > j) {
                children[parent].push(j);
            }
            l_cols.push(rows);
        }

        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        let mut l_row_idx = Vec::new();
        for col in &l_cols {
            l_row_idx.extend_from_slice(col);
            l_col_ptr.push(l_row_idx.len());
        }

        let mut q_map = Vec::with_capacity(q.nnz());
        for (r, c, _) in q.lower_triplets() {
            let (pr, pc) = (inv[r], inv[c]);
            let (hi, lo) = if pr >= pc { (pr, pc) } else { (pc, pr) };
            let start = l_col_ptr[lo];
            let rows = &l_row_idx[start..l_col_ptr[lo + 1]];
            let pos = if hi == lo {
                0
            } else {
                1 + rows[1..].binary_search(&hi).expect("pattern contains every entry of Q")
            };
            q_map.push(start + pos);
        }

        Ok(Self {
            dim: n,
            perm,
            l_col_ptr,
            l_row_idx,
            q_col_ptr: q.col_ptr().to_vec(),
            q_row_idx: q.row_idx().to_vec(),
            q_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Nonzeros in `L`, diagonal included.
    pub fn factor_nnz(&self) -> usize {
        self.l_row_idx.len()
    }

    fn matches(&self, q: &SparseSymmetric) -> bool {
        q.dim() == self.dim && q.col_ptr() == self.q_col_ptr.as_slice() && q.row_idx() == self.q_row_idx.as_slice()
    }
}

/// Numeric Cholesky factor. Immutable once built; solves allocate their own workspace.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    values: Arc<[f64]>,
    log_det: f64,
}

impl CholeskyFactor {
    /// Factorizes with the default minimum-degree ordering.
    pub fn factorize(q: &SparseSymmetric) -> Result<Self> {
        Self::factorize_with_ordering(q, &Ordering::default())
    }

    pub fn factorize_with_ordering(q: &SparseSymmetric, ordering: &Ordering) -> Result<Self> {
        let symbolic = Arc::new(SymbolicCholesky::analyze(q, ordering)?);
        Self::factorize_symbolic(symbolic, q)
    }

    /// Numeric factorization on a precomputed analysis. Re-analyses when the pattern
    /// of `q` differs from the analysed one.
    pub fn factorize_symbolic(symbolic: Arc<SymbolicCholesky>, q: &SparseSymmetric) -> Result<Self> {
        let symbolic = if symbolic.matches(q) {
            symbolic
        } else {
            Arc::new(SymbolicCholesky::analyze(q, &Ordering::default())?)
        };
        let s = &*symbolic;
        let n = s.dim;
        let mut values = vec![0.0; s.l_row_idx.len()];
        for (p, &v) in q.values().iter().enumerate() {
            values[s.q_map[p]] += v;
        }

        let mut work = vec![0.0; n];
        // For each column k, the position of its next unprocessed off-diagonal entry.
        let mut next = vec![0usize; n];
        // Linked lists of columns keyed by the row of their next entry.
        let mut head = vec![usize::MAX; n];
        let mut link = vec![usize::MAX; n];
        let mut log_det = 0.0;

        for j in 0..n {
            let (start, end) = (s.l_col_ptr[j], s.l_col_ptr[j + 1]);
            for p in start..end {
                work[s.l_row_idx[p]] = values[p];
            }
            let mut k = head[j];
            head[j] = usize::MAX;
            while k != usize::MAX {
                let following = link[k];
                let p = next[k];
                let ljk = values[p];
                for q in p..s.l_col_ptr[k + 1] {
                    work[s.l_row_idx[q]] -= values[q] * ljk;
                }
                let np = p + 1;
                next[k] = np;
                if np < s.l_col_ptr[k + 1] {
                    let r = s.l_row_idx[np];
                    link[k] = head[r];
                    head[r] = k;
                }
                k = following;
            }
            let d = work[j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: s.perm[j] });
            }
            let ljj = d.sqrt();
            log_det += 2.0 * ljj.ln();
            values[start] = ljj;
            work[j] = 0.0;
            for p in start + 1..end {
                let r = s.l_row_idx[p];
                values[p] = work[r] / ljj;
                work[r] = 0.0;
            }
            if start + 1 < end {
                next[j] = start + 1;
                let r = s.l_row_idx[start + 1];
                link[j] = head[r];
                head[r] = j;
            }
        }
        Ok(Self {
            symbolic,
            values: values.into(),
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.dim
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    /// `log det Q = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; n];
        for (new, &old) in perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Maps a standard-normal vector `z` to a draw from `N(0, Q⁻¹)`.
    pub fn sample_from_standard(&self, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: z.len(),
            });
        }
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; n];
        for (new, &old) in self.symbolic.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Diagonal of `Q⁻¹` in original coordinates, from `‖L⁻¹ eᵢ‖²` per column.
    pub fn diag_inverse(&self) -> Vec<f64> {
        use rayon::prelude::*;
        let s = &*self.symbolic;
        let n = s.dim;
        let permuted: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut y = vec![0.0; n];
                y[i] = 1.0;
                let mut acc = 0.0;
                for j in i..n {
                    let start = s.l_col_ptr[j];
                    let yj = y[j] / self.values[start];
                    if yj == 0.0 {
                        continue;
                    }
                    acc += yj * yj;
                    for p in start + 1..s.l_col_ptr[j + 1] {
                        y[s.l_row_idx[p]] -= self.values[p] * yj;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; n];
        for (new, &old) in s.perm.iter().enumerate() {
            out[old] = permuted[new];
        }
        out
    }

    /// `L⁻¹ P b`, in permuted coordinates.
    pub(crate) fn forward_permuted(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.symbolic.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        y
    }

    fn forward(&self, y: &mut [f64]) {
        let s = &*self.symbolic;
        for j in 0..s.dim {
            let start = s.l_col_ptr[j];
            if y[j] == 0.0 {
                continue;
            }
            let yj = y[j] / self.values[start];
            y[j] = yj;
            for p in start + 1..s.l_col_ptr[j + 1] {
                y[s.l_row_idx[p]] -= self.values[p] * yj;
            }
        }
    }

    fn backward(&self, x: &mut [f64]) {
        let s = &*self.symbolic;
        for j in (0..s.dim).rev() {
            let start = s.l_col_ptr[j];
            let mut acc = x[j];
            for p in start + 1..s.l_col_ptr[j + 1] {
                acc -= self.values[p] * x[s.l_row_idx[p]];
            }
            x[j] = acc / self.values[start];
        }
    }

    /// Dense copy of `L` in permuted coordinates.
    pub fn l_dense(&self) -> DMatrix<f64> {
        let s = &*self.symbolic;
        let mut l = DMatrix::zeros(s.dim, s.dim);
        for j in 0..s.dim {
            for p in s.l_col_ptr[j]..s.l_col_ptr[j + 1] {
                l[(s.l_row_idx[p], j)] = self.values[p];
            }
        }
        l
    }

    /// `max |PᵀQP − LLᵀ|` over rows (infinity norm of the residual).
    pub fn reconstruction_error(&self, q: &SparseSymmetric) -> f64 {
        let l = self.l_dense();
        let llt = &l * l.transpose();
        let qd = q.to_dense();
        let perm = &self.symbolic.perm;
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += (qd[(perm[i], perm[j])] - llt[(i, j)]).abs();
            }
            worst = worst.max(row);
        }
        worst
    }
}
