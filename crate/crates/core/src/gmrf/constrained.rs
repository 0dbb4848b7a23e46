//! Linear constraints `Cx = 0` and conditioning by kriging.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use super::cholesky::CholeskyFactor;
use crate::error::{Error, Result};

/// Relative pivot below which a Gram matrix is treated as singular.
const RANK_TOLERANCE: f64 = 1e-12;

/// Sparse `k × m` constraint matrix, one row per constraint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Constraints {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Constraints {
    pub fn none(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
        }
    }

    pub fn new(dim: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for row in &rows {
            if let Some(&(j, _)) = row.iter().find(|(j, _)| *j >= dim) {
                return Err(Error::InvalidDimension(format!(
                    "constraint column {j} outside dimension {dim}"
                )));
            }
        }
        Ok(Self { dim, rows })
    }

    /// Sum-to-zero over the given coordinates.
    pub fn sum_to_zero(indices: impl IntoIterator<Item = usize>) -> Vec<(usize, f64)> {
        indices.into_iter().map(|j| (j, 1.0)).collect()
    }

    pub fn push(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// `C x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `x += Cᵀ w`.
    pub fn add_transpose(&self, w: &[f64], x: &mut [f64]) {
        for (row, &wi) in self.rows.iter().zip(w) {
            for &(j, v) in row {
                x[j] += v * wi;
            }
        }
    }

    /// Lower-triangle triplets of `CᵀC`.
    pub fn gram_transpose_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for row in &self.rows {
            for &(a, va) in row {
                for &(b, vb) in row {
                    if a >= b {
                        t.push((a, b, va * vb));
                    }
                }
            }
        }
        t
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.rows.len(), self.dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                c[(i, j)] += v;
            }
        }
        c
    }

    /// `C Cᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        let c = self.to_dense();
        &c * c.transpose()
    }

    /// Constraints restricted to coordinates `offset..offset+len` and re-indexed
    /// from zero. Rows touching other coordinates are skipped.
    pub fn restrict(&self, offset: usize, len: usize) -> Constraints {
        let rows = self
            .rows
            .iter()
            .filter(|row| row.iter().all(|&(j, _)| j >= offset && j < offset + len))
            .map(|row| row.iter().map(|&(j, v)| (j - offset, v)).collect())
            .collect();
        Constraints { dim: len, rows }
    }

    /// Appends rows of `other` shifted by `offset` into this constraint set.
    pub fn extend_shifted(&mut self, other: &Constraints, offset: usize) {
        for row in &other.rows {
            self.rows.push(row.iter().map(|&(j, v)| (j + offset, v)).collect());
        }
    }
}

fn checked_cholesky(s: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let max_diag = s.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let chol = Cholesky::new(s).ok_or(Error::RankDeficientConstraints)?;
    let l = chol.l_dirty();
    for i in 0..l.nrows() {
        if l[(i, i)] * l[(i, i)] <= RANK_TOLERANCE * max_diag {
            return Err(Error::RankDeficientConstraints);
        }
    }
    Ok(chol)
}

/// Log-determinant of the Gram matrix `CCᵀ`; rank-deficient `C` is rejected.
pub fn log_det_gram(c: &Constraints) -> Result<f64> {
    if c.is_empty() {
        return Ok(0.0);
    }
    let chol = checked_cholesky(c.gram())?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Orthogonal projector onto the null space of `C`.
#[derive(Debug, Clone)]
pub struct NullSpaceProjector {
    constraints: Arc<Constraints>,
    gram: Option<Cholesky<f64, Dyn>>,
}

impl NullSpaceProjector {
    pub fn new(constraints: Arc<Constraints>) -> Result<Self> {
        let gram = if constraints.is_empty() {
            None
        } else {
            Some(checked_cholesky(constraints.gram())?)
        };
        Ok(Self { constraints, gram })
    }

    /// `v − Cᵀ(CCᵀ)⁻¹Cv`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        if let Some(g) = &self.gram {
            let w = g.solve(&DVector::from_vec(self.constraints.apply(v)));
            let neg: Vec<f64> = w.iter().map(|x| -x).collect();
            self.constraints.add_transpose(&neg, &mut out);
        }
        out
    }
}

/// Precomputed conditioning-by-kriging correction for a factor `Q = LLᵀ` and
/// constraints `C`: `x* = x − Q⁻¹Cᵀ (C Q⁻¹ Cᵀ)⁻¹ C x`.
#[derive(Debug, Clone)]
pub struct Kriging {
    constraints: Arc<Constraints>,
    factor: CholeskyFactor,
    schur: Option<Cholesky<f64, Dyn>>,
    log_det_schur: f64,
}

impl Kriging {
    pub fn new(factor: &CholeskyFactor, constraints: Arc<Constraints>) -> Result<Self> {
        let m = factor.dim();
        if constraints.dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: constraints.dim(),
            });
        }
        let k = constraints.count();
        if k == 0 {
            return Ok(Self {
                constraints,
                factor: factor.clone(),
                schur: None,
                log_det_schur: 0.0,
            });
        }
        // S = C Q⁻¹ Cᵀ = WᵀW with W = L⁻¹ P Cᵀ.
        let w: Vec<Vec<f64>> = constraints.rows().iter().map(|row| factor.forward_permuted(&dense_row(row, m))).collect();
        let mut s = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..=a {
                let v: f64 = w[a].iter().zip(&w[b]).map(|(x, y)| x * y).sum();
                s[(a, b)] = v;
                s[(b, a)] = v;
            }
        }
        let chol = checked_cholesky(s)?;
        let log_det_schur = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            constraints,
            factor: factor.clone(),
            schur: Some(chol),
            log_det_schur,
        })
    }

    pub fn constraints(&self) -> &Arc<Constraints> {
        &self.constraints
    }

    /// `log det(C Q⁻¹ Cᵀ)`; zero without constraints.
    pub fn log_det_schur(&self) -> f64 {
        self.log_det_schur
    }

    /// Applies the correction in place so that `C x = 0`.
    pub fn correct(&self, x: &mut [f64]) {
        let Some(schur) = &self.schur else { return };
        let cx = DVector::from_vec(self.constraints.apply(x));
        let w = schur.solve(&cx);
        let mut ctw = vec![0.0; x.len()];
        self.constraints.add_transpose(w.as_slice(), &mut ctw);
        let shift = self.factor.solve(&ctw).expect("dimensions checked at construction");
        for (xi, si) in x.iter_mut().zip(shift) {
            *xi -= si;
        }
    }

    /// Subtracts `diag(Q⁻¹Cᵀ S⁻¹ C Q⁻¹)` from unconstrained marginal variances.
    pub fn correct_variances(&self, variances: &mut [f64]) {
        let Some(schur) = &self.schur else { return };
        let m = self.factor.dim();
        let g: Vec<Vec<f64>> = self
            .constraints
            .rows()
            .iter()
            .map(|row| self.factor.solve(&dense_row(row, m)).expect("dimensions checked at construction"))
            .collect();
        let k = g.len();
        let sinv = schur.inverse();
        for (i, var) in variances.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..k {
                let ga = g[a][i];
                if ga == 0.0 {
                    continue;
                }
                for b in 0..k {
                    acc += ga * sinv[(a, b)] * g[b][i];
                }
            }
            *var -= acc;
        }
    }
}

fn dense_row(row: &[(usize, f64)], m: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    for &(j, v) in row {
        e[j] += v;
    }
    e
}

/// One constrained draw `x = mean + L⁻ᵀz`, then kriging-corrected.
pub fn draw_constrained<R: Rng + ?Sized>(
    factor: &CholeskyFactor,
    kriging: &Kriging,
    mean: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let z: Vec<f64> = (0..factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = factor.sample_from_standard(&z)?;
    for (xi, &mi) in x.iter_mut().zip(mean) {
        *xi += mi;
    }
    kriging.correct(&mut x);
    Ok(x)
}

/// `count` draws from `N(mean, Q⁻¹)` conditioned on `Cx = 0`, reproducible for a seed.
///
/// The generator is ChaCha20 seeded with [`SeedableRng::seed_from_u64`].
pub fn sample_constrained(
    factor: &CholeskyFactor,
    mean: &[f64],
    constraints: &Constraints,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if mean.len() != factor.dim() {
        return Err(Error::DimensionMismatch {
            expected: factor.dim(),
            found: mean.len(),
        });
    }
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    let kriging = Kriging::new(factor, Arc::new(constraints.clone()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| draw_constrained(factor, &kriging, mean, &mut rng))
        .collect()
}

/// `diag(Q⁻¹ − Q⁻¹Cᵀ(CQ⁻¹Cᵀ)⁻¹CQ⁻¹)`, computed exactly from repeated solves.
pub fn constrained_marginal_variances(factor: &CholeskyFactor, constraints: &Constraints) -> Result<Vec<f64>> {
    let kriging = Kriging::new(factor, Arc::new(constraints.clone()))?;
    Ok(marginal_variances_with(factor, &kriging))
}

pub fn marginal_variances_with(factor: &CholeskyFactor, kriging: &Kriging) -> Vec<f64> {
    let mut v = factor.diag_inverse();
    kriging.correct_variances(&mut v);
    // Constrained coordinates can come out at -1e-17 from round-off.
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::SparseSymmetric;

    #[test]
    fn projection_formula_two_by_two() {
        let f = CholeskyFactor::factorize(&SparseSymmetric::identity(2)).unwrap();
        let c = Constraints::new(2, vec![vec![(0, 1.0), (1, 1.0)]]).unwrap();
        let v = constrained_marginal_variances(&f, &c).unwrap();
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unconstrained_variances() {
        let f = CholeskyFactor::factorize(&SparseSymmetric::diagonal(&[2.0, 2.0])).unwrap();
        let v = constrained_marginal_variances(&f, &Constraints::none(2)).unwrap();
        assert!(v.iter().all(|x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn rank_deficient_rejected() {
        let f = CholeskyFactor::factorize(&SparseSymmetric::identity(2)).unwrap();
        let c = Constraints::new(2, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)]]).unwrap();
        assert!(matches!(Kriging::new(&f, Arc::new(c)), Err(Error::RankDeficientConstraints)));
    }

    #[test]
    fn samples_lie_on_constraint_and_repeat_with_seed() {
        let f = CholeskyFactor::factorize(&SparseSymmetric::identity(2)).unwrap();
        let c = Constraints::new(2, vec![vec![(0, 1.0), (1, 1.0)]]).unwrap();
        let a = sample_constrained(&f, &[0.0, 0.0], &c, 50, 7).unwrap();
        let b = sample_constrained(&f, &[0.0, 0.0], &c, 50, 7).unwrap();
        assert_eq!(a, b);
        for x in &a {
            assert!((x[0] + x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_annihilates_constraint() {
        let c = Arc::new(Constraints::new(3, vec![vec![(0, 1.0), (1, 1.0), (2, 1.0)]]).unwrap());
        let p = NullSpaceProjector::new(c).unwrap();
        let v = p.project(&[1.0, 2.0, 6.0]);
        assert!((v.iter().sum::<f64>()).abs() < 1e-14);
        assert!((v[0] + 2.0).abs() < 1e-14);
    }
}
