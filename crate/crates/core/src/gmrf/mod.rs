//! Sparse Gaussian Markov random field kernel: storage, fill-reducing ordering,
//! Cholesky factorization, and sampling under linear constraints.

mod cholesky;
mod constrained;
mod ordering;
mod sparse;

pub use cholesky::{CholeskyFactor, SymbolicCholesky};
pub use constrained::{
    constrained_marginal_variances, draw_constrained, log_det_gram, marginal_variances_with, sample_constrained,
    Constraints, Kriging, NullSpaceProjector,
};
pub use ordering::{minimum_degree, Ordering};
pub use sparse::{SparseSymmetric, TripletAssembly};
