//! Sparse linear algebra: CSC storage, ordering, Cholesky up/downdates and
//! block solves.

mod cholesky;
mod csc;
mod ordering;
mod solve;

pub use cholesky::{symbolic_structure, CholeskyFactor, Sign, DOWNDATE_EPS};
pub use csc::SparseMatrix;
pub use ordering::{amd_order, symbolic_factor_nnz, Permutation};
pub use solve::{full_solve, partial_solve, partial_solve_uncorrected, solve_columns, ActiveSet, StaticBlockCache};
