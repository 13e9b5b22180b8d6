//! Sparse numeric kernel: CSR storage, Jacobi-preconditioned conjugate
//! gradient, and Lanczos for the lowest eigenpairs of symmetric matrices.
//!
//! All graph and solver arithmetic is `f64`. Reductions run in a fixed
//! sequential order so results are bitwise reproducible for a given build.

mod cg;
mod csr;
mod lanczos;
mod dense;

pub use cg::{cg_solve, cg_solve_from, CgConfig, CgReport, CgSolution};
pub use csr::CsrMatrix;
pub use lanczos::{lanczos_lowest, lanczos_lowest_with, EigenPairs, LanczosOptions};
pub use dense::symmetric_eigen;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
