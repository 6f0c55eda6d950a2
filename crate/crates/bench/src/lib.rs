//! Shared inputs for the benchmarks.

use fwerk_core::{generate_gwas, Dataset, Result, SyntheticGwas};
use nalgebra::DMatrix;

/// Dense AR(1) correlation `ρ^|i−j|` of size `k`.
pub fn ar1_matrix(k: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// Null logistic data set with haplotype blocks, fixed seed.
pub fn null_dataset(n: usize, m: usize) -> Result<Dataset> {
    generate_gwas(&SyntheticGwas::null(n, m, 20_240_601))
}
