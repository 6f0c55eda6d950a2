//! Randomized quasi-Monte Carlo estimate of high-dimensional box probabilities.
//!
//! Separation of variables over the Cholesky factor turns the box probability
//! into an integral over the unit cube of dimension `m - 1`; that integral is
//! sampled on a Richtmyer lattice (square roots of the primes) with a tent
//! periodization and antithetic pairs. Sixteen independent random shifts give
//! the standard error.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::normal::{acklam, fast_interval};
use crate::error::{Error, Result};

/// Number of independent random shifts.
pub const RANDOMIZATIONS: usize = 16;

/// Smallest sample budget accepted.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// A factored correlation matrix together with its lattice and random shifts,
/// so that repeated estimates at different cutoffs share the same points.
#[derive(Debug, Clone)]
pub struct QmcBox {
    dim: usize,
    /// Row `i` of the Cholesky factor restricted to columns `start[i]..=i`.
    rows: Vec<Vec<f64>>,
    start: Vec<usize>,
    generator: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    points_per_shift: usize,
}

impl QmcBox {
    pub fn new(correlation: &DMatrix<f64>, samples: usize, seed: u64) -> Result<Self> {
        let dim = correlation.nrows();
        if dim == 0 || dim != correlation.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix is {}x{}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        if samples < MIN_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "at least {MIN_SAMPLES} samples are required, got {samples}"
            )));
        }
        let chol = correlation
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveSemidefinite { pivot: f64::NAN })?;
        let l = chol.l();
        let mut rows = Vec::with_capacity(dim);
        let mut start = Vec::with_capacity(dim);
        for i in 0..dim {
            // Entries this small are round-off of exact zeros (block or Markov structure).
            let first = (0..i).find(|&j| l[(i, j)].abs() > 1e-13).unwrap_or(i);
            start.push(first);
            rows.push((first..=i).map(|j| l[(i, j)]).collect());
        }
        let generator: Vec<f64> = first_primes(dim.saturating_sub(1))
            .into_iter()
            .map(|p| (p as f64).sqrt().fract())
            .collect();
        let shifts = (0..RANDOMIZATIONS)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                (0..generator.len()).map(|_| rng.random::<f64>()).collect()
            })
            .collect();
        let points_per_shift = samples.div_ceil(2 * RANDOMIZATIONS);
        Ok(QmcBox {
            dim,
            rows,
            start,
            generator,
            shifts,
            points_per_shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Estimate `P(|T_j| < c for all j)`.
    pub fn estimate(&self, c: f64) -> McEstimate {
        let means: Vec<f64> = (0..RANDOMIZATIONS)
            .into_par_iter()
            .map(|r| self.shift_mean(r, c))
            .collect();
        let k = RANDOMIZATIONS as f64;
        let mean = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (k - 1.0);
        McEstimate {
            estimate: mean,
            std_error: (var / k).sqrt(),
        }
    }

    fn shift_mean(&self, r: usize, c: f64) -> f64 {
        let shift = &self.shifts[r];
        let n = self.dim - 1;
        let mut u = vec![0.0; n];
        let mut y = vec![0.0; self.dim];
        let mut acc = 0.0;
        for i in 1..=self.points_per_shift {
            for d in 0..n {
                let x = (i as f64 * self.generator[d] + shift[d]).fract();
                u[d] = (2.0 * x - 1.0).abs();
            }
            acc += self.integrand(&u, c, false, &mut y);
            acc += self.integrand(&u, c, true, &mut y);
        }
        acc / (2 * self.points_per_shift) as f64
    }

    fn integrand(&self, u: &[f64], c: f64, antithetic: bool, y: &mut [f64]) -> f64 {
        let mut prob = 1.0;
        for i in 0..self.dim {
            let row = &self.rows[i];
            let first = self.start[i];
            let diag = row[row.len() - 1];
            let mut s = 0.0;
            for (off, &lij) in row[..row.len() - 1].iter().enumerate() {
                s += lij * y[first + off];
            }
            let a = (-c - s) / diag;
            let b = (c - s) / diag;
            let (lower, width) = fast_interval(a, b);
            if width <= 0.0 {
                return 0.0;
            }
            prob *= width;
            if i + 1 < self.dim {
                let ui = if antithetic { 1.0 - u[i] } else { u[i] };
                let p = (lower + ui * width).clamp(1e-300, 1.0 - 1e-16);
                y[i] = acklam(p);
            }
        }
        prob
    }
}

/// Randomized-QMC estimate of `P(all |T_j| < c)` for a full correlation matrix.
pub fn box_mc(correlation: &DMatrix<f64>, c: f64, samples: usize, seed: u64) -> Result<McEstimate> {
    Ok(QmcBox::new(correlation, samples, seed)?.estimate(c))
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| candidate % p != 0)
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}
