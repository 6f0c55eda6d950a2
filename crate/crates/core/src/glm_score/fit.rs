//! Null-model fit: least squares for the normal model, IRLS for the logistic one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, Family};

/// Convergence threshold on the max-norm of the score vector `X_eᵀ(Y − μ)`.
pub const IRLS_TOLERANCE: f64 = 1e-10;
pub const IRLS_MAX_ITERATIONS: usize = 50;

/// Fitted means this close to 0 or 1 signal separation.
const SEPARATION_EPS: f64 = 1e-10;

/// Quantities of the null model (all genetic effects zero).
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub family: Family,
    /// Environmental coefficients `β̂_e`.
    pub coefficients: Vec<f64>,
    pub mu_hat: Vec<f64>,
    /// `σ_i² = φ b''(η_i)`.
    pub lambda_diag: Vec<f64>,
    /// `φ̂`: `RSS/(n − d)` for the normal model, 1 for the logistic one.
    pub dispersion_hat: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Number of environmental covariates `d`, intercept included.
    pub covariates: usize,
}

impl NullFit {
    /// Per-individual weights used by the score variance. Equal to
    /// `lambda_diag`, except for the intercept-only normal model, where the
    /// residual variance is estimated with denominator `n`; that is the
    /// estimator under which `T_j` is exactly `√n` times the Pearson
    /// correlation of `x_j` and `Y`.
    pub fn score_weights(&self) -> Vec<f64> {
        if self.family == Family::NormalIdentity && self.covariates == 1 {
            let n = self.residuals.len() as f64;
            let rss: f64 = self.residuals.iter().map(|r| r * r).sum();
            vec![rss / n; self.residuals.len()]
        } else {
            self.lambda_diag.clone()
        }
    }
}

/// Maximum-likelihood fit of `Y` on the environmental covariates alone.
pub fn fit_null(dataset: &Dataset, family: Family) -> Result<NullFit> {
    let (n, d) = (dataset.n(), dataset.d());
    if n <= d {
        return Err(Error::TooFewIndividuals { n, d });
    }
    match family {
        Family::NormalIdentity => fit_normal(dataset),
        Family::BernoulliLogit => fit_logistic(dataset),
    }
}

fn fit_normal(dataset: &Dataset) -> Result<NullFit> {
    let x = dataset.covariates();
    let (n, d) = x.shape();
    let y = DVector::from_column_slice(dataset.phenotype());
    let beta = least_squares(x, &y)?;
    let mu = x * &beta;
    let residuals: Vec<f64> = y.iter().zip(mu.iter()).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let dispersion = rss / (n - d) as f64;
    if !(dispersion > 0.0) {
        return Err(Error::InvalidPhenotype(
            "phenotype is fitted exactly by the covariates (zero residual variance)".into(),
        ));
    }
    Ok(NullFit {
        family: Family::NormalIdentity,
        coefficients: beta.iter().copied().collect(),
        mu_hat: mu.iter().copied().collect(),
        lambda_diag: vec![dispersion; n],
        dispersion_hat: dispersion,
        residuals,
        converged: true,
        iterations: 1,
        covariates: d,
    })
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficientCovariates {
            rank: 0,
            d: x.ncols(),
        })
}

fn log_likelihood(y: &[f64], eta: &DVector<f64>) -> f64 {
    // Σ y η − log(1 + e^η), written to avoid overflow
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| {
            let log1pexp = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            yi * e - log1pexp
        })
        .sum()
}

fn fit_logistic(dataset: &Dataset) -> Result<NullFit> {
    let x = dataset.covariates();
    let (n, d) = x.shape();
    let y = dataset.phenotype();
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidPhenotype(format!(
            "logistic model needs 0/1 responses, row {} is {}",
            i + 1,
            y[i]
        )));
    }
    let cases = y.iter().filter(|&&v| v == 1.0).count();
    if cases == 0 || cases == n {
        return Err(Error::PerfectSeparation);
    }
    let family = Family::BernoulliLogit;
    let yv = DVector::from_column_slice(y);

    let mut beta = DVector::<f64>::zeros(d);
    // start at the intercept-only MLE so the first step is already sensible
    let pbar = cases as f64 / n as f64;
    beta[0] = (pbar / (1.0 - pbar)).ln();
    let mut eta = x * &beta;
    let mut loglik = log_likelihood(y, &eta);
    let mut iterations = 0;
    let mut converged = false;
    let mut score_norm = f64::INFINITY;
    let mut stalled = false;

    while iterations < IRLS_MAX_ITERATIONS {
        let mu = eta.map(|e| family.mean(e));
        let resid = &yv - &mu;
        let grad = x.transpose() * &resid;
        score_norm = grad.amax();
        if score_norm < IRLS_TOLERANCE || stalled {
            converged = true;
            break;
        }
        iterations += 1;
        let w = mu.map(|m| family.variance(m));
        let mut xtwx = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = x.row(i);
            xtwx += w[i] * row.transpose() * row;
        }
        let step = xtwx
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or(Error::PerfectSeparation)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_ll = log_likelihood(y, &cand_eta);
            if cand_ll >= loglik || (cand_ll - loglik).abs() <= 1e-15 * loglik.abs() {
                // a step that no longer moves β is round-off: the gradient is as small as it gets
                stalled = (&cand - &beta).amax() <= 4.0 * f64::EPSILON * (1.0 + beta.amax());
                beta = cand;
                eta = cand_eta;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            stalled = true;
        }
    }

    let mu: Vec<f64> = eta.iter().map(|&e| family.mean(e)).collect();
    if mu
        .iter()
        .any(|&m| m < SEPARATION_EPS || m > 1.0 - SEPARATION_EPS)
    {
        return Err(Error::PerfectSeparation);
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            score_norm,
        });
    }
    let lambda: Vec<f64> = mu.iter().map(|&m| family.variance(m)).collect();
    let residuals = y.iter().zip(&mu).map(|(a, b)| a - b).collect();
    Ok(NullFit {
        family,
        coefficients: beta.iter().copied().collect(),
        mu_hat: mu,
        lambda_diag: lambda,
        dispersion_hat: 1.0,
        residuals,
        converged,
        iterations,
        covariates: d,
    })
}
