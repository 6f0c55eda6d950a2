//! Null-model fit, per-marker score statistics and their banded correlation.
//!
//! All per-marker quantities go through the weighted residual of a marker
//! column, `z_j = W x_j − Q Qᵀ W x_j` with `W = Λ^{1/2}` and `Q` an orthonormal
//! basis of `W X_e`. Then `var_j = ‖z_j‖²` and the statistic correlation is
//! `z_jᵀ z_k / (‖z_j‖ ‖z_k‖)`, so no `n × n` or `m × m` matrix is formed.

mod band;
mod fit;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::mvn::two_sided_tail;

pub use band::{detect_blocks, BandedCorrelation};
pub use fit::{fit_null, NullFit, IRLS_MAX_ITERATIONS, IRLS_TOLERANCE};

/// A marker is degenerate when its projected variance is at most this
/// multiple of `n` times the mean weight.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Markers per parallel work item when building the band.
const BAND_CHUNK: usize = 256;

/// Standardized per-marker score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStatistics {
    pub t: Vec<f64>,
    /// `x_jᵀ(Y − μ̂)`.
    pub score: Vec<f64>,
    /// `x_jᵀ(Λ − ΛX_e(X_eᵀΛX_e)⁻¹X_eᵀΛ)x_j`.
    pub var_diag: Vec<f64>,
    pub p_unadjusted: Vec<f64>,
}

/// How the statistic correlations are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationMode {
    /// Projection on the covariates with the null-model weights.
    #[default]
    Exact,
    /// Plain Pearson correlation of the genotype columns.
    GenotypeOnly,
}

impl std::str::FromStr for CorrelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(CorrelationMode::Exact),
            "genotype-only" | "genotype" => Ok(CorrelationMode::GenotypeOnly),
            _ => Err(Error::InvalidArgument(format!(
                "unknown correlation mode {s:?} (expected exact or genotype-only)"
            ))),
        }
    }
}

/// Weighted projection onto the orthogonal complement of the covariate space.
#[derive(Debug, Clone)]
pub struct Projector {
    sqrt_w: Vec<f64>,
    /// `n × d`, orthonormal columns spanning `W X_e`.
    q: DMatrix<f64>,
    degenerate_below: f64,
}

impl Projector {
    pub fn new(covariates: &DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        let n = covariates.nrows();
        if weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {n} individuals",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-positive weight {w}")));
        }
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let wx = DMatrix::from_fn(n, covariates.ncols(), |i, j| sqrt_w[i] * covariates[(i, j)]);
        let q = wx.qr().q();
        let mean_w = weights.iter().sum::<f64>() / n as f64;
        Ok(Projector {
            sqrt_w,
            q,
            degenerate_below: DEGENERATE_EPS * n as f64 * mean_w,
        })
    }

    /// Unweighted projection on the intercept alone (column centering).
    pub fn centering(n: usize) -> Self {
        let ones = DMatrix::from_element(n, 1, 1.0);
        Self::new(&ones, &vec![1.0; n]).expect("unit weights are valid")
    }

    pub fn n(&self) -> usize {
        self.sqrt_w.len()
    }

    /// `W x − Q Qᵀ W x`, with a second Gram–Schmidt pass against cancellation.
    pub fn residualize(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = x.iter().zip(&self.sqrt_w).map(|(a, w)| a * w).collect();
        for _ in 0..2 {
            for col in self.q.column_iter() {
                let c: f64 = col.iter().zip(&z).map(|(a, b)| a * b).sum();
                for (zi, qi) in z.iter_mut().zip(col.iter()) {
                    *zi -= c * qi;
                }
            }
        }
        z
    }

    /// Residualized marker `j` and its squared norm, or the degenerate-marker error.
    fn marker(&self, dataset: &Dataset, j: usize) -> Result<(Vec<f64>, f64)> {
        let z = self.residualize(dataset.genotypes().column(j));
        let v: f64 = z.iter().map(|a| a * a).sum();
        if !(v > self.degenerate_below) {
            return Err(Error::DegenerateMarker(j));
        }
        Ok((z, v))
    }
}

fn require_complete(dataset: &Dataset) -> Result<()> {
    if dataset.genotypes().has_missing() {
        return Err(Error::InvalidArgument(
            "genotypes contain missing values; impute them first".into(),
        ));
    }
    Ok(())
}

fn check_fit(dataset: &Dataset, fit: &NullFit) -> Result<()> {
    if !fit.converged {
        return Err(Error::InvalidArgument("null fit did not converge".into()));
    }
    if fit.residuals.len() != dataset.n() {
        return Err(Error::DimensionMismatch(format!(
            "null fit has {} individuals, data set has {}",
            fit.residuals.len(),
            dataset.n()
        )));
    }
    Ok(())
}

/// Score, variance, standardized statistic and two-sided p-value per marker.
pub fn score_statistics(dataset: &Dataset, fit: &NullFit) -> Result<ScoreStatistics> {
    check_fit(dataset, fit)?;
    require_complete(dataset)?;
    let proj = Projector::new(dataset.covariates(), &fit.score_weights())?;
    let per_marker: Vec<(f64, f64)> = (0..dataset.m())
        .into_par_iter()
        .map(|j| {
            let (_, v) = proj.marker(dataset, j)?;
            let x = dataset.genotypes().column(j);
            let s: f64 = x.iter().zip(&fit.residuals).map(|(a, r)| a * r).sum();
            Ok((s, v))
        })
        .collect::<Result<_>>()?;
    let score: Vec<f64> = per_marker.iter().map(|p| p.0).collect();
    let var_diag: Vec<f64> = per_marker.iter().map(|p| p.1).collect();
    let t: Vec<f64> = score
        .iter()
        .zip(&var_diag)
        .map(|(s, v)| s / v.sqrt())
        .collect();
    let p_unadjusted = t.iter().map(|t| two_sided_tail(t.abs())).collect();
    Ok(ScoreStatistics {
        t,
        score,
        var_diag,
        p_unadjusted,
    })
}

/// Correlations of the statistics up to lag `bandwidth − 1`, as one block.
pub fn correlation_band(
    dataset: &Dataset,
    fit: &NullFit,
    bandwidth: usize,
    mode: CorrelationMode,
) -> Result<BandedCorrelation> {
    if bandwidth == 0 {
        return Err(Error::InvalidArgument(
            "bandwidth must be at least 1".into(),
        ));
    }
    check_fit(dataset, fit)?;
    require_complete(dataset)?;
    let proj = match mode {
        CorrelationMode::Exact => Projector::new(dataset.covariates(), &fit.score_weights())?,
        CorrelationMode::GenotypeOnly => {
            if dataset.d() > 1 {
                warn!(
                    "genotype-only correlations ignore {} environmental covariates; \
                     they are approximate unless the covariates are uncorrelated with the genotypes",
                    dataset.d() - 1
                );
            }
            Projector::centering(dataset.n())
        }
    };
    band_from_projector(dataset, &proj, bandwidth)
}

fn band_from_projector(
    dataset: &Dataset,
    proj: &Projector,
    bandwidth: usize,
) -> Result<BandedCorrelation> {
    let m = dataset.m();
    let stride = bandwidth - 1;
    let chunks: Vec<Vec<f64>> = (0..m.div_ceil(BAND_CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * BAND_CHUNK;
            let end = (start + BAND_CHUNK).min(m);
            let reach = (end + stride).min(m);
            let cols = (start..reach)
                .map(|j| {
                    let (z, v) = proj.marker(dataset, j)?;
                    let inv = 1.0 / v.sqrt();
                    Ok(z.into_iter().map(|a| a * inv).collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = vec![0.0; (end - start) * stride];
            for j in start..end {
                for delta in 1..bandwidth {
                    if j + delta < m {
                        let a = &cols[j - start];
                        let b = &cols[j + delta - start];
                        let r: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        out[(j - start) * stride + delta - 1] = r.clamp(-1.0, 1.0);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = chunks.into_iter().flatten().collect();
    BandedCorrelation::from_fn(m, bandwidth, |j, delta| flat[j * stride + delta - 1])
}
