//! Permutation estimate of the cutoff for `max_j |T_j|`.
//!
//! When every environmental covariate is a function of the strata, a
//! permutation of the response within strata leaves `X_eᵀY`, and therefore the
//! whole null fit, unchanged; the residual vector is permuted along with `Y`.
//! Each permutation then costs one dot product per marker with the
//! precomputed columns `x_j / √var_j`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glm_score::{fit_null, score_statistics};
use crate::model::{Dataset, Family};
use crate::mvn::two_sided_tail;

/// Fewest permutations accepted.
pub const MIN_PERMUTATIONS: usize = 100;
/// Permutations per parallel work item.
const BATCH: usize = 64;

/// Bounds of the binomial order-statistic confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxtCi {
    pub confidence: f64,
    /// Count bounds: `P(k_lo ≤ B ≤ k_hi) ≥ confidence` for `B ~ Bin(b, 1 − α)`.
    pub k_lo: usize,
    pub k_hi: usize,
    /// Attained coverage.
    pub coverage: f64,
    /// `X_(k_lo)` and `X_(k_hi + 1)` of the sorted sample (1-based).
    pub lower_c: f64,
    pub upper_c: f64,
    /// `2Φ(−upper_c)` and `2Φ(−lower_c)`.
    pub lower_alpha_loc: f64,
    pub upper_alpha_loc: f64,
}

/// Result of a permutation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationRun {
    pub alpha: f64,
    pub b: usize,
    pub seed: u64,
    /// `max_j |T_j|` per permutation, in permutation order.
    pub max_stats: Vec<f64>,
    pub c_hat: f64,
    pub alpha_loc_hat: f64,
    pub ci: MaxtCi,
    pub stratified: bool,
}

/// 1-based index `⌈(1 − α) b⌉` of the cutoff order statistic.
pub fn cutoff_index(b: usize, alpha: f64) -> usize {
    let k = ((1.0 - alpha) * b as f64).ceil() as usize;
    k.clamp(1, b)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Groups of row indices sharing a stratum label, in label order.
fn strata_groups(n: usize, strata: Option<&[usize]>) -> Result<Vec<Vec<usize>>> {
    match strata {
        None => Ok(vec![(0..n).collect()]),
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} stratum labels for {n} individuals",
                    labels.len()
                )));
            }
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                groups.entry(l).or_default().push(i);
            }
            Ok(groups.into_values().collect())
        }
    }
}

/// Refuse covariates that are not functions of the strata.
fn check_exchangeable(dataset: &Dataset, groups: &[Vec<usize>], stratified: bool) -> Result<()> {
    if dataset.is_intercept_only() {
        return Ok(());
    }
    if !stratified {
        return Err(Error::NotExchangeable(format!(
            "{} environmental covariates besides the intercept; permutation needs an \
             intercept-only model or covariates that encode strata",
            dataset.d() - 1
        )));
    }
    let x = dataset.covariates();
    for col in 1..x.ncols() {
        for g in groups {
            let v = x[(g[0], col)];
            if g.iter().any(|&i| x[(i, col)] != v) {
                return Err(Error::NotExchangeable(format!(
                    "covariate {col} varies within a stratum"
                )));
            }
        }
    }
    Ok(())
}

/// Permutation `π` of replicate `r`: the permuted response is `Y[π[i]]`.
/// Each replicate draws from its own ChaCha8 stream, so the result does not
/// depend on how replicates are scheduled.
pub fn replicate_permutation(
    groups: &[Vec<usize>],
    n: usize,
    seed: u64,
    replicate: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut perm: Vec<usize> = (0..n).collect();
    for g in groups {
        let mut shuffled = g.clone();
        shuffled.shuffle(&mut rng);
        for (&i, &src) in g.iter().zip(&shuffled) {
            perm[i] = src;
        }
    }
    perm
}

/// Stratum groups as used by [`run_maxt`], for reproducing its permutations.
pub fn permutation_groups(n: usize, strata: Option<&[usize]>) -> Result<Vec<Vec<usize>>> {
    strata_groups(n, strata)
}

/// Run `b` permutations of the response and estimate the cutoff for `max_j |T_j|`.
pub fn run_maxt(
    dataset: &Dataset,
    family: Family,
    alpha: f64,
    b: usize,
    seed: u64,
    strata: Option<&[usize]>,
) -> Result<PermutationRun> {
    check_alpha(alpha)?;
    if b < MIN_PERMUTATIONS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_PERMUTATIONS} permutations are needed, got {b}"
        )));
    }
    let n = dataset.n();
    let groups = strata_groups(n, strata)?;
    check_exchangeable(dataset, &groups, strata.is_some())?;
    let fit = fit_null(dataset, family)?;
    let stats = score_statistics(dataset, &fit)?;
    let m = dataset.m();
    let mut columns = vec![0.0; n * m];
    for j in 0..m {
        let inv = 1.0 / stats.var_diag[j].sqrt();
        for (dst, &x) in columns[j * n..(j + 1) * n]
            .iter_mut()
            .zip(dataset.genotypes().column(j))
        {
            *dst = x * inv;
        }
    }
    let resid = &fit.residuals;
    let batches: Vec<Vec<f64>> = (0..b.div_ceil(BATCH))
        .into_par_iter()
        .map(|batch| {
            let start = batch * BATCH;
            let end = (start + BATCH).min(b);
            let mut permuted = vec![0.0; n];
            (start..end)
                .map(|r| {
                    let perm = replicate_permutation(&groups, n, seed, r as u64);
                    for (dst, &src) in permuted.iter_mut().zip(&perm) {
                        *dst = resid[src];
                    }
                    columns
                        .chunks_exact(n)
                        .map(|u| {
                            u.iter()
                                .zip(&permuted)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                                .abs()
                        })
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    let max_stats: Vec<f64> = batches.into_iter().flatten().collect();
    let mut sorted = max_stats.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let k = cutoff_index(b, alpha);
    let c_hat = sorted[k - 1];
    let ci = maxt_ci(&max_stats, alpha, 0.95)?;
    Ok(PermutationRun {
        alpha,
        b,
        seed,
        max_stats,
        c_hat,
        alpha_loc_hat: two_sided_tail(c_hat),
        ci,
        stratified: strata.is_some(),
    })
}

/// `ln P(B = k)` for `B ~ Bin(b, q)`.
fn ln_binom_pmf(b: usize, q: f64, k: usize) -> f64 {
    let (bf, kf) = (b as f64, k as f64);
    libm::lgamma(bf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(bf - kf + 1.0)
        + kf * q.ln()
        + (bf - kf) * (-q).ln_1p()
}

/// Equal-tailed count interval `[k_lo, k_hi]` with binomial mass at least
/// `confidence`, and the corresponding cutoff and α_loc bounds.
pub fn maxt_ci(max_stats: &[f64], alpha: f64, confidence: f64) -> Result<MaxtCi> {
    check_alpha(alpha)?;
    let b = max_stats.len();
    if b < MIN_PERMUTATIONS {
        return Err(Error::InsufficientPermutations { b, confidence });
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::InvalidArgument(format!(
            "confidence must lie in [0, 1), got {confidence}"
        )));
    }
    let (k_lo, k_hi, coverage) =
        binomial_interval(b, 1.0 - alpha, cutoff_index(b, alpha), confidence)
            .ok_or(Error::InsufficientPermutations { b, confidence })?;
    let mut sorted = max_stats.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lower_c = sorted[k_lo - 1];
    let upper_c = sorted[k_hi];
    Ok(MaxtCi {
        confidence,
        k_lo,
        k_hi,
        coverage,
        lower_c,
        upper_c,
        lower_alpha_loc: two_sided_tail(upper_c),
        upper_alpha_loc: two_sided_tail(lower_c),
    })
}

/// Largest `k_lo` with `P(B < k_lo) ≤ τ` and smallest `k_hi` with
/// `P(B > k_hi) ≤ τ`, `τ = (1 − confidence)/2`, widened to contain `point`.
/// `None` when the interval needs `k_lo < 1` or `k_hi > b − 1`.
fn binomial_interval(
    b: usize,
    q: f64,
    point: usize,
    confidence: f64,
) -> Option<(usize, usize, f64)> {
    let point = point.min(b - 1);
    let pmf: Vec<f64> = (0..=b).map(|k| ln_binom_pmf(b, q, k).exp()).collect();
    if confidence <= 0.0 {
        return Some((point, point, pmf[point]));
    }
    let tau = 0.5 * (1.0 - confidence);
    // lower tail P(B ≤ k − 1), summed upward
    let mut below = crate::numeric::CompensatedSum::new();
    let mut k_lo = 0;
    for (k, &p) in pmf.iter().enumerate() {
        if below.value() > tau {
            break;
        }
        k_lo = k;
        below.add(p);
    }
    // upper tail P(B ≥ k + 1), summed downward
    let mut above = crate::numeric::CompensatedSum::new();
    let mut k_hi = b;
    for k in (0..=b).rev() {
        if above.value() > tau {
            break;
        }
        k_hi = k;
        above.add(pmf[k]);
    }
    let (k_lo, k_hi) = (k_lo.min(point), k_hi.max(point));
    if k_lo < 1 || k_hi > b - 1 {
        return None;
    }
    let coverage = pmf[k_lo..=k_hi]
        .iter()
        .copied()
        .collect::<crate::numeric::CompensatedSum>()
        .value();
    Some((k_lo, k_hi, coverage))
}
