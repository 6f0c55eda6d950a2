//! Synthetic correlation structures and data sets, and the experiment
//! harnesses built on them: the AR1 comparison of approximation orders
//! against the full joint probability, and null FWER calibration.

mod gwas;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fwer::{bonferroni, cutoff, sidak, solve_with_plan, GammaPlan};
use crate::glm_score::{
    correlation_band, detect_blocks, fit_null, score_statistics, BandedCorrelation, CorrelationMode,
};
use crate::mvn::{McEstimate, QmcBox, MAX_BOX_DIM};

pub use gwas::{block_layout, generate_gwas, SyntheticGwas};

/// Largest family for which the full joint probability is estimated.
pub const MAX_FULL_JOINT_DIM: usize = 1000;
/// QMC evaluations allowed in one full-joint solve.
pub const MAX_FULL_JOINT_EVALUATIONS: usize = 6;

/// Statistics with correlation `ρ^{|i−j|}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Spec {
    pub m: usize,
    pub rho: f64,
}

impl Ar1Spec {
    pub fn new(m: usize, rho: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "AR1 structure needs at least one marker".into(),
            ));
        }
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must lie in (-1, 1), got {rho}"
            )));
        }
        Ok(Ar1Spec { m, rho })
    }

    /// Dense correlation matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| self.rho.powi(i.abs_diff(j) as i32))
    }
}

/// Exact band of an AR1 structure, as one block.
pub fn ar1_band(spec: &Ar1Spec, bandwidth: usize) -> Result<BandedCorrelation> {
    if bandwidth > spec.m {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} exceeds the {} markers",
            spec.m
        )));
    }
    BandedCorrelation::from_fn(spec.m, bandwidth, |_, d| spec.rho.powi(d as i32))
}

/// Seed of task `index` derived from a master seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.random()
}

/// Local level solving `1 − P(all |T_j| < c) = α` for the full joint law.
#[derive(Debug, Clone, PartialEq)]
pub struct FullJointEstimate {
    pub alpha_loc: f64,
    /// Delta-method standard error of `alpha_loc`.
    pub std_error: f64,
    /// Estimate of `P(all |T_j| < c)` at the last evaluated point.
    pub last: McEstimate,
    pub evaluations: usize,
}

/// `ln(−ln P)` and its standard error.
fn log_neg_log(est: McEstimate) -> Result<(f64, f64)> {
    let p = est.estimate;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "joint probability estimate {p} leaves no room for a root"
        )));
    }
    let nl = -p.ln();
    Ok((nl.ln(), est.std_error / (p * nl)))
}

/// Solve for the full-joint local level on the fixed points of `qmc`.
///
/// Works in `g(a) = ln(−ln P(c(a)))` against `ln a`, which is close to linear.
/// The first step is Newton from `start` with the supplied `slope`; later steps
/// are secants. Every evaluation reuses the same points, so `g` is smooth in
/// `a` and the secants are not disturbed by sampling noise. Iteration stops
/// once the step is a tenth of the standard error.
pub fn solve_full_joint(
    qmc: &QmcBox,
    alpha: f64,
    start: f64,
    slope: f64,
) -> Result<FullJointEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "slope must be positive, got {slope}"
        )));
    }
    let m = qmc.dim();
    let (lo, hi) = (bonferroni(m, alpha).ln(), alpha.ln());
    let target = (-(-alpha).ln_1p()).ln();
    let eval = |la: f64| -> Result<(f64, f64, McEstimate)> {
        let est = qmc.estimate(cutoff(la.exp())?);
        let (g, se) = log_neg_log(est)?;
        Ok((g, se, est))
    };
    let mut la = start.ln().clamp(lo, hi);
    let (mut g, mut se_g, mut est) = eval(la)?;
    let mut evaluations = 1;
    let mut s = slope;
    loop {
        let step = (target - g) / s;
        let tol = (0.1 * se_g / s).max(1e-10);
        if step.abs() <= tol || evaluations >= MAX_FULL_JOINT_EVALUATIONS {
            la = (la + step).clamp(lo, hi);
            break;
        }
        let next = (la + step).clamp(lo, hi);
        let (g_next, se_next, est_next) = eval(next)?;
        evaluations += 1;
        if (next - la).abs() > 1e-12 {
            let secant = (g_next - g) / (next - la);
            if secant > 0.0 && secant.is_finite() {
                s = secant;
            }
        }
        (la, g, se_g, est) = (next, g_next, se_next, est_next);
    }
    let alpha_loc = la.exp();
    Ok(FullJointEstimate {
        alpha_loc,
        std_error: alpha_loc * se_g / s,
        last: est,
        evaluations,
    })
}

/// Slope of `ln(−ln γ_k)` in `ln α_loc` at `alpha_loc`.
pub fn plan_slope(plan: &GammaPlan, alpha_loc: f64) -> Result<f64> {
    const H: f64 = 0.01;
    let g = |a: f64| -> Result<f64> { Ok((-plan.log_gamma(a)?).ln()) };
    Ok((g(alpha_loc * H.exp())? - g(alpha_loc)?) / H)
}

/// One grid point of the AR1 experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Row {
    pub rho: f64,
    pub bonferroni: f64,
    pub sidak: f64,
    /// `(k, α_loc)` for each requested order.
    pub orders: Vec<(usize, f64)>,
    pub full_joint: Option<FullJointEstimate>,
}

/// Local levels across a grid of AR1 parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Experiment {
    pub m: usize,
    pub alpha: f64,
    pub orders: Vec<usize>,
    pub mc_samples: usize,
    pub seed: u64,
    pub rows: Vec<Ar1Row>,
}

/// α_loc for Bonferroni, Šidák, each order and, when `mc_samples > 0`, the
/// full joint law, at every `ρ` in `rho_grid`.
pub fn run_ar1_experiment(
    rho_grid: &[f64],
    m: usize,
    alpha: f64,
    orders: &[usize],
    mc_samples: usize,
    seed: u64,
) -> Result<Ar1Experiment> {
    let mut orders = orders.to_vec();
    orders.sort_unstable();
    orders.dedup();
    if let Some(&k) = orders.iter().find(|&&k| k == 0 || k > MAX_BOX_DIM) {
        return Err(Error::DimensionOutOfRange(k));
    }
    if mc_samples > 0 && m > MAX_FULL_JOINT_DIM {
        return Err(Error::InvalidArgument(format!(
            "the full joint estimate is limited to m <= {MAX_FULL_JOINT_DIM}, got {m}"
        )));
    }
    let bandwidth = orders.last().copied().unwrap_or(1);
    let specs = rho_grid
        .iter()
        .map(|&rho| Ar1Spec::new(m, rho))
        .collect::<Result<Vec<_>>>()?;
    let rows = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            ar1_row(
                spec,
                alpha,
                &orders,
                bandwidth,
                mc_samples,
                derive_seed(seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ar1Experiment {
        m,
        alpha,
        orders,
        mc_samples,
        seed,
        rows,
    })
}

fn ar1_row(
    spec: &Ar1Spec,
    alpha: f64,
    orders: &[usize],
    bandwidth: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Ar1Row> {
    let band = ar1_band(spec, bandwidth)?;
    let mut solved = Vec::with_capacity(orders.len());
    let mut top: Option<(GammaPlan, f64)> = None;
    for &k in orders {
        let plan = GammaPlan::new(&band, k)?;
        let a = solve_with_plan(&plan, alpha)?.alpha_loc;
        solved.push((k, a));
        top = Some((plan, a));
    }
    let full_joint = if mc_samples > 0 {
        let (start, slope) = match &top {
            Some((plan, a)) => (*a, plan_slope(plan, *a)?),
            None => (sidak(spec.m, alpha), 1.0),
        };
        let qmc = QmcBox::new(&spec.matrix(), mc_samples, seed)?;
        Some(solve_full_joint(&qmc, alpha, start, slope)?)
    } else {
        None
    };
    Ok(Ar1Row {
        rho: spec.rho,
        bonferroni: bonferroni(spec.m, alpha),
        sidak: sidak(spec.m, alpha),
        orders: solved,
        full_joint,
    })
}

impl Ar1Experiment {
    /// Plot-ready TSV with a header recording the settings.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# ar1 m={} alpha={} mc_samples={} seed={}",
            self.m, self.alpha, self.mc_samples, self.seed
        );
        out.push_str("#rho\tbonferroni\tsidak");
        for k in &self.orders {
            let _ = write!(out, "\torder{k}");
        }
        out.push_str("\tfull_joint\tfull_joint_se\n");
        for r in &self.rows {
            let _ = write!(out, "{}\t{:.6e}\t{:.6e}", r.rho, r.bonferroni, r.sidak);
            for (_, a) in &r.orders {
                let _ = write!(out, "\t{a:.6e}");
            }
            match &r.full_joint {
                Some(f) => {
                    let _ = writeln!(out, "\t{:.6e}\t{:.3e}", f.alpha_loc, f.std_error);
                }
                None => out.push_str("\tNA\tNA\n"),
            }
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Settings of a null calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSpec {
    /// Template data set; replicate `r` uses the seed derived from its seed and `r`.
    pub gwas: SyntheticGwas,
    pub replicates: usize,
    pub alpha: f64,
    pub order: usize,
    pub bandwidth: usize,
    /// Cut threshold passed to block detection.
    pub block_threshold: f64,
    pub mode: CorrelationMode,
}

/// Share of null data sets with at least one rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub replicates: usize,
    pub rejections: usize,
    pub fwer: f64,
    /// Binomial standard error at the nominal `α`.
    pub std_error: f64,
    pub mean_alpha_loc: f64,
}

/// Analyze `replicates` generated null data sets with the order-`k` rule.
pub fn null_calibration(spec: &CalibrationSpec) -> Result<CalibrationResult> {
    if !spec.gwas.effects.is_empty() {
        return Err(Error::InvalidArgument(
            "null calibration needs zero marker effects".into(),
        ));
    }
    if spec.replicates == 0 {
        return Err(Error::InvalidArgument(
            "at least one replicate is needed".into(),
        ));
    }
    let outcomes = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let gwas = SyntheticGwas {
                seed: derive_seed(spec.gwas.seed, r as u64),
                ..spec.gwas.clone()
            };
            let ds = generate_gwas(&gwas)?;
            let fit = fit_null(&ds, gwas.family)?;
            let stats = score_statistics(&ds, &fit)?;
            let band = correlation_band(&ds, &fit, spec.bandwidth, spec.mode)?;
            let band = detect_blocks(&band, ds.positions(), spec.block_threshold)?;
            let a = solve_with_plan(&GammaPlan::new(&band, spec.order)?, spec.alpha)?.alpha_loc;
            let reject = stats.p_unadjusted.iter().any(|&p| p <= a);
            Ok((reject, a))
        })
        .collect::<Result<Vec<_>>>()?;
    let rejections = outcomes.iter().filter(|(r, _)| *r).count();
    let n = spec.replicates as f64;
    Ok(CalibrationResult {
        replicates: spec.replicates,
        rejections,
        fwer: rejections as f64 / n,
        std_error: (spec.alpha * (1.0 - spec.alpha) / n).sqrt(),
        mean_alpha_loc: outcomes.iter().map(|(_, a)| a).sum::<f64>() / n,
    })
}
