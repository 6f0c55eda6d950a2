//! Product-type FWER approximations of order `k` and the local significance
//! level that keeps the approximate FWER at `α`.
//!
//! With `O_j = {|T_j| < c}`, the order-`k` approximation of
//! `P(O_1 ∩ … ∩ O_m)` within one block is
//!
//! ```text
//! γ_k = Π_{j≥k} P(O_{j−k+1} ∩ … ∩ O_j) / Π_{j>k} P(O_{j−k+1} ∩ … ∩ O_{j−1})
//! ```
//!
//! and blocks multiply. Everything is carried as `ln γ_k`.

mod report;

use std::collections::HashMap;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glm_score::BandedCorrelation;
use crate::mvn::{phi_inv_upper, repair_correlation, BoxProblem, MAX_BOX_DIM};
use crate::numeric::CompensatedSum;

pub use report::{write_adjusted, write_report, Method, ReportRow};

/// Bisection stops when `(hi − lo)/lo` falls below this.
pub const SOLVER_REL_WIDTH: f64 = 1e-10;
pub const SOLVER_MAX_ITERATIONS: usize = 200;

/// Slack allowed in the monotonicity check, relative to `|ln γ|`.
const MONOTONE_SLACK: f64 = 1e-9;

/// Unique p-values evaluated per worker thread and round in `adjust_pvalues`.
const ADJUST_ROUND_PER_THREAD: usize = 4;

/// Outcome of solving `1 − γ_k(α_loc) = α`.
#[derive(Debug, Clone, PartialEq)]
pub struct FwerResult {
    pub alpha: f64,
    pub order: usize,
    pub alpha_loc: f64,
    /// `−Φ⁻¹(α_loc/2)`.
    pub c: f64,
    pub m_eff: f64,
    pub solver_iterations: usize,
    /// Width of the final bracket.
    pub bracket: f64,
}

/// FWER-adjusted p-values, in marker order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedPValues {
    pub order: usize,
    pub values: Vec<f64>,
}

/// `α/m`.
pub fn bonferroni(m: usize, alpha: f64) -> f64 {
    alpha / m as f64
}

/// `1 − (1 − α)^{1/m}`.
pub fn sidak(m: usize, alpha: f64) -> f64 {
    -((-alpha).ln_1p() / m as f64).exp_m1()
}

/// Effective number of independent tests `ln(1 − α)/ln(1 − α_loc)`.
pub fn m_eff(alpha: f64, alpha_loc: f64) -> f64 {
    (-alpha).ln_1p() / (-alpha_loc).ln_1p()
}

/// Two-sided cutoff `c` with `2Φ(−c) = α_loc`.
pub fn cutoff(alpha_loc: f64) -> Result<f64> {
    phi_inv_upper(0.5 * alpha_loc)
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

/// `ln P(box)` for every window shape the band needs, with windows shared
/// across identical shapes, and the fixed-order recipe that combines them.
#[derive(Debug, Clone)]
pub struct GammaPlan {
    order: usize,
    m: usize,
    /// Distinct window matrices of dimension ≥ 2.
    shapes: Vec<DMatrix<f64>>,
    blocks: Vec<Vec<Term>>,
    repaired: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Window {
    Single,
    Shape(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    window: Window,
    sign: f64,
}

impl GammaPlan {
    pub fn new(band: &BandedCorrelation, order: usize) -> Result<Self> {
        if order == 0 || order > MAX_BOX_DIM {
            return Err(Error::DimensionOutOfRange(order));
        }
        if order > band.bandwidth() {
            return Err(Error::OrderExceedsBandwidth {
                order,
                bandwidth: band.bandwidth(),
            });
        }
        if band.m() == 0 {
            return Err(Error::InvalidArgument("no markers".into()));
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut shapes = Vec::new();
        let mut repaired = 0;
        let mut window = |start: usize, size: usize| -> Result<Window> {
            if size == 1 {
                return Ok(Window::Single);
            }
            let w = band.window(start, size)?;
            let mut key = Vec::with_capacity(1 + size * (size - 1) / 2);
            key.push(size as u64);
            for a in 0..size {
                for b in a + 1..size {
                    key.push(w[(a, b)].to_bits());
                }
            }
            if let Some(&i) = index.get(&key) {
                return Ok(Window::Shape(i));
            }
            let mut w = w;
            if repair_correlation(&mut w) {
                repaired += 1;
            }
            shapes.push(w);
            index.insert(key, shapes.len() - 1);
            Ok(Window::Shape(shapes.len() - 1))
        };
        let mut blocks = Vec::new();
        for (start, end) in band.blocks() {
            let k = order.min(end - start);
            let mut terms = Vec::new();
            for j in start + k - 1..end {
                let first = j + 1 - k;
                terms.push(Term {
                    window: window(first, k)?,
                    sign: 1.0,
                });
                if k > 1 && j > start + k - 1 {
                    terms.push(Term {
                        window: window(first, k - 1)?,
                        sign: -1.0,
                    });
                }
            }
            blocks.push(terms);
        }
        if repaired > 0 {
            warn!(
                "{repaired} correlation windows were not positive semi-definite and were repaired"
            );
        }
        Ok(GammaPlan {
            order,
            m: band.m(),
            shapes,
            blocks,
            repaired,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of distinct windows of dimension ≥ 2.
    pub fn distinct_windows(&self) -> usize {
        self.shapes.len()
    }

    /// Windows that needed the PSD repair.
    pub fn repaired_windows(&self) -> usize {
        self.repaired
    }

    /// `ln γ_k` per block at local level `alpha_loc`.
    pub fn block_log_gammas(&self, alpha_loc: f64) -> Result<Vec<f64>> {
        check_level("alpha_loc", alpha_loc)?;
        let c = cutoff(alpha_loc)?;
        let log_p: Vec<f64> = self
            .shapes
            .par_iter()
            .map(|w| Ok((-BoxProblem::new(w, c)?.exceedance()?).ln_1p()))
            .collect::<Result<_>>()?;
        let single = (-alpha_loc).ln_1p();
        Ok(self
            .blocks
            .iter()
            .map(|terms| {
                let mut acc = CompensatedSum::new();
                for t in terms {
                    let v = match t.window {
                        Window::Single => single,
                        Window::Shape(i) => log_p[i],
                    };
                    acc.add(t.sign * v);
                }
                acc.value()
            })
            .collect())
    }

    /// `ln γ_k`, the fixed-order compensated sum of the block values.
    pub fn log_gamma(&self, alpha_loc: f64) -> Result<f64> {
        let blocks = self.block_log_gammas(alpha_loc)?;
        let mut acc = CompensatedSum::new();
        for b in blocks {
            acc.add(b);
        }
        Ok(acc.value())
    }

    /// Approximate FWER `1 − γ_k`.
    pub fn fwer(&self, alpha_loc: f64) -> Result<f64> {
        Ok(-self.log_gamma(alpha_loc)?.exp_m1())
    }
}

/// `ln γ_k` of the band at local level `alpha_loc`.
pub fn log_gamma_k(band: &BandedCorrelation, alpha_loc: f64, order: usize) -> Result<f64> {
    GammaPlan::new(band, order)?.log_gamma(alpha_loc)
}

/// `ln γ_k` of each block separately.
pub fn block_log_gammas(
    band: &BandedCorrelation,
    alpha_loc: f64,
    order: usize,
) -> Result<Vec<f64>> {
    GammaPlan::new(band, order)?.block_log_gammas(alpha_loc)
}

/// Evaluated points, checked for `ln γ` non-increasing in `α_loc`.
struct MonotoneLog(Vec<(f64, f64)>);

impl MonotoneLog {
    fn record(&mut self, a: f64, lg: f64) -> Result<()> {
        for &(b, lb) in &self.0 {
            let slack = MONOTONE_SLACK * lg.abs().max(lb.abs()) + 1e-300;
            let bad = (a < b && lg < lb - slack) || (a > b && lg > lb + slack);
            if bad {
                return Err(Error::NonMonotoneGamma { alpha_loc: a });
            }
        }
        self.0.push((a, lg));
        Ok(())
    }
}

/// Solve `1 − γ_k(α_loc) = α` on the bracket `[α/m, α]`, returning the lower
/// end of the final bracket. Steps are taken in `ln α_loc`: false position on
/// `ln(−ln γ_k)` with the Illinois modification, falling back to bisection
/// whenever two steps in a row fail to halve the bracket.
pub fn solve_alpha_loc(band: &BandedCorrelation, alpha: f64, order: usize) -> Result<FwerResult> {
    solve_with_plan(&GammaPlan::new(band, order)?, alpha)
}

/// [`solve_alpha_loc`] with a prepared plan.
pub fn solve_with_plan(plan: &GammaPlan, alpha: f64) -> Result<FwerResult> {
    check_level("alpha", alpha)?;
    let target = (-(-alpha).ln_1p()).ln();
    let mut seen = MonotoneLog(Vec::new());
    // (1 − γ_k − α, ln(−ln γ_k) − ln(−ln(1 − α))): the first decides the side, the second interpolates
    let mut eval = |a: f64| -> Result<(f64, f64)> {
        let lg = plan.log_gamma(a)?;
        seen.record(a, lg)?;
        Ok((-lg.exp_m1() - alpha, (-lg).ln() - target))
    };
    let mut lo = bonferroni(plan.m(), alpha);
    let mut hi = alpha;
    let (f_lo, mut g_lo) = eval(lo)?;
    if f_lo > 0.0 {
        return Err(Error::RootNotBracketed {
            fwer_at_lower: f_lo + alpha,
        });
    }
    let mut iterations = 0;
    let upper = if hi > lo { Some(eval(hi)?) } else { None };
    match upper {
        Some((f_hi, mut g_hi)) if f_hi > 0.0 => {
            let (mut x_lo, mut x_hi) = (lo.ln(), hi.ln());
            let mut last_side = 0i8;
            let mut slow = 0;
            while (hi - lo) / lo >= SOLVER_REL_WIDTH && iterations < SOLVER_MAX_ITERATIONS {
                iterations += 1;
                let width = x_hi - x_lo;
                let interpolate = slow < 2 && g_lo <= 0.0 && g_hi >= 0.0 && g_hi > g_lo;
                let mut x = if interpolate {
                    x_lo - g_lo * width / (g_hi - g_lo)
                } else {
                    slow = 0;
                    0.5 * (x_lo + x_hi)
                };
                let mut a = x.exp();
                if !(a > lo && a < hi) {
                    a = (lo * hi).sqrt();
                    x = a.ln();
                    if !(a > lo && a < hi) {
                        break;
                    }
                }
                let (f, g) = eval(a)?;
                if f > 0.0 {
                    (hi, x_hi, g_hi) = (a, x, g);
                    if last_side == 1 {
                        g_lo *= 0.5;
                    }
                    last_side = 1;
                } else {
                    (lo, x_lo, g_lo) = (a, x, g);
                    if last_side == -1 {
                        g_hi *= 0.5;
                    }
                    last_side = -1;
                }
                if x_hi - x_lo > 0.5 * width {
                    slow += 1;
                } else {
                    slow = 0;
                }
            }
        }
        _ => {
            // 1 − γ_k never exceeds α on the bracket: α itself is admissible
            lo = hi;
        }
    }
    Ok(FwerResult {
        alpha,
        order: plan.order(),
        alpha_loc: lo,
        c: cutoff(lo)?,
        m_eff: m_eff(alpha, lo),
        solver_iterations: iterations,
        bracket: hi - lo,
    })
}

/// `1 − γ_k` evaluated at `α_loc = p_j` for every marker, clamped to `[p_j, 1]`
/// and made monotone in `p_j`.
pub fn adjust_pvalues(
    band: &BandedCorrelation,
    p_unadjusted: &[f64],
    order: usize,
) -> Result<AdjustedPValues> {
    adjust_with_plan(&GammaPlan::new(band, order)?, p_unadjusted)
}

/// [`adjust_pvalues`] with a prepared plan.
pub fn adjust_with_plan(plan: &GammaPlan, p_unadjusted: &[f64]) -> Result<AdjustedPValues> {
    if let Some(p) = p_unadjusted.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "p-value {p} outside (0, 1]"
        )));
    }
    let mut distinct: Vec<f64> = p_unadjusted.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let mut adjusted: Vec<f64> = Vec::with_capacity(distinct.len());
    let mut running = 0.0f64;
    let mut saturated = false;
    let round_size = ADJUST_ROUND_PER_THREAD * rayon::current_num_threads();
    for round in distinct.chunks(round_size) {
        if saturated {
            adjusted.extend(std::iter::repeat(1.0).take(round.len()));
            continue;
        }
        // γ_k is non-increasing in α_loc, so once 1 − γ_k rounds to 1 every larger p maps to 1
        let values: Vec<f64> = round
            .par_iter()
            .map(|&p| if p >= 1.0 { Ok(1.0) } else { plan.fwer(p) })
            .collect::<Result<_>>()?;
        for (&p, v) in round.iter().zip(values) {
            running = running.max(v.clamp(p, 1.0));
            adjusted.push(running);
        }
        saturated = running >= 1.0;
    }
    let values = p_unadjusted
        .iter()
        .map(|p| {
            let i = distinct.partition_point(|q| q < p);
            adjusted[i]
        })
        .collect();
    Ok(AdjustedPValues {
        order: plan.order(),
        values,
    })
}

#[cfg(test)]
mod tests;
