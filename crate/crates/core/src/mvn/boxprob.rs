//! Central box probabilities `P(|Z_i| < c for all i)` for small dimensions.
//!
//! Everything here is computed through the exceedance probability
//! `Q = 1 - P(box)`, which is a sum of nonnegative terms. For the cutoffs used
//! in genome-wide testing `Q` is of order 1e-7, and carrying it directly keeps
//! full relative precision where `1 - P` would cancel.
//!
//! Dimension three and up use sequential conditioning on a Cholesky factor
//! `Z = L W`: with prefix sums `s_j = sum_{i<j} L_ji w_i`,
//!
//! ```text
//! E_j(s) = P(Z_j outside | s_j) + ∫_{inside_j} φ(w) E_{j+1}(s + L[.., j] w) dw
//! ```
//!
//! and `Q = E_1(0)`. Each level is a fixed Gauss–Legendre rule applied on
//! pieces split where the next coordinate's conditional mean crosses `±c`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::normal::{density, phi, two_sided_tail};
use super::quad::{integrate_pieces, FixedRule, Tolerance};
use crate::error::{Error, Result};

/// Largest dimension handled by deterministic quadrature.
pub const MAX_BOX_DIM: usize = 6;

/// Eigenvalues below this are treated as a genuinely indefinite matrix.
pub const PSD_TOLERANCE: f64 = 1e-8;

const BOX2_TOL: Tolerance = Tolerance::new(1e-300, 1e-12, 200);
/// Gauss–Legendre points per piece and conditional level.
const LOW_DIM_POINTS: usize = 64;
const HIGH_DIM_POINTS: usize = 32;
/// Rule for the short pieces that bracket a sharp inside/outside switch.
const NARROW_POINTS: usize = 16;
const NARROW_WIDTH: f64 = 1.0;
/// Up to five breakpoints per edge, two edges, five later coordinates.
const MAX_BREAKS: usize = 50;

/// Standard normal mass beyond this is below 1e-32 and is dropped from the integration range.
const W_LIMIT: f64 = 12.0;

/// Pivots at or below this are taken as exact linear dependence.
const PIVOT_ZERO: f64 = 1e-14;

/// A central box problem: `k` standard normals with unit-diagonal correlation and half-width `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxProblem {
    dim: usize,
    correlation: [[f64; MAX_BOX_DIM]; MAX_BOX_DIM],
    half_width: f64,
}

impl BoxProblem {
    pub fn new(correlation: &DMatrix<f64>, half_width: f64) -> Result<Self> {
        let dim = correlation.nrows();
        if dim != correlation.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix is {}x{}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        if dim == 0 || dim > MAX_BOX_DIM {
            return Err(Error::DimensionOutOfRange(dim));
        }
        if !(half_width > 0.0) || half_width.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "box half-width must be positive, got {half_width}"
            )));
        }
        let mut r = [[0.0; MAX_BOX_DIM]; MAX_BOX_DIM];
        for i in 0..dim {
            if correlation[(i, i)] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "correlation diagonal entry {i} is {}, expected 1",
                    correlation[(i, i)]
                )));
            }
            for j in 0..dim {
                let v = correlation[(i, j)];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "correlation entry ({i},{j}) = {v} outside [-1, 1]"
                    )));
                }
                if (v - correlation[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "correlation matrix not symmetric at ({i},{j})"
                    )));
                }
                r[i][j] = v;
            }
        }
        Ok(BoxProblem {
            dim,
            correlation: r,
            half_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// `1 - P(box)`, to full relative precision.
    pub fn exceedance(&self) -> Result<f64> {
        let c = self.half_width;
        match self.dim {
            1 => Ok(two_sided_tail(c)),
            2 => Ok(box2_exceedance(self.correlation[0][1], c)),
            _ => {
                let eig = SymmetricEigen::new(self.to_matrix());
                let min = eig
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if min < -PSD_TOLERANCE {
                    return Err(Error::NotPositiveSemidefinite { pivot: min });
                }
                let chol = SemiCholesky::new(&self.correlation, self.dim);
                Ok(chol.exceedance(c))
            }
        }
    }

    /// `P(|Z_i| < c for all i)`.
    pub fn probability(&self) -> Result<f64> {
        Ok(1.0 - self.exceedance()?)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.correlation[i][j])
    }
}

/// `P(|Z_i| < c for all i)` for the given problem.
pub fn box_k(problem: &BoxProblem) -> Result<f64> {
    problem.probability()
}

/// `P(|Z_1| < c, |Z_2| < c)` for a standard bivariate normal with correlation `r`.
pub fn box2(r: f64, c: f64) -> f64 {
    1.0 - box2_exceedance(r, c)
}

/// `1 - box2(r, c)`, computed as
/// `2Φ(-c) + sqrt(2/π) ∫_{-c}^{c} e^{-x²/2} Φ((r x - c)/sqrt(1 - r²)) dx`.
pub fn box2_exceedance(r: f64, c: f64) -> f64 {
    let alpha = two_sided_tail(c);
    if r.abs() >= 1.0 {
        return alpha;
    }
    let s = ((1.0 - r) * (1.0 + r)).sqrt();
    // density(x) = e^{-x²/2}/sqrt(2π), so 2·density = sqrt(2/π)·e^{-x²/2}
    let inner = integrate_pieces(
        |x| density(x) * phi((r * x - c) / s),
        -c,
        c,
        &[0.0],
        BOX2_TOL,
    );
    alpha + 2.0 * inner
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Plain `1 - Phi(x)`. Inside the quadrature the arguments already carry
/// rounding error, so the exact-square refinements of `phi_upper` buy nothing.
#[inline]
fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Cholesky factor of a positive semi-definite matrix; dependent columns get a zero pivot.
#[derive(Debug, Clone)]
struct SemiCholesky {
    dim: usize,
    l: [[f64; MAX_BOX_DIM]; MAX_BOX_DIM],
    /// `spread[j][i]`: conditional sd of coordinate `i` given `w_0..=w_j`.
    spread: [[f64; MAX_BOX_DIM]; MAX_BOX_DIM],
}

impl SemiCholesky {
    fn new(r: &[[f64; MAX_BOX_DIM]; MAX_BOX_DIM], dim: usize) -> Self {
        let mut l = [[0.0; MAX_BOX_DIM]; MAX_BOX_DIM];
        for j in 0..dim {
            let mut d = r[j][j];
            for p in 0..j {
                d -= l[j][p] * l[j][p];
            }
            if d <= PIVOT_ZERO {
                // column j is (numerically) a combination of earlier ones
                continue;
            }
            let ljj = d.sqrt();
            l[j][j] = ljj;
            for i in j + 1..dim {
                let mut v = r[i][j];
                for p in 0..j {
                    v -= l[i][p] * l[j][p];
                }
                l[i][j] = v / ljj;
            }
        }
        let mut spread = [[0.0; MAX_BOX_DIM]; MAX_BOX_DIM];
        for j in 0..dim {
            for i in j + 1..dim {
                spread[j][i] = (j + 1..=i).map(|p| l[i][p] * l[i][p]).sum::<f64>().sqrt();
            }
        }
        SemiCholesky { dim, l, spread }
    }

    fn exceedance(&self, c: f64) -> f64 {
        let points = if self.dim <= 4 {
            LOW_DIM_POINTS
        } else {
            HIGH_DIM_POINTS
        };
        self.exceedance_with(c, points)
    }

    fn exceedance_with(&self, c: f64, points: usize) -> f64 {
        self.level(0, &[0.0; MAX_BOX_DIM], c, FixedRule::get(points))
    }

    /// Probability that some coordinate `>= j` leaves the box, given prefix sums `s`.
    /// Sorted breakpoints in `(a, b)` for the level-`j` integrand. Every later
    /// coordinate switches from inside to outside the box where its conditional
    /// mean crosses `±c`; when that switch is sharp (width `δ` below one) the
    /// interval is also split at `±2δ` and `±6δ` around the crossing.
    fn breakpoints(
        &self,
        j: usize,
        s: &[f64; MAX_BOX_DIM],
        c: f64,
        a: f64,
        b: f64,
        out: &mut [f64; MAX_BREAKS],
    ) -> usize {
        let mut n = 0;
        let mut push = |w: f64, n: &mut usize| {
            if w > a && w < b {
                out[*n] = w;
                *n += 1;
            }
        };
        for i in j + 1..self.dim {
            let slope = self.l[i][j];
            if slope == 0.0 {
                continue;
            }
            let width = self.spread[j][i] / slope.abs();
            for edge in [-c, c] {
                let x0 = (edge - s[i]) / slope;
                if i == j + 1 {
                    push(x0, &mut n);
                }
                if width < 1.0 && x0 > a - 6.0 * width && x0 < b + 6.0 * width {
                    if i != j + 1 {
                        push(x0, &mut n);
                    }
                    for k in [-6.0, -2.0, 2.0, 6.0] {
                        push(x0 + k * width, &mut n);
                    }
                }
            }
        }
        let pts = &mut out[..n];
        pts.sort_unstable_by(f64::total_cmp);
        // drop near-duplicates so no piece is degenerate
        let mut kept = 0;
        for idx in 0..n {
            let w = pts[idx];
            let prev = if kept == 0 { a } else { pts[kept - 1] };
            if w - prev > 1e-12 * (1.0 + w.abs()) {
                pts[kept] = w;
                kept += 1;
            }
        }
        if kept > 0 && b - pts[kept - 1] <= 1e-12 * (1.0 + b.abs()) {
            kept -= 1;
        }
        kept
    }

    fn level(&self, j: usize, s: &[f64; MAX_BOX_DIM], c: f64, rule: &FixedRule) -> f64 {
        let last = j + 1 == self.dim;
        let ljj = self.l[j][j];
        if ljj == 0.0 {
            if s[j].abs() >= c {
                return 1.0;
            }
            return if last {
                0.0
            } else {
                self.level(j + 1, s, c, rule)
            };
        }
        let lo = (-c - s[j]) / ljj;
        let hi = (c - s[j]) / ljj;
        let outside = upper_tail(-lo) + upper_tail(hi);
        if last {
            return outside;
        }
        let a = lo.max(-W_LIMIT);
        let b = hi.min(W_LIMIT);
        if a >= b {
            return outside;
        }
        let next = j + 1;
        let mut breaks = [0.0; MAX_BREAKS];
        let nb = self.breakpoints(j, s, c, a, b, &mut breaks);
        let narrow = FixedRule::get(NARROW_POINTS);
        let mut inside = 0.0;
        let mut lo = a;
        for &hi in breaks[..nb].iter().chain(std::iter::once(&b)) {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            let piece_rule = if hi - lo < NARROW_WIDTH { narrow } else { rule };
            let mut piece = 0.0;
            for (x, wt) in piece_rule.nodes.iter().zip(&piece_rule.weights) {
                let w = mid + half * x;
                let mut shifted = *s;
                for i in next..self.dim {
                    shifted[i] += self.l[i][j] * w;
                }
                piece += wt * (-0.5 * w * w).exp() * self.level(next, &shifted, c, rule);
            }
            inside += half * FRAC_1_SQRT_2PI * piece;
            lo = hi;
        }
        outside + inside
    }
}

/// Nearest-in-spirit PSD correction of a correlation window: if the smallest
/// eigenvalue is below `-PSD_TOLERANCE`, eigenvalues are clipped at 1e-10 and
/// the diagonal is rescaled back to one. Returns whether a repair happened.
pub fn repair_correlation(matrix: &mut DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(matrix.clone());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min >= -PSD_TOLERANCE {
        return false;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(1e-10));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let n = rebuilt.nrows();
    let scale: Vec<f64> = (0..n).map(|i| rebuilt[(i, i)].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] = if i == j {
                1.0
            } else {
                (rebuilt[(i, j)] / (scale[i] * scale[j])).clamp(-1.0, 1.0)
            };
        }
    }
    // symmetrize exactly
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    true
}

/// Exceedance via the general recursion, bypassing the bivariate special case.
#[cfg(test)]
pub(crate) fn recursive_exceedance(problem: &BoxProblem) -> f64 {
    SemiCholesky::new(&problem.correlation, problem.dim).exceedance(problem.half_width)
}

/// Exceedance on a fixed grid of the given size, for convergence studies.
#[cfg(test)]
pub(crate) fn exceedance_with_points(problem: &BoxProblem, points: usize) -> f64 {
    SemiCholesky::new(&problem.correlation, problem.dim).exceedance_with(problem.half_width, points)
}
