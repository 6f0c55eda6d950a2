//! Univariate standard normal CDF, upper tail, density and quantile.
//!
//! The tail routines keep full relative precision far into the tail: the
//! squared argument inside the Gaussian exponent is carried as an exact
//! double-double product, so `x*x` rounding does not leak into the result.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `exp(-x*x/2)` with the square formed exactly.
#[inline]
fn exp_neg_half_sq(x: f64) -> f64 {
    let hi = x * x;
    let lo = x.mul_add(x, -hi);
    (-0.5 * hi).exp() * (1.0 - 0.5 * lo)
}

/// Standard normal density.
#[inline]
pub fn density(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp_neg_half_sq(x)
}

/// Upper tail `1 - Phi(x)` with relative precision across the whole range.
pub fn phi_upper(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 1.0 {
        return 0.5 * libm::erfc(x * FRAC_1_SQRT_2);
    }
    if x > 37.5 {
        // Mills-ratio expansion; the value is at or below the subnormal range here.
        let t = 1.0 / (x * x);
        return density(x) / x * (1.0 - t * (1.0 - 3.0 * t * (1.0 - 5.0 * t)));
    }
    // erfc(z) exp(z^2) is slowly varying, so rounding in z is harmless there;
    // the Gaussian factor is then evaluated on the exact square of x.
    let z = x * FRAC_1_SQRT_2;
    let z2 = z * z;
    let z2_lo = z.mul_add(z, -z2);
    let scaled = libm::erfc(z) * z2.exp() * (1.0 + z2_lo);
    0.5 * scaled * exp_neg_half_sq(x)
}

/// Standard normal CDF.
#[inline]
pub fn phi(x: f64) -> f64 {
    if x < 0.0 {
        phi_upper(-x)
    } else {
        1.0 - phi_upper(x)
    }
}

/// Two-sided tail probability `P(|Z| >= c) = 2 Phi(-c)`.
#[inline]
pub fn two_sided_tail(c: f64) -> f64 {
    2.0 * phi_upper(c)
}

/// Standard normal quantile.
pub fn phi_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    Ok(phi_inv_unchecked(p))
}

/// Quantile of the upper tail: the `x` with `1 - Phi(x) = q`. Precise for tiny `q`.
pub fn phi_inv_upper(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "normal upper quantile needs q in (0, 1), got {q}"
        )));
    }
    Ok(if q <= 0.5 {
        -lower_quantile(q)
    } else {
        lower_quantile(1.0 - q)
    })
}

pub(crate) fn phi_inv_unchecked(p: f64) -> f64 {
    if p <= 0.5 {
        lower_quantile(p)
    } else {
        // 1 - p is exact for p >= 0.5
        -lower_quantile(1.0 - p)
    }
}

/// Quantile for `p <= 0.5`: Acklam's rational start refined by two Halley steps.
fn lower_quantile(p: f64) -> f64 {
    let mut x = acklam(p);
    for _ in 0..2 {
        let err = phi(x) - p;
        let d = density(x);
        if d == 0.0 {
            break;
        }
        let u = err / d;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Acklam's rational approximation (relative error about 1.2e-9).
/// Cheap enough for the inner loop of the randomized estimator.
#[inline]
pub(crate) fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Lower tail `Phi(-x)` for `x >= 0` from Hart's rational approximation with
/// a single exponential (absolute error about 1e-15). Used where speed
/// matters more than relative precision deep in the tail.
#[inline]
pub(crate) fn fast_lower_tail(x: f64) -> f64 {
    if x > 37.0 {
        return 0.0;
    }
    let e = (-0.5 * x * x).exp();
    if x < 7.071_067_811_865_47 {
        let num = ((((((3.526_249_659_989_11e-2 * x + 0.700_383_064_443_688) * x
            + 6.373_962_203_531_65)
            * x
            + 33.912_866_078_383)
            * x
            + 112.079_291_497_871)
            * x
            + 221.213_596_169_931)
            * x
            + 220.206_867_912_376)
            * e;
        let den = ((((((8.838_834_764_831_84e-2 * x + 1.755_667_163_182_64) * x
            + 16.064_177_579_207)
            * x
            + 86.780_732_202_946_1)
            * x
            + 296.564_248_779_674)
            * x
            + 637.333_633_378_831)
            * x
            + 793.826_512_519_948)
            * x
            + 440.413_735_824_752;
        num / den
    } else {
        let b = x + 1.0 / (x + 2.0 / (x + 3.0 / (x + 4.0 / (x + 0.65))));
        e / b / 2.506_628_274_631
    }
}

/// `(Phi(a), Phi(b) - Phi(a))` for `a <= b`, with the difference taken
/// between upper tails when both points are above zero.
#[inline]
pub(crate) fn fast_interval(a: f64, b: f64) -> (f64, f64) {
    if a > 0.0 {
        let qa = fast_lower_tail(a);
        (1.0 - qa, qa - fast_lower_tail(b))
    } else if b < 0.0 {
        let pa = fast_lower_tail(-a);
        (pa, fast_lower_tail(-b) - pa)
    } else {
        // beyond 8.5 the tail is below half an ulp of 1 and cannot change the result
        let pa = if a < -8.5 { 0.0 } else { fast_lower_tail(-a) };
        let qb = if b > 8.5 { 0.0 } else { fast_lower_tail(b) };
        (pa, 1.0 - qb - pa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from 40-digit arithmetic.
    const UPPER: [(f64, f64); 12] = [
        (0.5, 0.308_537_538_725_986_896_4),
        (1.0, 0.158_655_253_931_457_051_4),
        (1.5, 0.066_807_201_268_858_066),
        (2.0, 0.022_750_131_948_179_207_2),
        (3.0, 0.001_349_898_031_630_094_527),
        (5.0, 2.866_515_718_791_939_117e-7),
        (5.38, 3.724_291_935_887_116_079e-8),
        (8.0, 6.220_960_574_271_784_124e-16),
        (10.0, 7.619_853_024_160_526_066e-24),
        (20.0, 2.753_624_118_606_233_695e-89),
        (30.0, 4.906_713_927_148_187_06e-198),
        (37.0, 5.725_571_222_524_576_823e-300),
    ];

    #[test]
    fn upper_tail_relative_precision() {
        for &(x, want) in &UPPER {
            let got = phi_upper(x);
            let rel = ((got - want) / want).abs();
            assert!(
                rel < 1e-15,
                "x={x}: got {got:e}, want {want:e}, rel {rel:e}"
            );
            let lower = phi(-x);
            assert!(((lower - want) / want).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_at_zero_is_half() {
        assert_eq!(phi(0.0), 0.5);
    }

    #[test]
    fn quantile_reference_values() {
        assert!((phi_inv(0.025).unwrap() - -1.959_963_984_540_054).abs() < 1e-14);
        let cases = [
            (1e-300, -37.047_096_299_361_199_24),
            (1e-20, -9.262_340_089_798_407_574),
            (3.715e-8, -5.380_449_694_944_836_593),
            (0.3, -0.524_400_512_708_040_784_04),
        ];
        for (p, want) in cases {
            let got = phi_inv(p).unwrap();
            assert!(
                ((got - want) / want).abs() < 1e-14,
                "p={p}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn quantile_round_trip_over_range() {
        let mut p = 1e-300_f64;
        while p < 0.5 {
            let x = phi_inv(p).unwrap();
            assert!((phi(x) - p).abs() < 1e-14);
            // relative condition number of Φ at x is about x², so allow x²·ulp
            let tol = 1e-14 + 4.0 * f64::EPSILON * x * x;
            assert!(((phi(x) - p) / p).abs() < tol, "p={p}");
            p *= 3.7;
        }
        let mut q = 0.5_f64;
        while q > 1e-16 {
            let p = 1.0 - q;
            let x = phi_inv(p).unwrap();
            assert!((phi(x) - p).abs() < 1e-14, "p={p}");
            q /= 2.9;
        }
    }

    #[test]
    fn quantile_rejects_domain() {
        assert!(phi_inv(0.0).is_err());
        assert!(phi_inv(1.0).is_err());
        assert!(phi_inv(f64::NAN).is_err());
        assert!(phi_inv_upper(-0.1).is_err());
    }

    #[test]
    fn bonferroni_cutoff_near_table_value() {
        let c = phi_inv_upper(7.43e-8 / 2.0).unwrap();
        assert!((c - 5.38).abs() < 0.005, "c = {c}");
        assert!((two_sided_tail(c) - 7.43e-8).abs() < 1e-14 * 7.43e-8 * 10.0);
    }

    #[test]
    fn density_far_tail() {
        let want = 1.076_976_004_254_327_636e-7;
        assert!(((density(5.5) - want) / want).abs() < 1e-15);
        let want = 1.473_646_134_878_547_519e-196;
        assert!(((density(30.0) - want) / want).abs() < 1e-15);
    }

    #[test]
    fn fast_tail_tracks_reference() {
        for i in 0..=3700 {
            let x = i as f64 * 0.01;
            let want = phi_upper(x);
            let got = fast_lower_tail(x);
            assert!((got - want).abs() < 2e-15, "{x}: {got} vs {want}");
            assert!((got - want).abs() <= 1e-8 * want, "{x}: {got} vs {want}");
        }
    }

    #[test]
    fn fast_interval_matches_differences() {
        for &(a, b) in &[
            (-3.0, 2.5),
            (0.5, 4.0),
            (-6.0, -1.0),
            (-0.0, 0.0),
            (2.0, 9.0),
        ] {
            let (lo, w) = fast_interval(a, b);
            assert!((lo - phi(a)).abs() < 2e-15);
            assert!((w - (phi(b) - phi(a))).abs() < 4e-15);
        }
    }
}
