//! One-dimensional quadrature: fixed Gauss–Legendre rules and a globally
//! adaptive 7/15-point Gauss–Kronrod integrator (QUADPACK `qag` style).

use std::sync::OnceLock;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64, max_panels: usize) -> Self {
        Tolerance {
            abs,
            rel,
            max_panels,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = kronrod * half;
    let resasc = resasc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let resabs_floor = 50.0 * f64::EPSILON * value.abs();
    Panel {
        a,
        b,
        value,
        error: error.max(resabs_floor),
    }
}

/// Integrate `f` over `[a, b]`, splitting the worst panel until the summed error
/// estimate meets `max(tol.abs, tol.rel * |I|)` or the panel budget runs out.
pub(crate) fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> f64 {
    if a == b {
        return 0.0;
    }
    let first = gk15(&mut f, a, b);
    let mut panels = vec![first];
    let mut total = first.value;
    let mut error = first.error;
    while error > tol.abs.max(tol.rel * total.abs()) && panels.len() < tol.max_panels {
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
                if p.error > acc.1 {
                    (i, p.error)
                } else {
                    acc
                }
            });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            panels.push(p);
            break;
        }
        let left = gk15(&mut f, p.a, mid);
        let right = gk15(&mut f, mid, p.b);
        panels.push(left);
        panels.push(right);
        // Resumming keeps the total free of drift from repeated add/subtract.
        total = panels.iter().map(|p| p.value).sum();
        error = panels.iter().map(|p| p.error).sum();
    }
    total
}

/// Integrate over consecutive pieces delimited by `breaks` (sorted, inside `[a, b]`).
pub(crate) fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> f64 {
    let mut lo = a;
    let mut total = 0.0;
    for &x in breaks.iter().chain(std::iter::once(&b)) {
        if x <= lo || x > b {
            continue;
        }
        total += integrate(&mut f, lo, x, tol);
        lo = x;
    }
    total
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1], by
/// Newton iteration on the three-term recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// A fixed Gauss–Legendre rule of a given size, shared across calls.
#[derive(Debug)]
pub(crate) struct FixedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FixedRule {
    pub fn get(n: usize) -> &'static FixedRule {
        const SIZES: [usize; 7] = [8, 16, 24, 32, 48, 64, 96];
        static RULES: [OnceLock<FixedRule>; 7] = [const { OnceLock::new() }; 7];
        let idx = SIZES
            .iter()
            .position(|&s| s == n)
            .unwrap_or_else(|| panic!("no cached rule of size {n}"));
        RULES[idx].get_or_init(|| {
            let (nodes, weights) = gauss_legendre(n);
            FixedRule { nodes, weights }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rules_integrate_polynomials() {
        for n in [1, 2, 5, 32, 64] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            let deg = 2 * n - 2;
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((got - 2.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n}");
        }
        let (x, _) = gauss_legendre(5);
        let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
        assert!((x[3] - a).abs() < 1e-15);
    }

    const TIGHT: Tolerance = Tolerance::new(0.0, 1e-13, 200);

    #[test]
    fn single_panel_exact_for_degree_22() {
        // x^22 on [-1, 1] integrates to 2/23; Kronrod-15 is exact to degree 22.
        let p = gk15(&mut |x: f64| x.powi(22), -1.0, 1.0);
        assert!((p.value - 2.0 / 23.0).abs() < 1e-15);
        // and the embedded Gauss-7 is exact to degree 13
        let p = gk15(&mut |x: f64| x.powi(12) + x.powi(13), -1.0, 1.0);
        assert!((p.value - 2.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let eps = 1e-3;
        let got = integrate(|x| eps / (x * x + eps * eps), -1.0, 1.0, TIGHT);
        let want = 2.0 * (1.0 / eps).atan();
        assert!((got - want).abs() / want < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn pieces_add_up() {
        let got = integrate_pieces(|x| x.exp(), 0.0, 2.0, &[0.5, 1.0, 1.0, 3.0], TIGHT);
        assert!((got - (2.0f64.exp() - 1.0)).abs() < 1e-13);
    }
}
