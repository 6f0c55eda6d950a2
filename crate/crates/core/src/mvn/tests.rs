use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::error::Error;

// ---- test-side oracles -------------------------------------------------------

/// 5-point Gauss–Legendre nodes and weights on [-1, 1].
fn gl5() -> ([f64; 5], [f64; 5]) {
    let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    ([-b, -a, 0.0, a, b], [wb, wa, 128.0 / 225.0, wa, wb])
}

/// Composite 5-point Gauss–Legendre nodes on [lo, hi] with `panels` panels.
fn composite_nodes(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    let (x, w) = gl5();
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * 5);
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        for i in 0..5 {
            out.push((mid + 0.5 * h * x[i], 0.5 * h * w[i]));
        }
    }
    out
}

/// Brute-force tensor quadrature of the bivariate normal density over the square.
fn box2_tensor_oracle(r: f64, c: f64) -> f64 {
    let nodes = composite_nodes(-c, c, 200);
    let det = 1.0 - r * r;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    let mut total = 0.0;
    for &(x, wx) in &nodes {
        let mut row = 0.0;
        for &(y, wy) in &nodes {
            let q = (x * x - 2.0 * r * x * y + y * y) / det;
            row += wy * (-0.5 * q).exp();
        }
        total += wx * row;
    }
    total * norm
}

/// AR(1) box probability by a Nyström discretisation of the Markov transfer operator.
fn ar1_transfer_oracle(rho: f64, c: f64, k: usize) -> f64 {
    let nodes = composite_nodes(-c, c, 600);
    let s = (1.0 - rho * rho).sqrt();
    let dens = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut f: Vec<f64> = nodes.iter().map(|&(x, _)| dens(x)).collect();
    for _ in 1..k {
        let next: Vec<f64> = nodes
            .iter()
            .map(|&(y, _)| {
                nodes
                    .iter()
                    .zip(&f)
                    .map(|(&(x, w), &fx)| w * fx * dens((y - rho * x) / s) / s)
                    .sum()
            })
            .collect();
        f = next;
    }
    nodes.iter().zip(&f).map(|(&(_, w), &fx)| w * fx).sum()
}

/// Plain Monte Carlo with direct multivariate normal sampling.
fn plain_mc(corr: &DMatrix<f64>, c: f64, samples: usize, seed: u64) -> (f64, f64) {
    let l = corr.clone().cholesky().unwrap().l();
    let k = corr.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut w = vec![0.0; k];
    for _ in 0..samples {
        for wi in w.iter_mut() {
            *wi = StandardNormal.sample(&mut rng);
        }
        let inside = (0..k).all(|i| {
            let z: f64 = (0..=i).map(|j| l[(i, j)] * w[j]).sum();
            z.abs() < c
        });
        hits += inside as usize;
    }
    let p = hits as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

fn ar1(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

fn exchangeable(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho })
}

// ---- box2 ---------------------------------------------------------------------

#[test]
fn box2_independence_and_perfect_correlation() {
    for c in [0.5, 1.959964, 3.0, 5.38] {
        let p1 = 1.0 - two_sided_tail(c);
        assert!((box2(0.0, c) - p1 * p1).abs() < 1e-15);
        assert_eq!(box2(1.0, c), p1);
        assert_eq!(box2(-1.0, c), p1);
        // exceedance form keeps relative precision at genome-wide cutoffs
        let a = two_sided_tail(c);
        let q = box2_exceedance(0.0, c);
        assert!(((q - (2.0 * a - a * a)) / q).abs() < 1e-12, "c={c}");
    }
}

#[test]
fn box2_matches_tensor_quadrature() {
    let c = 1.959964;
    for r in [0.5, -0.3, 0.9] {
        let want = box2_tensor_oracle(r, c);
        let got = box2(r, c);
        assert!((got - want).abs() < 1e-10, "r={r}: {got} vs {want}");
    }
}

#[test]
fn box2_tail_exceedance_matches_transfer_oracle() {
    let c = 5.38;
    let want = 1.0 - ar1_transfer_oracle(0.9, c, 2);
    let got = box2_exceedance(0.9, c);
    assert!(((got - want) / want).abs() < 1e-7, "{got:e} vs {want:e}");
}

// ---- box_k --------------------------------------------------------------------

#[test]
fn box_k_identity_is_product() {
    for k in 1..=6 {
        for c in [1.0, 2.5, 5.0] {
            let p = BoxProblem::new(&DMatrix::identity(k, k), c).unwrap();
            let want = (1.0 - two_sided_tail(c)).powi(k as i32);
            let got = box_k(&p).unwrap();
            let tol = if k <= 4 { 1e-10 } else { 1e-8 };
            assert!((got - want).abs() < tol, "k={k} c={c}: {got} vs {want}");
        }
    }
}

#[test]
fn recursion_agrees_with_bivariate_formula() {
    for r in [-0.8, 0.0, 0.3, 0.95, 0.999] {
        for c in [1.5, 3.0, 5.38] {
            let m = DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]);
            let p = BoxProblem::new(&m, c).unwrap();
            let a = box2_exceedance(r, c);
            let b = recursive_exceedance(&p);
            assert!(((a - b) / a).abs() < 1e-9, "r={r} c={c}: {a:e} vs {b:e}");
        }
    }
}

#[test]
fn box3_exchangeable_matches_monte_carlo() {
    let corr = exchangeable(3, 0.9);
    let got = box_k(&BoxProblem::new(&corr, 2.0).unwrap()).unwrap();
    let (est, se) = plain_mc(&corr, 2.0, 10_000_000, 11);
    assert!((got - est).abs() < 3.0 * se, "{got} vs {est} ± {se}");
}

#[test]
fn ar1_windows_match_transfer_oracle_in_the_tail() {
    for (k, rho) in [(3, 0.9), (4, 0.9), (3, 0.5), (4, 0.99)] {
        let c = 5.38;
        let want = 1.0 - ar1_transfer_oracle(rho, c, k);
        let got = BoxProblem::new(&ar1(k, rho), c)
            .unwrap()
            .exceedance()
            .unwrap();
        assert!(
            ((got - want) / want).abs() < 1e-6,
            "k={k} rho={rho}: {got:e} vs {want:e}"
        );
    }
    let c = 2.0;
    let want = ar1_transfer_oracle(0.7, c, 4);
    let got = box_k(&BoxProblem::new(&ar1(4, 0.7), c).unwrap()).unwrap();
    assert!((got - want).abs() < 1e-10);
}

#[test]
fn continuity_at_independence() {
    let c = 2.2;
    let near = box_k(&BoxProblem::new(&ar1(3, 1e-8), c).unwrap()).unwrap();
    let indep = (1.0 - two_sided_tail(c)).powi(3);
    assert!((near - indep).abs() < 1e-9);
}

#[test]
fn block_diagonal_factorizes() {
    let mut m = DMatrix::<f64>::identity(5, 5);
    let a = ar1(2, 0.6);
    let b = exchangeable(3, 0.4);
    m.view_mut((0, 0), (2, 2)).copy_from(&a);
    m.view_mut((2, 2), (3, 3)).copy_from(&b);
    let c = 2.4;
    let whole = box_k(&BoxProblem::new(&m, c).unwrap()).unwrap();
    let pa = box_k(&BoxProblem::new(&a, c).unwrap()).unwrap();
    let pb = box_k(&BoxProblem::new(&b, c).unwrap()).unwrap();
    assert!((whole - pa * pb).abs() < 1e-9, "{whole} vs {}", pa * pb);
}

#[test]
fn singular_windows_are_handled() {
    // duplicated markers: all-ones matrix collapses to one event
    let c = 3.0;
    let p = box_k(&BoxProblem::new(&exchangeable(4, 1.0), c).unwrap()).unwrap();
    assert!((p - (1.0 - two_sided_tail(c))).abs() < 1e-12);
    // two identical plus one independent
    let mut m = DMatrix::<f64>::identity(3, 3);
    m[(0, 1)] = 1.0;
    m[(1, 0)] = 1.0;
    let p = box_k(&BoxProblem::new(&m, c).unwrap()).unwrap();
    let p1 = 1.0 - two_sided_tail(c);
    assert!((p - p1 * p1).abs() < 1e-10);
}

#[test]
fn rejects_bad_problems() {
    assert!(matches!(
        BoxProblem::new(&DMatrix::identity(7, 7), 2.0),
        Err(Error::DimensionOutOfRange(7))
    ));
    let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
    let p = BoxProblem::new(&m, 2.0).unwrap();
    assert!(matches!(
        p.exceedance(),
        Err(Error::NotPositiveSemidefinite { .. })
    ));
    assert!(BoxProblem::new(&DMatrix::identity(2, 2), 0.0).is_err());
    let mut bad = DMatrix::<f64>::identity(2, 2);
    bad[(0, 1)] = 0.5;
    assert!(BoxProblem::new(&bad, 1.0).is_err());
}

#[test]
fn repair_restores_unit_diagonal_psd() {
    let mut m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
    assert!(repair_correlation(&mut m));
    for i in 0..3 {
        assert_eq!(m[(i, i)], 1.0);
    }
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    assert!(min > -PSD_TOLERANCE);
    assert!(BoxProblem::new(&m, 2.0).unwrap().exceedance().is_ok());
    let mut fine = ar1(3, 0.5);
    assert!(!repair_correlation(&mut fine));
}

#[test]
fn monotone_in_cutoff_and_correlation() {
    let mut last = 0.0;
    for i in 1..=12 {
        let c = 0.5 * i as f64;
        let p = box_k(&BoxProblem::new(&ar1(3, 0.6), c).unwrap()).unwrap();
        assert!(p > last);
        last = p;
    }
    let mut last = 0.0;
    for i in 0..=9 {
        let rho = 0.1 * i as f64;
        let p = box_k(&BoxProblem::new(&exchangeable(3, rho), 2.0).unwrap()).unwrap();
        assert!(p > last - 1e-12, "rho={rho}");
        last = p;
    }
}

fn correlation_strategy(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-1.0f64..1.0, k * (k + 1)).prop_map(move |v| {
        let a = DMatrix::from_row_slice(k, k + 1, &v);
        let g = &a * a.transpose() + DMatrix::identity(k, k) * 1e-3;
        let d: Vec<f64> = (0..k).map(|i| g[(i, i)].sqrt()).collect();
        DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                let v = g[(i, j)] / (d[i] * d[j]);
                let v = v.clamp(-1.0, 1.0);
                if i < j {
                    v
                } else {
                    (g[(j, i)] / (d[i] * d[j])).clamp(-1.0, 1.0)
                }
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sidak_lower_bound_holds(m in correlation_strategy(3), c in 1.0f64..4.0) {
        let p = box_k(&BoxProblem::new(&m, c).unwrap()).unwrap();
        let sidak = (1.0 - two_sided_tail(c)).powi(3);
        prop_assert!(p >= sidak - 1e-10, "{} < {}", p, sidak);
    }

    #[test]
    fn sidak_lower_bound_holds_dim4(m in correlation_strategy(4), c in 1.5f64..4.0) {
        let p = box_k(&BoxProblem::new(&m, c).unwrap()).unwrap();
        let sidak = (1.0 - two_sided_tail(c)).powi(4);
        prop_assert!(p >= sidak - 1e-10);
    }
}

// ---- box_mc -------------------------------------------------------------------

#[test]
fn qmc_identity_is_independent_product() {
    let c = phi_inv_upper(0.0005 / 2.0).unwrap();
    let est = box_mc(&DMatrix::identity(100, 100), c, 100_000, 3).unwrap();
    let want = 0.9995f64.powi(100);
    assert!((est.estimate - want).abs() <= 3.0 * est.std_error + 1e-12);
    assert!((want - 0.9512).abs() < 1e-4);
}

#[test]
fn qmc_ar1_sidak_is_conservative_and_matches_transfer() {
    let m = 100;
    let alpha = 0.05;
    let sidak = -(-alpha as f64)
        .ln_1p()
        .mul_add(1.0 / m as f64, 0.0)
        .exp_m1();
    let c = phi_inv_upper(sidak / 2.0).unwrap();
    let est = box_mc(&ar1(m, 0.9), c, 200_000, 5).unwrap();
    assert!(est.estimate > 1.0 - alpha, "{:?}", est);
    let exact = ar1_transfer_oracle(0.9, c, m);
    assert!(
        (est.estimate - exact).abs() < 3.0 * est.std_error + 1e-6,
        "{:?} vs {exact}",
        est
    );
}

#[test]
fn qmc_is_deterministic_given_seed() {
    let corr = ar1(30, 0.7);
    let a = box_mc(&corr, 2.5, 5000, 42).unwrap();
    let b = box_mc(&corr, 2.5, 5000, 42).unwrap();
    assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    let c = box_mc(&corr, 2.5, 5000, 43).unwrap();
    assert_ne!(a.estimate.to_bits(), c.estimate.to_bits());
}

#[test]
fn grid_is_converged_on_stress_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases = vec![
        ar1(4, 0.999),
        exchangeable(4, 0.999),
        ar1(4, -0.95),
        ar1(3, 0.999),
    ];
    for _ in 0..8 {
        let k = 3 + (rand::Rng::random::<u32>(&mut rng) % 2) as usize;
        let v: Vec<f64> = (0..k * (k + 1))
            .map(|_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0)
            .collect();
        let a = DMatrix::from_row_slice(k, k + 1, &v);
        let g = &a * a.transpose();
        cases.push(DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                let (i, j) = (i.min(j), i.max(j));
                g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt()
            }
        }));
    }
    for m in &cases {
        for c in [1.5, 2.5, 4.0, 5.38] {
            let p = BoxProblem::new(m, c).unwrap();
            let fine = exceedance_with_points(&p, 96);
            let q = p.exceedance().unwrap();
            assert!(
                ((q - fine) / fine).abs() < 1e-12,
                "c={c} {q:e} vs {fine:e}\n{m}"
            );
        }
    }
}
