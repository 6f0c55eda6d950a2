use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::mvn::{box2, box_k, two_sided_tail};
use crate::numeric::compensated_sum;

fn ar1(m: usize, w: usize, rho: f64) -> BandedCorrelation {
    BandedCorrelation::from_fn(m, w, |_, d| rho.powi(d as i32)).unwrap()
}

fn sig3(x: f64) -> String {
    format!("{x:.2e}")
}

/// Random correlation matrix from a random factor.
fn random_correlation(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &a * a.transpose();
    let mut r = DMatrix::from_fn(k, k, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt());
    for i in 0..k {
        r[(i, i)] = 1.0;
        for j in 0..i {
            r[(j, i)] = r[(i, j)];
        }
    }
    r
}

#[test]
fn classical_baselines() {
    assert_eq!(sig3(bonferroni(672_972, 0.05)), "7.43e-8");
    assert_eq!(sig3(sidak(672_972, 0.05)), "7.62e-8");
    assert_eq!(sig3(bonferroni(123_497, 0.05)), "4.05e-7");
    assert_eq!(sig3(sidak(123_497, 0.05)), "4.15e-7");
    assert_eq!(bonferroni(1, 0.05), 0.05);
    assert!((sidak(1, 0.05) - 0.05).abs() < 1e-17);
}

#[test]
fn effective_number_of_tests() {
    for m in [1usize, 10, 1000, 672_972] {
        let v = m_eff(0.05, sidak(m, 0.05));
        assert!((v - m as f64).abs() < 1e-9 * m as f64, "{m}: {v}");
    }
    assert_eq!(m_eff(0.05, 0.05), 1.0);
    let v = m_eff(0.05, 8.62e-8);
    assert!((v - 595_060.0).abs() / 595_060.0 < 1e-4, "{v}");
}

#[test]
fn order_one_is_independent_product() {
    let band = ar1(50, 3, 0.7);
    let a = 1e-3;
    let lg = log_gamma_k(&band, a, 1).unwrap();
    let want = 50.0 * (-a).ln_1p();
    assert!((lg - want).abs() < 1e-13 * want.abs());
}

#[test]
fn independent_band_gives_sidak_for_every_order() {
    let band = BandedCorrelation::independent(40, 4).unwrap();
    let a = 2e-4;
    let g1 = log_gamma_k(&band, a, 1).unwrap();
    for k in 2..=4 {
        let gk = log_gamma_k(&band, a, k).unwrap();
        assert!((gk - g1).abs() < 1e-9 * g1.abs(), "k={k}: {gk} vs {g1}");
    }
}

#[test]
fn three_marker_order_two_matches_hand_assembly() {
    let r = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.3, 0.6, 1.0, 0.45, 0.3, 0.45, 1.0]);
    let band = BandedCorrelation::from_dense(&r, 3).unwrap();
    for a in [0.2, 0.01, 1e-5] {
        let c = cutoff(a).unwrap();
        let want = box2(0.6, c) * box2(0.45, c) / (1.0 - two_sided_tail(c));
        let got = log_gamma_k(&band, a, 2).unwrap().exp();
        assert!((got - want).abs() < 1e-12, "{a}: {got} vs {want}");
        let adj = adjust_pvalues(&band, &[a], 2).unwrap().values[0];
        assert!((adj - (1.0 - want)).abs() < 1e-12);
    }
}

#[test]
fn table_one_sidak_levels_from_solver() {
    for (m, want) in [(672_972usize, "7.62e-8"), (123_497, "4.15e-7")] {
        let band = BandedCorrelation::independent(m, 1).unwrap();
        let r = solve_alpha_loc(&band, 0.05, 1).unwrap();
        assert_eq!(sig3(r.alpha_loc), want);
        assert!((r.alpha_loc - sidak(m, 0.05)).abs() <= 2e-10 * r.alpha_loc);
        assert!(r.bracket / r.alpha_loc < SOLVER_REL_WIDTH);
        assert!(
            (two_sided_tail(r.c) - r.alpha_loc).abs() < 1e-14 * r.alpha_loc.max(1e-300) + 1e-300
        );
    }
}

#[test]
fn strong_ar1_orders_are_non_decreasing() {
    let band = ar1(100, 4, 0.9);
    let levels: Vec<f64> = (1..=4)
        .map(|k| solve_alpha_loc(&band, 0.05, k).unwrap().alpha_loc)
        .collect();
    assert!(levels[1] > levels[0]);
    for w in levels.windows(2) {
        assert!(w[1] >= w[0], "{levels:?}");
    }
    assert!(levels[0] >= bonferroni(100, 0.05));
}

#[test]
fn full_order_is_exact_on_small_families() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let k = rng.random_range(2..=4);
        let r = random_correlation(&mut rng, k);
        let band = BandedCorrelation::from_dense(&r, k).unwrap();
        let a = 0.01;
        let truth = 1.0 - box_k(&BoxProblem::new(&r, cutoff(a).unwrap()).unwrap()).unwrap();
        let approx = -log_gamma_k(&band, a, k).unwrap().exp_m1();
        assert!((approx - truth).abs() < 1e-9);
    }
}

#[test]
fn block_factorization_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sizes = [7usize, 1, 12, 2, 9];
    let m: usize = sizes.iter().sum();
    let values: Vec<f64> = (0..m * 3).map(|_| rng.random_range(0.0..0.8)).collect();
    let mut starts = vec![0];
    for s in &sizes[..sizes.len() - 1] {
        starts.push(starts.last().unwrap() + s);
    }
    let band = BandedCorrelation::from_fn(m, 4, |j, d| values[j * 3 + d - 1])
        .unwrap()
        .with_blocks(&starts)
        .unwrap();
    for k in 1..=3 {
        let whole = log_gamma_k(&band, 1e-4, k).unwrap();
        let parts: Vec<f64> = band
            .blocks()
            .map(|(s, e)| {
                let sub =
                    BandedCorrelation::from_fn(e - s, 4, |j, d| band.entry(s + j, d)).unwrap();
                log_gamma_k(&sub, 1e-4, k).unwrap()
            })
            .collect();
        assert_eq!(whole.to_bits(), compensated_sum(&parts).to_bits(), "k={k}");
    }
}

#[test]
fn order_beyond_band_is_rejected() {
    let band = ar1(10, 2, 0.5);
    assert!(matches!(
        solve_alpha_loc(&band, 0.05, 3),
        Err(Error::OrderExceedsBandwidth {
            order: 3,
            bandwidth: 2
        })
    ));
    assert!(matches!(
        log_gamma_k(&ar1(10, 7, 0.5), 0.01, 7),
        Err(Error::DimensionOutOfRange(7))
    ));
    assert!(solve_alpha_loc(&band, 1.5, 1).is_err());
}

#[test]
fn single_marker_returns_alpha() {
    let band = BandedCorrelation::independent(1, 1).unwrap();
    let r = solve_alpha_loc(&band, 0.05, 1).unwrap();
    assert_eq!(r.alpha_loc, 0.05);
    assert_eq!(r.m_eff, 1.0);
}

#[test]
fn adjusted_pvalues_examples() {
    let band = BandedCorrelation::independent(20, 2).unwrap();
    let p = [1.0, 1e-6, 0.003, 0.2];
    let adj = adjust_pvalues(&band, &p, 2).unwrap().values;
    assert_eq!(adj[0], 1.0);
    for (pi, ai) in p.iter().zip(&adj).skip(1) {
        let want = -(20.0 * (-pi).ln_1p()).exp_m1();
        assert!((ai - want).abs() < 1e-9 * want, "{pi}: {ai} vs {want}");
    }
    assert!(adjust_pvalues(&band, &[0.0], 2).is_err());
}

#[test]
fn adjusted_pvalues_saturate_consistently() {
    let band = ar1(300, 3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p: Vec<f64> = (0..300).map(|_| rng.random_range(1e-7..1.0)).collect();
    let adj = adjust_pvalues(&band, &p, 2).unwrap().values;
    let plan = GammaPlan::new(&band, 2).unwrap();
    for (pi, ai) in p.iter().zip(&adj) {
        assert!(*ai >= *pi && *ai <= 1.0);
        let direct = plan.fwer(*pi).unwrap().clamp(*pi, 1.0);
        assert!((ai - direct).abs() < 1e-12, "{pi}: {ai} vs {direct}");
    }
}

fn random_band(seed: u64, m: usize, w: usize) -> BandedCorrelation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho: f64 = rng.random_range(0.0..0.95);
    // AR1 with jittered lag-one links, always positive definite
    let links: Vec<f64> = (0..m).map(|_| rho * rng.random_range(0.5..1.0)).collect();
    BandedCorrelation::from_fn(m, w, |j, d| links[j..j + d].iter().product()).unwrap()
}

#[test]
fn rejection_sets_agree_between_routes() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let m = 60;
        let band = random_band(seed, m, 3);
        let k = 1 + (seed as usize % 3);
        let r = solve_alpha_loc(&band, 0.05, k).unwrap();
        let p: Vec<f64> = (0..m)
            .map(|_| {
                let u: f64 = rng.random_range(0.0..1.0);
                // spread over (1e-7, 1) with mass near the cutoff
                10f64.powf(-7.0 * u)
            })
            .collect();
        let adj = adjust_pvalues(&band, &p, k).unwrap().values;
        for (pi, ai) in p.iter().zip(&adj) {
            assert_eq!(
                *ai <= 0.05,
                *pi <= r.alpha_loc,
                "seed {seed}: p={pi} adj={ai} loc={}",
                r.alpha_loc
            );
        }
    }
}

#[test]
fn report_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.tsv");
    let band = ar1(30, 3, 0.6);
    let res = solve_alpha_loc(&band, 0.05, 2).unwrap();
    let rows = vec![
        ReportRow::new(Method::Bonferroni, 30, 0.05, bonferroni(30, 0.05), 0.0).unwrap(),
        ReportRow::from_result(Method::Order(2), 30, &res, 0.01),
    ];
    write_report(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("#method\torder"));
    assert!(lines[1].starts_with("bonferroni\tNA\t0.05\t1.666667e-3"));
    assert!(lines[2].starts_with("order2\t2\t"));

    let adj_path = dir.path().join("adj.tsv");
    write_adjusted(&["a".into(), "b".into()], &[0.5, 1.0], &adj_path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&adj_path).unwrap(),
        "#marker_id\tp_adj\na\t5e-1\nb\t1e0\n"
    );
    assert!(write_adjusted(&["a".into()], &[], &adj_path).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in [
        Method::Bonferroni,
        Method::Sidak,
        Method::Order(3),
        Method::MaxT,
        Method::FullJoint,
    ] {
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
    assert_eq!("order-2".parse::<Method>().unwrap(), Method::Order(2));
    assert!("order0".parse::<Method>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn levels_are_ordered_on_positive_bands(seed in any::<u64>(), m in 5usize..80) {
        let band = random_band(seed, m, 3);
        let b = bonferroni(m, 0.05);
        let s = sidak(m, 0.05);
        let l1 = solve_alpha_loc(&band, 0.05, 1).unwrap().alpha_loc;
        let l2 = solve_alpha_loc(&band, 0.05, 2).unwrap().alpha_loc;
        let l3 = solve_alpha_loc(&band, 0.05, 3).unwrap().alpha_loc;
        let tol = 3e-10;
        prop_assert!(b < s || m == 1);
        prop_assert!((l1 - s).abs() <= tol * s);
        prop_assert!(l2 >= l1 * (1.0 - tol));
        prop_assert!(l3 >= l2 * (1.0 - tol));
        prop_assert!(l3 <= 0.05);
    }

    #[test]
    fn adjusted_is_monotone_and_bounded(seed in any::<u64>(), k in 1usize..=3) {
        let band = random_band(seed, 25, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let p: Vec<f64> = (0..25).map(|_| 10f64.powf(-6.0 * rng.random_range(0.0..1.0))).collect();
        let adj = adjust_pvalues(&band, &p, k).unwrap().values;
        for i in 0..p.len() {
            prop_assert!(adj[i] >= p[i] && adj[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] < p[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }
}
