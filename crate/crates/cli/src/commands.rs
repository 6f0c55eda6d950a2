//! The four subcommands.

use std::path::Path;
use std::time::Instant;

use fwerk_core::fwer::{solve_with_plan, write_report, ReportRow};
use fwerk_core::maxt::MIN_PERMUTATIONS;
use fwerk_core::sim::{
    block_layout, null_calibration, run_ar1_experiment, CalibrationSpec, SyntheticGwas,
    MAX_FULL_JOINT_DIM,
};
use fwerk_core::{
    bonferroni, correlation_band, detect_blocks, fit_null, generate_gwas, impute_missing,
    load_dataset, run_maxt, save_dataset, score_statistics, sidak, BandedCorrelation, Dataset,
    DatasetPaths, Error, GammaPlan, GenotypeCoding, Method, NullFit, PermutationRun,
};

use crate::config::RunConfig;
use crate::output::{
    histogram_tsv, neighbor_histogram, read_pvalues, read_strata, write_statistics, write_text,
    MethodColumn, RunLog,
};

const MSM_CAVEAT: &str =
    "note: order-k levels control the FWER when the statistics are monotonically \
sub-Markovian of order k (MSM_k); this positive-dependence condition is assumed, not checked";

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

/// A data set loaded from disk, with missing genotypes mean-imputed.
fn load(cfg: &RunConfig, log: &mut RunLog) -> anyhow::Result<Dataset> {
    let paths = cfg.dataset_paths()?;
    log.line(format!("phenotype: {}", paths.phenotype.display()))?;
    log.line(format!("genotypes: {}", paths.genotypes.display()))?;
    if let Some(c) = &paths.covariates {
        log.line(format!("covariates: {}", c.display()))?;
    }
    let ds = load_dataset(&paths, GenotypeCoding::Additive)?;
    log.line(format!("loaded n={} m={} d={}", ds.n(), ds.m(), ds.d()))?;
    if ds.genotypes().has_missing() {
        let (ds, report) = impute_missing(&ds)?;
        log.line(format!("mean-imputed {} missing genotypes", report.total()))?;
        return Ok(ds);
    }
    Ok(ds)
}

/// Estimated band with block boundaries at chromosome changes and weak cuts.
fn estimate_band(
    cfg: &RunConfig,
    ds: &Dataset,
    fit: &NullFit,
    bandwidth: usize,
    log: &mut RunLog,
) -> anyhow::Result<BandedCorrelation> {
    let band = correlation_band(ds, fit, bandwidth, cfg.correlation_mode()?)?;
    let band = detect_blocks(&band, ds.positions(), cfg.block_threshold)?;
    log.line(format!(
        "band width {bandwidth}, mode {}, {} blocks (threshold {})",
        cfg.correlation_mode,
        band.block_starts().len(),
        cfg.block_threshold
    ))?;
    Ok(band)
}

fn strata(cfg: &RunConfig) -> anyhow::Result<Option<Vec<usize>>> {
    cfg.strata.as_deref().map(read_strata).transpose()
}

struct Level {
    row: ReportRow,
    column: MethodColumn,
}

/// `α_loc`, report row and adjusted p-values for every method.
fn compute_levels(
    methods: &[Method],
    band: &BandedCorrelation,
    p: &[f64],
    alpha: f64,
    maxt: Option<(&PermutationRun, &[f64])>,
) -> anyhow::Result<Vec<Level>> {
    let m = band.m();
    let mf = m as f64;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let start = Instant::now();
        let (alpha_loc, adjusted, result) = match method {
            Method::Bonferroni => (
                bonferroni(m, alpha),
                p.iter().map(|p| (mf * p).min(1.0)).collect(),
                None,
            ),
            Method::Sidak => (
                sidak(m, alpha),
                p.iter()
                    .map(|&p| (-(mf * (-p).ln_1p()).exp_m1()).clamp(p, 1.0))
                    .collect(),
                None,
            ),
            Method::Order(k) => {
                let plan = GammaPlan::new(band, k)?;
                let res = solve_with_plan(&plan, alpha)?;
                let adj = fwerk_core::fwer::adjust_with_plan(&plan, p)?;
                (res.alpha_loc, adj.values, Some(res))
            }
            Method::MaxT => {
                let (run, abs_t) =
                    maxt.ok_or_else(|| invalid("maxt needs genotype and phenotype data"))?;
                let b = run.max_stats.len() as f64;
                let adj = abs_t
                    .iter()
                    .map(|t| run.max_stats.iter().filter(|&&s| s >= *t).count() as f64 / b)
                    .collect();
                (run.alpha_loc_hat, adj, None)
            }
            Method::FullJoint => {
                return Err(invalid(
                    "full-joint levels are available from `simulate --ar1` only",
                ));
            }
        };
        let secs = start.elapsed().as_secs_f64();
        let row = match &result {
            Some(r) => ReportRow::from_result(method, m, r, secs),
            None => ReportRow::new(method, m, alpha, alpha_loc, secs)?,
        };
        out.push(Level {
            row,
            column: MethodColumn {
                method,
                alpha_loc,
                adjusted,
            },
        });
    }
    Ok(out)
}

fn report_levels(
    levels: &[Level],
    p: Option<&[f64]>,
    out_dir: &Path,
    log: &mut RunLog,
) -> anyhow::Result<()> {
    let rows: Vec<ReportRow> = levels.iter().map(|l| l.row.clone()).collect();
    write_report(&rows, &out_dir.join("summary.tsv"))?;
    println!("method\talpha_loc\tratio_to_bonferroni\trejections");
    for l in levels {
        let rejected = p.map_or_else(
            || "NA".to_string(),
            |p| {
                p.iter()
                    .filter(|&&v| v <= l.column.alpha_loc)
                    .count()
                    .to_string()
            },
        );
        let line = format!(
            "{}\t{:.4e}\t{:.2}\t{rejected}",
            l.row.method, l.row.alpha_loc, l.row.ratio_to_bonferroni
        );
        println!("{line}");
        log.line(format!("level {line}"))?;
    }
    if levels
        .iter()
        .any(|l| matches!(l.row.method, Method::Order(k) if k > 1))
    {
        println!("{MSM_CAVEAT}");
        log.line(MSM_CAVEAT)?;
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig, log: &mut RunLog) -> anyhow::Result<()> {
    let methods = cfg.methods()?;
    let w = cfg.bandwidth(&methods);
    let out = &cfg.out_dir;

    if let Some(m) = cfg.markers {
        if methods.contains(&Method::MaxT) {
            return Err(invalid("maxt needs data; --markers gives levels only"));
        }
        log.line(format!("levels only for {m} independent markers"))?;
        let band = BandedCorrelation::independent(m, w.min(m.max(1)))?;
        let levels = compute_levels(&methods, &band, &[], cfg.alpha, None)?;
        return report_levels(&levels, None, out, log);
    }

    if let Some(path) = &cfg.pvalues {
        if methods.contains(&Method::MaxT) {
            return Err(invalid("maxt needs data; it is unavailable with --pvalues"));
        }
        let table = read_pvalues(path)?;
        let m = table.ids.len();
        log.line(format!("p-values: {} ({m} markers)", path.display()))?;
        let band = match &cfg.band {
            Some(b) => {
                log.line(format!("band: {}", b.display()))?;
                BandedCorrelation::load(b)?
            }
            None => {
                log.line("no band given; markers treated as independent")?;
                BandedCorrelation::independent(m, w.min(m))?
            }
        };
        if band.m() != m {
            return Err(Error::DimensionMismatch(format!(
                "band has {} markers, p-value table {m}",
                band.m()
            ))
            .into());
        }
        let band = match &table.positions {
            Some(pos) => detect_blocks(&band, pos, cfg.block_threshold)?,
            None => band,
        };
        write_text(
            &out.join("neighbor_correlation.tsv"),
            &histogram_tsv(&neighbor_histogram(&band)),
        )?;
        let levels = compute_levels(&methods, &band, &table.p, cfg.alpha, None)?;
        let columns: Vec<MethodColumn> = levels.iter().map(|l| l.column.clone()).collect();
        write_statistics(
            &out.join("statistics.tsv"),
            &table.ids,
            table.positions.as_deref(),
            None,
            &table.p,
            &columns,
        )?;
        return report_levels(&levels, Some(&table.p), out, log);
    }

    let ds = load(cfg, log)?;
    let family = cfg.family()?;
    let fit = fit_null(&ds, family)?;
    log.line(format!(
        "null fit: family {family}, {} IRLS iterations, converged {}",
        fit.iterations, fit.converged
    ))?;
    let stats = score_statistics(&ds, &fit)?;
    let band = estimate_band(cfg, &ds, &fit, w, log)?;
    write_text(
        &out.join("neighbor_correlation.tsv"),
        &histogram_tsv(&neighbor_histogram(&band)),
    )?;
    let abs_t: Vec<f64> = stats.t.iter().map(|t| t.abs()).collect();
    let run = if methods.contains(&Method::MaxT) {
        let strata = strata(cfg)?;
        log.line(format!("maxt: b={} seed={}", cfg.permutations, cfg.seed))?;
        Some(run_maxt(
            &ds,
            family,
            cfg.alpha,
            cfg.permutations,
            cfg.seed,
            strata.as_deref(),
        )?)
    } else {
        None
    };
    let levels = compute_levels(
        &methods,
        &band,
        &stats.p_unadjusted,
        cfg.alpha,
        run.as_ref().map(|r| (r, abs_t.as_slice())),
    )?;
    let columns: Vec<MethodColumn> = levels.iter().map(|l| l.column.clone()).collect();
    write_statistics(
        &out.join("statistics.tsv"),
        ds.marker_ids(),
        Some(ds.positions()),
        Some(&stats.t),
        &stats.p_unadjusted,
        &columns,
    )?;
    report_levels(&levels, Some(&stats.p_unadjusted), out, log)
}

pub fn corr(cfg: &RunConfig, log: &mut RunLog) -> anyhow::Result<()> {
    let w = cfg.bandwidth.unwrap_or(cfg.k.max(2));
    let ds = load(cfg, log)?;
    let fit = fit_null(&ds, cfg.family()?)?;
    let band = estimate_band(cfg, &ds, &fit, w, log)?;
    band.save(&cfg.out_dir.join("band.tsv"))?;
    write_text(
        &cfg.out_dir.join("neighbor_correlation.tsv"),
        &histogram_tsv(&neighbor_histogram(&band)),
    )?;
    println!(
        "band.tsv: {} markers, width {w}, {} blocks",
        band.m(),
        band.block_starts().len()
    );
    Ok(())
}

pub fn maxt(cfg: &RunConfig, log: &mut RunLog) -> anyhow::Result<()> {
    if cfg.permutations < MIN_PERMUTATIONS {
        return Err(invalid(format!(
            "at least {MIN_PERMUTATIONS} permutations are needed"
        )));
    }
    let ds = load(cfg, log)?;
    let family = cfg.family()?;
    let strata = strata(cfg)?;
    log.line(format!(
        "maxt: b={} seed={} stratified={}",
        cfg.permutations,
        cfg.seed,
        strata.is_some()
    ))?;
    let run = run_maxt(
        &ds,
        family,
        cfg.alpha,
        cfg.permutations,
        cfg.seed,
        strata.as_deref(),
    )?;
    let ci = fwerk_core::maxt_ci(&run.max_stats, cfg.alpha, cfg.confidence)?;
    let mut text = String::from(
        "#alpha\tb\tseed\tc_hat\talpha_loc\tconfidence\tk_lo\tk_hi\tcoverage\tc_lower\tc_upper\talpha_loc_lower\talpha_loc_upper\n",
    );
    text.push_str(&format!(
        "{}\t{}\t{}\t{:.6}\t{:.6e}\t{}\t{}\t{}\t{:.4}\t{:.6}\t{:.6}\t{:.6e}\t{:.6e}\n",
        run.alpha,
        run.b,
        run.seed,
        run.c_hat,
        run.alpha_loc_hat,
        ci.confidence,
        ci.k_lo,
        ci.k_hi,
        ci.coverage,
        ci.lower_c,
        ci.upper_c,
        ci.lower_alpha_loc,
        ci.upper_alpha_loc
    ));
    write_text(&cfg.out_dir.join("maxt.tsv"), &text)?;
    if cfg.write_samples {
        let mut s = String::from("#max_abs_t\n");
        for v in &run.max_stats {
            s.push_str(&format!("{v:e}\n"));
        }
        write_text(&cfg.out_dir.join("max_stats.tsv"), &s)?;
    }
    let row = ReportRow::new(Method::MaxT, ds.m(), cfg.alpha, run.alpha_loc_hat, 0.0)?;
    write_report(&[row], &cfg.out_dir.join("summary.tsv"))?;
    let line = format!(
        "maxt alpha_loc {:.4e} (c {:.4}); {:.0}% interval [{:.4e}, {:.4e}]",
        run.alpha_loc_hat,
        run.c_hat,
        100.0 * ci.confidence,
        ci.lower_alpha_loc,
        ci.upper_alpha_loc
    );
    println!("{line}");
    log.line(line)
}

fn gwas_spec(cfg: &RunConfig) -> anyhow::Result<SyntheticGwas> {
    Ok(SyntheticGwas {
        block_length: cfg.block_length,
        within_block_rho: cfg.within_block_rho,
        family: cfg.family()?,
        chromosomes: cfg.chromosomes,
        ..SyntheticGwas::null(cfg.n, cfg.m, cfg.seed)
    })
}

pub fn simulate(cfg: &RunConfig, log: &mut RunLog) -> anyhow::Result<()> {
    if !(cfg.ar1 || cfg.null_calibration || cfg.gwas) {
        return Err(invalid(
            "choose at least one of --ar1, --null-calibration, --gwas",
        ));
    }
    if cfg.ar1 {
        let grid = cfg.rho_values()?;
        if cfg.mc_samples > 0 && cfg.m > MAX_FULL_JOINT_DIM {
            return Err(invalid(format!(
                "the full-joint column needs m <= {MAX_FULL_JOINT_DIM}"
            )));
        }
        log.line(format!(
            "ar1: m={} rho={grid:?} orders={:?} mc_samples={} seed={}",
            cfg.m, cfg.orders, cfg.mc_samples, cfg.seed
        ))?;
        let exp = run_ar1_experiment(
            &grid,
            cfg.m,
            cfg.alpha,
            &cfg.orders,
            cfg.mc_samples,
            cfg.seed,
        )?;
        exp.write_tsv(&cfg.out_dir.join("ar1.tsv"))?;
        print!("{}", exp.to_tsv());
        if exp.orders.iter().any(|&k| k > 1) {
            println!("{MSM_CAVEAT}");
        }
    }
    if cfg.null_calibration {
        let spec = CalibrationSpec {
            gwas: gwas_spec(cfg)?,
            replicates: cfg.replicates,
            alpha: cfg.alpha,
            order: cfg.k,
            bandwidth: cfg.bandwidth.unwrap_or(cfg.k.max(2)),
            block_threshold: cfg.block_threshold,
            mode: cfg.correlation_mode()?,
        };
        log.line(format!(
            "null calibration: n={} m={} replicates={} order={} seed={}",
            cfg.n, cfg.m, cfg.replicates, cfg.k, cfg.seed
        ))?;
        let res = null_calibration(&spec)?;
        let text = format!(
            "#replicates\trejections\tfwer\tstd_error\talpha\torder\tmean_alpha_loc\n{}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{:.6e}\n",
            res.replicates, res.rejections, res.fwer, res.std_error, cfg.alpha, cfg.k, res.mean_alpha_loc
        );
        write_text(&cfg.out_dir.join("calibration.tsv"), &text)?;
        let bound = cfg.alpha + 2.0 * res.std_error;
        let line = format!(
            "empirical FWER {:.4} over {} null data sets (alpha + 2 SE = {bound:.4}): {}",
            res.fwer,
            res.replicates,
            if res.fwer <= bound {
                "within bound"
            } else {
                "ABOVE bound"
            }
        );
        println!("{line}");
        log.line(line)?;
    }
    if cfg.gwas {
        let spec = gwas_spec(cfg)?;
        let ds = generate_gwas(&spec)?;
        let paths = DatasetPaths::in_dir(&cfg.out_dir, false);
        save_dataset(&ds, &paths)?;
        let starts = block_layout(&spec)?;
        let blocks: String = starts.iter().map(|s| format!("{s}\n")).collect();
        write_text(
            &cfg.out_dir.join("blocks.txt"),
            &format!("#block_start\n{blocks}"),
        )?;
        let line = format!(
            "generated n={} m={} with {} blocks",
            ds.n(),
            ds.m(),
            starts.len()
        );
        println!("{line}");
        log.line(line)?;
    }
    Ok(())
}
