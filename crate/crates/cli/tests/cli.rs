use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fwerk_core::{
    generate_gwas, save_dataset, Dataset, DatasetPaths, GenotypeCoding, GenotypeMatrix,
    SyntheticGwas,
};

fn fwerk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fwerk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fwerk(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Summary rows keyed by method: (alpha_loc, ratio_to_bonferroni).
fn summary(dir: &Path) -> Vec<(String, f64, String)> {
    fs::read_to_string(dir.join("summary.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[3].parse().unwrap(), f[6].to_string())
        })
        .collect()
}

fn independent_toy(dir: &Path) {
    let spec = SyntheticGwas {
        block_length: (1, 1),
        ..SyntheticGwas::null(200, 500, 17)
    };
    save_dataset(
        &generate_gwas(&spec).unwrap(),
        &DatasetPaths::in_dir(dir, false),
    )
    .unwrap();
}

#[test]
fn independent_toy_set_matches_sidak() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    fs::create_dir_all(&data).unwrap();
    independent_toy(&data);
    ok(&["analyze", "--data-dir", p(&data), "-o", p(&out)]);
    let rows = summary(&out);
    assert_eq!(
        rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(),
        ["bonferroni", "sidak", "order2"]
    );
    assert_eq!(rows[0].2, "1.0000");
    assert!(rows[1].2.starts_with("1.02"));
    assert!((rows[2].1 / rows[1].1 - 1.0).abs() < 1e-3, "{rows:?}");
    for name in ["statistics.tsv", "neighbor_correlation.tsv", "run.log"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let stats = fs::read_to_string(out.join("statistics.tsv")).unwrap();
    assert_eq!(stats.lines().count(), 501);
    assert!(stats.starts_with(
        "#marker_id\tposition\tt\tp\tp_adj_bonferroni\tp_adj_sidak\tp_adj_order2\treject_"
    ));
    let hist = fs::read_to_string(out.join("neighbor_correlation.tsv")).unwrap();
    let total: usize = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 499);
}

#[test]
fn duplicated_blocks_raise_order2_level() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    fs::create_dir_all(&data).unwrap();
    let base = generate_gwas(&SyntheticGwas {
        block_length: (1, 1),
        ..SyntheticGwas::null(200, 100, 4)
    })
    .unwrap();
    let mut values = Vec::new();
    for j in 0..100 {
        for _ in 0..5 {
            values.extend_from_slice(base.genotypes().column(j));
        }
    }
    let g = GenotypeMatrix::from_dense(200, 500, values, GenotypeCoding::Additive).unwrap();
    let ds = Dataset::intercept_only(base.phenotype().to_vec(), g).unwrap();
    save_dataset(&ds, &DatasetPaths::in_dir(&data, false)).unwrap();
    ok(&["analyze", "--data-dir", p(&data), "-o", p(&out)]);
    let rows = summary(&out);
    let ratio: f64 = rows[2].2.parse().unwrap();
    assert!(ratio > 1.05, "{rows:?}");
}

#[test]
fn bonferroni_for_a_large_independent_family() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "analyze",
        "--markers",
        "672972",
        "--methods",
        "bonferroni",
        "-o",
        p(tmp.path()),
    ]);
    assert!(stdout.contains("bonferroni\t7.4297e-8"), "{stdout}");
    assert!(!tmp.path().join("statistics.tsv").exists());
    let rows = summary(tmp.path());
    assert_eq!(format!("{:.2e}", rows[0].1), "7.43e-8");
}

#[test]
fn ar1_rows_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "simulate",
        "--ar1",
        "--rho",
        "0",
        "-m",
        "100",
        "--mc-samples",
        "2000",
        "-o",
        p(tmp.path()),
    ]);
    let text = fs::read_to_string(tmp.path().join("ar1.tsv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(2)
        .unwrap()
        .split('\t')
        .map(|v| v.parse().unwrap())
        .collect();
    let sidak = row[2];
    for v in &row[3..8] {
        assert!((v - sidak).abs() < 1e-6 * sidak, "{row:?}");
    }

    let grid_dir = tmp.path().join("grid");
    ok(&[
        "simulate",
        "--ar1",
        "--rho-grid",
        "0:0.95:0.05",
        "-m",
        "100",
        "-o",
        p(&grid_dir),
    ]);
    let text = fs::read_to_string(grid_dir.join("ar1.tsv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 20);
    for line in rows {
        let v: Vec<f64> = line
            .split('\t')
            .take(7)
            .map(|x| x.parse().unwrap())
            .collect();
        assert!(
            v[1] <= v[2] && v[3..7].windows(2).all(|w| w[0] <= w[1]),
            "{line}"
        );
    }
}

#[test]
fn null_calibration_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "simulate",
        "--null-calibration",
        "-n",
        "200",
        "-m",
        "100",
        "--replicates",
        "100",
        "-o",
        p(tmp.path()),
    ]);
    assert!(stdout.contains("within bound"), "{stdout}");
    let text = fs::read_to_string(tmp.path().join("calibration.tsv")).unwrap();
    assert!(text.starts_with("#replicates\trejections\tfwer"));
}

fn strip_runtime(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once('\t').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn identical_runs_give_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    independent_toy(&data);
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for out in &runs {
        ok(&[
            "analyze",
            "--data-dir",
            p(&data),
            "--methods",
            "sidak,order3,maxt",
            "-b",
            "200",
            "--seed",
            "5",
            "-o",
            p(out),
        ]);
    }
    for name in ["statistics.tsv", "neighbor_correlation.tsv"] {
        let a = fs::read(runs[0].join(name)).unwrap();
        let b = fs::read(runs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    // the log records the output directory, which is the only intended difference
    let log = |i: usize| {
        fs::read_to_string(runs[i].join("run.log"))
            .unwrap()
            .replace(p(&runs[i]), "OUT")
    };
    assert_eq!(log(0), log(1));
    let a = strip_runtime(&fs::read_to_string(runs[0].join("summary.tsv")).unwrap());
    let b = strip_runtime(&fs::read_to_string(runs[1].join("summary.tsv")).unwrap());
    assert_eq!(a, b);
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = fwerk(&[
        "analyze",
        "--data-dir",
        "/nonexistent/dir",
        "-o",
        p(tmp.path()),
    ]);
    assert_eq!(missing.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("I/O error"));
    let bad_alpha = fwerk(&[
        "analyze",
        "--markers",
        "10",
        "--alpha",
        "1.5",
        "-o",
        p(tmp.path()),
    ]);
    assert_eq!(bad_alpha.status.code(), Some(3));
    let too_wide = fwerk(&[
        "analyze",
        "--markers",
        "10",
        "--methods",
        "order4",
        "--bandwidth",
        "3",
        "-o",
        p(tmp.path()),
    ]);
    assert_eq!(too_wide.status.code(), Some(3));
    let usage = fwerk(&["analyze", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));
    let nothing = fwerk(&["simulate", "-o", p(tmp.path())]);
    assert_eq!(nothing.status.code(), Some(3));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "alpha = 0.1\nmethods = [\"bonferroni\"]\nseed = 9\n").unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "analyze",
        "--config",
        p(&cfg),
        "--markers",
        "100",
        "--alpha",
        "0.05",
        "-o",
        p(&out),
    ]);
    let log = fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("alpha = 0.05"), "{log}");
    assert!(log.contains("seed = 9"));
    assert!(log.starts_with("# fwerk "));
    let rows = summary(&out);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].1 - 5e-4).abs() < 1e-15);
    fs::write(&cfg, "alpah = 0.1\n").unwrap();
    assert_eq!(
        fwerk(&["analyze", "--config", p(&cfg), "--markers", "10"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn band_file_and_pvalues_reproduce_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let spec = SyntheticGwas {
        block_length: (3, 6),
        ..SyntheticGwas::null(300, 150, 2)
    };
    save_dataset(
        &generate_gwas(&spec).unwrap(),
        &DatasetPaths::in_dir(&data, false),
    )
    .unwrap();
    let (full, corr, pv) = (
        tmp.path().join("full"),
        tmp.path().join("corr"),
        tmp.path().join("pv"),
    );
    ok(&[
        "analyze",
        "--data-dir",
        p(&data),
        "--methods",
        "order3",
        "-o",
        p(&full),
    ]);
    ok(&[
        "corr",
        "--data-dir",
        p(&data),
        "--bandwidth",
        "3",
        "-o",
        p(&corr),
    ]);
    let stats = fs::read_to_string(full.join("statistics.tsv")).unwrap();
    let table: String = stats
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            format!("{}\t{}\t{}\n", f[0], f[3], f[1])
        })
        .collect();
    let pfile = tmp.path().join("p.tsv");
    fs::write(&pfile, format!("#marker_id\tp\tposition\n{table}")).unwrap();
    ok(&[
        "analyze",
        "--pvalues",
        p(&pfile),
        "--band",
        p(&corr.join("band.tsv")),
        "--methods",
        "order3",
        "-o",
        p(&pv),
    ]);
    assert_eq!(summary(&full)[0].1, summary(&pv)[0].1);
    let adj = |dir: &Path| -> Vec<String> {
        fs::read_to_string(dir.join("statistics.tsv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split('\t').rev().nth(1).unwrap().to_string())
            .collect()
    };
    assert_eq!(adj(&full), adj(&pv));
}

#[test]
fn maxt_command_writes_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    independent_toy(&data);
    let out = tmp.path().join("out");
    ok(&[
        "maxt",
        "--data-dir",
        p(&data),
        "-b",
        "1000",
        "--write-samples",
        "-o",
        p(&out),
    ]);
    let text = fs::read_to_string(out.join("maxt.tsv")).unwrap();
    let f: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    let (a, lo, hi): (f64, f64, f64) = (
        f[4].parse().unwrap(),
        f[11].parse().unwrap(),
        f[12].parse().unwrap(),
    );
    assert!(lo <= a && a <= hi, "{text}");
    assert_eq!(
        fs::read_to_string(out.join("max_stats.tsv"))
            .unwrap()
            .lines()
            .count(),
        1001
    );
    assert_eq!(summary(&out)[0].0, "maxt");
}
