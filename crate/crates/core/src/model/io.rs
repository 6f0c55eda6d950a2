//! Plain-text readers and writers for the three input tables.
//!
//! * phenotype: one value per line;
//! * covariates: tab-separated, one row per individual, no intercept column,
//!   `#` lines ignored;
//! * genotypes: tab-separated, one row per individual, tokens `0|1|2|NA`,
//!   with optional `#id` and `#pos` header lines naming the markers
//!   (`#id<TAB>rs1<TAB>rs2…`, `#pos<TAB>1:1200<TAB>1:1350…`).
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{with_intercept, Dataset, GenotypeCoding, GenotypeMatrix, MarkerPosition};
use crate::error::{Error, Result};

/// File locations of a data set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub phenotype: PathBuf,
    pub covariates: Option<PathBuf>,
    pub genotypes: PathBuf,
}

impl DatasetPaths {
    /// Conventional names inside a directory: `phenotype.txt`, `covariates.tsv`, `genotypes.tsv`.
    pub fn in_dir(dir: &Path, with_covariates: bool) -> Self {
        DatasetPaths {
            phenotype: dir.join("phenotype.txt"),
            covariates: with_covariates.then(|| dir.join("covariates.tsv")),
            genotypes: dir.join("genotypes.tsv"),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_real(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_error(path, line, format!("not a number: {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite value {token:?}"),
        ));
    }
    Ok(v)
}

fn read_phenotype(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_real(path, idx + 1, t)?);
    }
    Ok(out)
}

fn read_covariates(path: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim_end();
        if t.trim().is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split('\t')
            .map(|tok| parse_real(path, idx + 1, tok.trim()))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    path,
                    idx + 1,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

struct GenotypeTable {
    n: usize,
    m: usize,
    entries: Vec<Option<f64>>,
    ids: Option<Vec<String>>,
    positions: Option<Vec<MarkerPosition>>,
}

fn read_genotypes(path: &Path, coding: GenotypeCoding) -> Result<GenotypeTable> {
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut ids = None;
    let mut positions = None;
    for (idx, line) in open(path)?.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim_end();
        if t.trim().is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            let mut fields = rest.split('\t');
            match fields.next().map(str::trim) {
                Some("id") => ids = Some(fields.map(|s| s.trim().to_string()).collect::<Vec<_>>()),
                Some("pos") => {
                    positions = Some(
                        fields
                            .map(|s| s.trim().parse::<MarkerPosition>())
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| parse_error(path, lineno, e.to_string()))?,
                    )
                }
                _ => {}
            }
            continue;
        }
        let row = t
            .split('\t')
            .enumerate()
            .map(|(j, tok)| {
                let tok = tok.trim();
                if tok == "NA" {
                    return Ok(None);
                }
                let v = match coding {
                    GenotypeCoding::Additive => match tok {
                        "0" => 0.0,
                        "1" => 1.0,
                        "2" => 2.0,
                        _ => {
                            return Err(parse_error(
                                path,
                                lineno,
                                format!("invalid genotype value {tok:?} for marker {}", j + 1),
                            ))
                        }
                    },
                    GenotypeCoding::PreCoded => parse_real(path, lineno, tok)?,
                };
                Ok(Some(v))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("{} genotype columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    for (what, len) in [
        ("#id", ids.as_ref().map(Vec::len)),
        ("#pos", positions.as_ref().map(Vec::len)),
    ] {
        if let Some(len) = len {
            if len != m {
                return Err(Error::DimensionMismatch(format!(
                    "{what} header names {len} markers, rows have {m}"
                )));
            }
        }
    }
    let mut entries = Vec::with_capacity(n * m);
    for j in 0..m {
        for row in &rows {
            entries.push(row[j]);
        }
    }
    Ok(GenotypeTable {
        n,
        m,
        entries,
        ids,
        positions,
    })
}

/// Read and validate a data set. Without a covariate file the model is intercept-only.
pub fn load_dataset(paths: &DatasetPaths, coding: GenotypeCoding) -> Result<Dataset> {
    let phenotype = read_phenotype(&paths.phenotype)?;
    let n = phenotype.len();
    let extra = match &paths.covariates {
        Some(p) => {
            let x = read_covariates(p)?;
            if x.nrows() == 0 {
                // an empty file means intercept-only
                None
            } else if x.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} covariate rows for {n} phenotype values",
                    x.nrows()
                )));
            } else {
                Some(x)
            }
        }
        None => None,
    };
    let table = read_genotypes(&paths.genotypes, coding)?;
    if table.n != n {
        return Err(Error::DimensionMismatch(format!(
            "{} genotype rows for {n} phenotype values",
            table.n
        )));
    }
    let genotypes = GenotypeMatrix::from_columns(table.n, table.m, table.entries, coding)?;
    let covariates = with_intercept(n, extra.as_ref())?;
    let m = table.m;
    let ids = table
        .ids
        .unwrap_or_else(|| (1..=m).map(|j| format!("m{j}")).collect());
    let positions = table.positions.unwrap_or_else(|| {
        (1..=m)
            .map(|j| MarkerPosition {
                chrom: "1".into(),
                bp: j as u64,
            })
            .collect()
    });
    Dataset::new(phenotype, covariates, genotypes, ids, positions)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Write a data set. Covariates are written without the intercept column;
/// the covariate file is skipped when `paths.covariates` is `None`.
pub fn save_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    let p = &paths.phenotype;
    let mut w = create(p)?;
    for y in dataset.phenotype() {
        writeln!(w, "{y}").map_err(|e| Error::io(p, e))?;
    }
    w.flush().map_err(|e| Error::io(p, e))?;

    if let Some(p) = &paths.covariates {
        let x = dataset.covariates();
        let mut w = create(p)?;
        for i in 0..x.nrows() {
            let row: Vec<String> = (1..x.ncols()).map(|j| x[(i, j)].to_string()).collect();
            writeln!(w, "{}", row.join("\t")).map_err(|e| Error::io(p, e))?;
        }
        w.flush().map_err(|e| Error::io(p, e))?;
    }

    let p = &paths.genotypes;
    let g = dataset.genotypes();
    let mut w = create(p)?;
    writeln!(w, "#id\t{}", dataset.marker_ids().join("\t")).map_err(|e| Error::io(p, e))?;
    let pos: Vec<String> = dataset.positions().iter().map(|q| q.to_string()).collect();
    writeln!(w, "#pos\t{}", pos.join("\t")).map_err(|e| Error::io(p, e))?;
    let mut line = String::new();
    for i in 0..g.nrows() {
        line.clear();
        for j in 0..g.ncols() {
            if j > 0 {
                line.push('\t');
            }
            match g.get(i, j) {
                Some(v) => line.push_str(&v.to_string()),
                None => line.push_str("NA"),
            }
        }
        writeln!(w, "{line}").map_err(|e| Error::io(p, e))?;
    }
    w.flush().map_err(|e| Error::io(p, e))
}
