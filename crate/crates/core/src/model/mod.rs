//! Data container for an association study: phenotype, environmental
//! covariates (always with an intercept), and a genotype matrix with a
//! missingness mask.

mod io;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, DatasetPaths};

/// Canonical-link GLM family of the phenotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Gaussian response, identity link, dispersion estimated.
    NormalIdentity,
    /// Binary response, logit link, dispersion fixed at one.
    BernoulliLogit,
}

impl Family {
    pub fn dispersion_known(self) -> bool {
        matches!(self, Family::BernoulliLogit)
    }

    /// Mean function `b'(η)`.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::NormalIdentity => eta,
            Family::BernoulliLogit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Variance function `b''(η)` expressed in the mean.
    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::NormalIdentity => 1.0,
            Family::BernoulliLogit => mu * (1.0 - mu),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" | "normal-identity" | "gaussian" => Ok(Family::NormalIdentity),
            "logistic" | "bernoulli-logit" | "binomial" => Ok(Family::BernoulliLogit),
            _ => Err(Error::InvalidArgument(format!("unknown family {s:?}"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::NormalIdentity => "normal-identity",
            Family::BernoulliLogit => "bernoulli-logit",
        })
    }
}

/// How genotype values are checked on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenotypeCoding {
    /// Additive allele counts; every observed value must be 0, 1 or 2.
    #[default]
    Additive,
    /// Any finite real value (already coded or imputed upstream).
    PreCoded,
}

/// Genomic coordinate of a marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerPosition {
    pub chrom: String,
    pub bp: u64,
}

impl std::fmt::Display for MarkerPosition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.chrom, self.bp)
    }
}

impl std::str::FromStr for MarkerPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (chrom, bp) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("position {s:?} is not chrom:bp")))?;
        let bp = bp
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("position {s:?} has a bad base-pair")))?;
        if chrom.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "position {s:?} has no chromosome"
            )));
        }
        Ok(MarkerPosition {
            chrom: chrom.to_string(),
            bp,
        })
    }
}

/// `n × m` genotype matrix stored column-major, with a missingness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
    coding: GenotypeCoding,
}

impl GenotypeMatrix {
    /// Build from column-major entries (`None` is missing).
    pub fn from_columns(
        n: usize,
        m: usize,
        entries: Vec<Option<f64>>,
        coding: GenotypeCoding,
    ) -> Result<Self> {
        if entries.len() != n * m {
            return Err(Error::DimensionMismatch(format!(
                "{} genotype entries for a {n}x{m} matrix",
                entries.len()
            )));
        }
        let mut values = Vec::with_capacity(n * m);
        let mut missing = Vec::with_capacity(n * m);
        for (idx, e) in entries.into_iter().enumerate() {
            match e {
                Some(v) => {
                    let ok = match coding {
                        GenotypeCoding::Additive => v == 0.0 || v == 1.0 || v == 2.0,
                        GenotypeCoding::PreCoded => v.is_finite(),
                    };
                    if !ok {
                        return Err(Error::InvalidGenotype {
                            marker: idx / n.max(1),
                            value: v,
                        });
                    }
                    values.push(v);
                    missing.push(false);
                }
                None => {
                    values.push(0.0);
                    missing.push(true);
                }
            }
        }
        Ok(GenotypeMatrix {
            n,
            m,
            values,
            missing,
            coding,
        })
    }

    /// Build a complete matrix from dense column-major values.
    pub fn from_dense(
        n: usize,
        m: usize,
        values: Vec<f64>,
        coding: GenotypeCoding,
    ) -> Result<Self> {
        Self::from_columns(n, m, values.into_iter().map(Some).collect(), coding)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.m
    }

    pub fn coding(&self) -> GenotypeCoding {
        self.coding
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = j * self.n + i;
        (!self.missing[k]).then_some(self.values[k])
    }

    /// Column values; missing slots hold 0 and must be masked by the caller.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn column_missing(&self, j: usize) -> &[bool] {
        &self.missing[j * self.n..(j + 1) * self.n]
    }

    pub fn missing_count(&self, j: usize) -> usize {
        self.column_missing(j).iter().filter(|&&b| b).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&b| b)
    }
}

/// Per-marker record of mean imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationReport {
    /// Number of entries filled in, per marker.
    pub imputed: Vec<usize>,
    /// Mean of the observed entries, per marker (the fill value).
    pub values: Vec<f64>,
}

impl ImputationReport {
    pub fn total(&self) -> usize {
        self.imputed.iter().sum()
    }
}

/// A validated association data set `(Y, X_e, X_g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    phenotype: Vec<f64>,
    covariates: DMatrix<f64>,
    genotypes: GenotypeMatrix,
    marker_ids: Vec<String>,
    positions: Vec<MarkerPosition>,
}

impl Dataset {
    /// Validate and assemble a data set. `covariates` must carry the all-ones
    /// intercept as its first column.
    pub fn new(
        phenotype: Vec<f64>,
        covariates: DMatrix<f64>,
        genotypes: GenotypeMatrix,
        marker_ids: Vec<String>,
        positions: Vec<MarkerPosition>,
    ) -> Result<Self> {
        let n = phenotype.len();
        let m = genotypes.ncols();
        if n == 0 {
            return Err(Error::InvalidPhenotype("no individuals".into()));
        }
        if covariates.nrows() != n || genotypes.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} phenotype values, {} covariate rows, {} genotype rows",
                covariates.nrows(),
                genotypes.nrows()
            )));
        }
        if marker_ids.len() != m || positions.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} markers, {} ids, {} positions",
                marker_ids.len(),
                positions.len()
            )));
        }
        if let Some(i) = phenotype.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidPhenotype(format!(
                "non-finite value at row {}",
                i + 1
            )));
        }
        validate_covariates(&covariates)?;
        for j in 0..m {
            let mask = genotypes.column_missing(j);
            let col = genotypes.column(j);
            let mut observed = col
                .iter()
                .zip(mask)
                .filter(|(_, &miss)| !miss)
                .map(|(v, _)| *v);
            let first = observed.next().ok_or(Error::AllMissingMarker(j))?;
            if observed.all(|v| v == first) {
                return Err(Error::ConstantMarker(j));
            }
        }
        validate_positions(&positions)?;
        Ok(Dataset {
            phenotype,
            covariates,
            genotypes,
            marker_ids,
            positions,
        })
    }

    /// Data set with intercept-only covariates and default marker labels
    /// (`m1`, `m2`, …, all on chromosome 1 at consecutive positions).
    pub fn intercept_only(phenotype: Vec<f64>, genotypes: GenotypeMatrix) -> Result<Self> {
        Self::with_covariates(phenotype, None, genotypes)
    }

    /// Data set whose covariates are an intercept followed by `extra` (if any),
    /// with default marker labels.
    pub fn with_covariates(
        phenotype: Vec<f64>,
        extra: Option<&DMatrix<f64>>,
        genotypes: GenotypeMatrix,
    ) -> Result<Self> {
        let n = phenotype.len();
        let m = genotypes.ncols();
        let covariates = with_intercept(n, extra)?;
        let ids = (1..=m).map(|j| format!("m{j}")).collect();
        let positions = (1..=m)
            .map(|j| MarkerPosition {
                chrom: "1".into(),
                bp: j as u64,
            })
            .collect();
        Self::new(phenotype, covariates, genotypes, ids, positions)
    }

    /// Same data set with markers relabelled.
    pub fn with_markers(
        self,
        marker_ids: Vec<String>,
        positions: Vec<MarkerPosition>,
    ) -> Result<Self> {
        Self::new(
            self.phenotype,
            self.covariates,
            self.genotypes,
            marker_ids,
            positions,
        )
    }

    /// Same covariates and genotypes with a different response vector.
    pub fn with_phenotype(&self, phenotype: Vec<f64>) -> Result<Self> {
        if phenotype.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} phenotype values for {} individuals",
                phenotype.len(),
                self.n()
            )));
        }
        if let Some(i) = phenotype.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidPhenotype(format!(
                "non-finite value at row {}",
                i + 1
            )));
        }
        Ok(Dataset {
            phenotype,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.phenotype.len()
    }

    /// Number of environmental covariates including the intercept.
    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn m(&self) -> usize {
        self.genotypes.ncols()
    }

    pub fn phenotype(&self) -> &[f64] {
        &self.phenotype
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn genotypes(&self) -> &GenotypeMatrix {
        &self.genotypes
    }

    pub fn marker_ids(&self) -> &[String] {
        &self.marker_ids
    }

    pub fn positions(&self) -> &[MarkerPosition] {
        &self.positions
    }

    /// True when the only environmental covariate is the intercept.
    pub fn is_intercept_only(&self) -> bool {
        self.d() == 1
    }
}

/// Prepend the intercept column to optional extra covariates.
pub fn with_intercept(n: usize, extra: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match extra {
        None => Ok(DMatrix::from_element(n, 1, 1.0)),
        Some(x) => {
            if x.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} covariate rows for {n} individuals",
                    x.nrows()
                )));
            }
            let mut full = DMatrix::from_element(n, x.ncols() + 1, 1.0);
            full.columns_mut(1, x.ncols()).copy_from(x);
            Ok(full)
        }
    }
}

fn validate_covariates(x: &DMatrix<f64>) -> Result<()> {
    let (n, d) = x.shape();
    if d == 0 || x.column(0).iter().any(|&v| v != 1.0) {
        return Err(Error::MissingIntercept);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "environmental covariates contain non-finite values".into(),
        ));
    }
    if d > n.saturating_sub(1) {
        return Err(Error::TooFewIndividuals { n, d });
    }
    // Column scaling keeps the rank decision independent of covariate units.
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let tol = max * (n.max(d) as f64) * f64::EPSILON * 16.0;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < d {
        return Err(Error::RankDeficientCovariates { rank, d });
    }
    Ok(())
}

fn validate_positions(positions: &[MarkerPosition]) -> Result<()> {
    let mut finished: Vec<&str> = Vec::new();
    for j in 1..positions.len() {
        let (prev, cur) = (&positions[j - 1], &positions[j]);
        if prev.chrom == cur.chrom {
            if cur.bp < prev.bp {
                return Err(Error::UnorderedPositions(j));
            }
        } else {
            finished.push(&prev.chrom);
            if finished.contains(&cur.chrom.as_str()) {
                return Err(Error::UnorderedPositions(j));
            }
        }
    }
    Ok(())
}

/// Replace each missing genotype by the mean of the observed entries of its marker.
pub fn impute_missing(dataset: &Dataset) -> Result<(Dataset, ImputationReport)> {
    let g = &dataset.genotypes;
    let (n, m) = (g.nrows(), g.ncols());
    let mut values = g.values.clone();
    let mut imputed = Vec::with_capacity(m);
    let mut means = Vec::with_capacity(m);
    for j in 0..m {
        let col = g.column(j);
        let mask = g.column_missing(j);
        let (sum, count) = col
            .iter()
            .zip(mask)
            .filter(|(_, &miss)| !miss)
            .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
        if count == 0 {
            return Err(Error::AllMissingMarker(j));
        }
        let mean = sum / count as f64;
        for i in 0..n {
            if mask[i] {
                values[j * n + i] = mean;
            }
        }
        imputed.push(n - count);
        means.push(mean);
    }
    let coding = if imputed.iter().any(|&c| c > 0) {
        GenotypeCoding::PreCoded
    } else {
        g.coding
    };
    let genotypes = GenotypeMatrix {
        n,
        m,
        values,
        missing: vec![false; n * m],
        coding,
    };
    let out = Dataset {
        genotypes,
        ..dataset.clone()
    };
    Ok((
        out,
        ImputationReport {
            imputed,
            values: means,
        },
    ))
}
