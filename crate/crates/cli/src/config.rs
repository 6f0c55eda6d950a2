//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fwerk_core::{CorrelationMode, Error, Family, Method};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // inputs
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phenotype: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub genotypes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pvalues: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<PathBuf>,
    /// Levels only, for this many independent markers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markers: Option<usize>,
    pub family: String,
    pub methods: Vec<String>,
    pub k: usize,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
    pub correlation_mode: String,
    pub block_threshold: f64,
    pub permutations: usize,
    pub confidence: f64,
    pub write_samples: bool,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    // simulation
    pub ar1: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<String>,
    pub orders: Vec<usize>,
    pub mc_samples: usize,
    pub null_calibration: bool,
    pub gwas: bool,
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    pub block_length: (usize, usize),
    pub within_block_rho: f64,
    pub chromosomes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            phenotype: None,
            covariates: None,
            genotypes: None,
            pvalues: None,
            band: None,
            strata: None,
            markers: None,
            family: "logistic".into(),
            methods: vec!["bonferroni".into(), "sidak".into(), "order".into()],
            k: 2,
            alpha: 0.05,
            bandwidth: None,
            correlation_mode: "exact".into(),
            block_threshold: 0.0,
            permutations: 10_000,
            confidence: 0.95,
            write_samples: false,
            seed: 1,
            threads: None,
            out_dir: PathBuf::from("fwerk-out"),
            ar1: false,
            rho: None,
            rho_grid: None,
            orders: vec![1, 2, 3, 4],
            mc_samples: 0,
            null_calibration: false,
            gwas: false,
            n: 500,
            m: 100,
            replicates: 200,
            block_length: (1, 10),
            within_block_rho: 0.8,
            chromosomes: 1,
        }
    }
}

fn invalid(msg: String) -> anyhow::Error {
    Error::InvalidArgument(msg).into()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| invalid(format!("config {}: {e}", path.display())))
            .with_context(|| format!("reading config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# config not serializable: {e}\n"))
    }

    pub fn family(&self) -> anyhow::Result<Family> {
        Ok(self.family.parse()?)
    }

    pub fn correlation_mode(&self) -> anyhow::Result<CorrelationMode> {
        Ok(self.correlation_mode.parse()?)
    }

    /// Requested methods; a bare `order` means order `k`.
    pub fn methods(&self) -> anyhow::Result<Vec<Method>> {
        let mut out = Vec::new();
        for name in &self.methods {
            let method = if name.trim().eq_ignore_ascii_case("order") {
                Method::Order(self.k)
            } else {
                name.parse()?
            };
            if !out.contains(&method) {
                out.push(method);
            }
        }
        if out.is_empty() {
            return Err(invalid("no methods requested".into()));
        }
        Ok(out)
    }

    /// Band width: the flag or config value, else the largest order requested (at least 2).
    pub fn bandwidth(&self, methods: &[Method]) -> usize {
        self.bandwidth.unwrap_or_else(|| {
            methods
                .iter()
                .filter_map(|m| m.order())
                .max()
                .unwrap_or(2)
                .max(2)
        })
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(1..=6).contains(&self.k) {
            return Err(invalid(format!("k must lie in 1..=6, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.confidence) {
            return Err(invalid(format!(
                "confidence must lie in [0, 1), got {}",
                self.confidence
            )));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1".into()));
        }
        let methods = self.methods()?;
        let w = self.bandwidth(&methods);
        for m in &methods {
            if let Some(k) = m.order() {
                if k > 6 {
                    return Err(Error::DimensionOutOfRange(k).into());
                }
                if k > w {
                    return Err(Error::OrderExceedsBandwidth {
                        order: k,
                        bandwidth: w,
                    }
                    .into());
                }
            }
        }
        self.family()?;
        self.correlation_mode()?;
        Ok(())
    }

    /// Input files, from explicit paths or the conventional names inside `data_dir`.
    pub fn dataset_paths(&self) -> anyhow::Result<fwerk_core::DatasetPaths> {
        let mut paths = match &self.data_dir {
            Some(dir) => fwerk_core::DatasetPaths::in_dir(dir, dir.join("covariates.tsv").exists()),
            None => fwerk_core::DatasetPaths {
                phenotype: self.phenotype.clone().ok_or_else(|| {
                    invalid("no phenotype file (use --phenotype or --data-dir)".into())
                })?,
                covariates: None,
                genotypes: self.genotypes.clone().ok_or_else(|| {
                    invalid("no genotype file (use --genotypes or --data-dir)".into())
                })?,
            },
        };
        if let Some(p) = &self.phenotype {
            paths.phenotype = p.clone();
        }
        if let Some(g) = &self.genotypes {
            paths.genotypes = g.clone();
        }
        if let Some(c) = &self.covariates {
            paths.covariates = Some(c.clone());
        }
        Ok(paths)
    }

    /// ρ values from `rho_grid` (`start:end:step` or a comma list), else `rho`, else 0.
    pub fn rho_values(&self) -> anyhow::Result<Vec<f64>> {
        match (&self.rho_grid, self.rho) {
            (Some(grid), _) => parse_grid(grid),
            (None, Some(r)) => Ok(vec![r]),
            (None, None) => Ok(vec![0.0]),
        }
    }
}

/// `start:end:step` (inclusive) or `a,b,c`.
pub fn parse_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let num = |s: &str| -> anyhow::Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| invalid(format!("bad number {s:?} in grid {text:?}")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, end, step] => {
            let (a, b, h) = (num(start)?, num(end)?, num(step)?);
            if !(h > 0.0) || b < a {
                return Err(invalid(format!(
                    "grid {text:?} needs start <= end and a positive step"
                )));
            }
            let count = ((b - a) / h + 1e-9).floor() as usize + 1;
            // round to suppress accumulated representation error in the printed values
            Ok((0..count)
                .map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12)
                .collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(invalid(format!(
            "grid {text:?} is neither start:end:step nor a list"
        ))),
    }
}
