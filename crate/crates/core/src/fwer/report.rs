//! TSV writers for FWER summaries and adjusted p-values.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::{bonferroni, cutoff, m_eff, FwerResult};
use crate::error::{Error, Result};

/// A way of choosing the local significance level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Bonferroni,
    Sidak,
    /// Product-type approximation of the given order.
    Order(usize),
    /// Permutation estimate of the max-statistic cutoff.
    MaxT,
    /// Randomized estimate of the full joint probability.
    FullJoint,
}

impl Method {
    /// Approximation order, where one applies (Šidák is order 1).
    pub fn order(self) -> Option<usize> {
        match self {
            Method::Sidak => Some(1),
            Method::Order(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Bonferroni => f.write_str("bonferroni"),
            Method::Sidak => f.write_str("sidak"),
            Method::Order(k) => write!(f, "order{k}"),
            Method::MaxT => f.write_str("maxt"),
            Method::FullJoint => f.write_str("full-joint"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "bonferroni" => Ok(Method::Bonferroni),
            "sidak" => Ok(Method::Sidak),
            "maxt" => Ok(Method::MaxT),
            "full-joint" | "fulljoint" | "mc" => Ok(Method::FullJoint),
            _ => s
                .strip_prefix("order")
                .map(|k| k.trim_start_matches(['-', '_']))
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(Method::Order)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }
}

/// One line of the summary report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub alpha: f64,
    pub alpha_loc: f64,
    pub c: f64,
    pub m_eff: f64,
    /// `α_loc / (α/m)`.
    pub ratio_to_bonferroni: f64,
    pub runtime_secs: f64,
}

impl ReportRow {
    /// Row for a local level found by any method.
    pub fn new(
        method: Method,
        m: usize,
        alpha: f64,
        alpha_loc: f64,
        runtime_secs: f64,
    ) -> Result<Self> {
        Ok(ReportRow {
            method,
            alpha,
            alpha_loc,
            c: cutoff(alpha_loc)?,
            m_eff: m_eff(alpha, alpha_loc),
            ratio_to_bonferroni: alpha_loc / bonferroni(m, alpha),
            runtime_secs,
        })
    }

    pub fn from_result(method: Method, m: usize, r: &FwerResult, runtime_secs: f64) -> Self {
        ReportRow {
            method,
            alpha: r.alpha,
            alpha_loc: r.alpha_loc,
            c: r.c,
            m_eff: r.m_eff,
            ratio_to_bonferroni: r.alpha_loc / bonferroni(m, r.alpha),
            runtime_secs,
        }
    }
}

pub const REPORT_HEADER: &str =
    "#method\torder\talpha\talpha_loc\tc\tm_eff\tratio_to_bonferroni\truntime_s";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Summary TSV, one row per method.
pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{REPORT_HEADER}").map_err(io)?;
    for r in rows {
        let order = r
            .method
            .order()
            .map_or_else(|| "NA".to_string(), |k| k.to_string());
        writeln!(
            w,
            "{}\t{order}\t{}\t{:.6e}\t{:.6}\t{:.2}\t{:.4}\t{:.3}",
            r.method, r.alpha, r.alpha_loc, r.c, r.m_eff, r.ratio_to_bonferroni, r.runtime_secs
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Two-column TSV of marker ids and adjusted p-values.
pub fn write_adjusted(ids: &[String], adjusted: &[f64], path: &Path) -> Result<()> {
    if ids.len() != adjusted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} marker ids for {} p-values",
            ids.len(),
            adjusted.len()
        )));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "#marker_id\tp_adj").map_err(io)?;
    for (id, p) in ids.iter().zip(adjusted) {
        writeln!(w, "{id}\t{p:e}").map_err(io)?;
    }
    w.flush().map_err(io)
}
