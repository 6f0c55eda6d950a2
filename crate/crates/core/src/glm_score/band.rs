//! Banded storage of the correlation matrix of the test statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::MarkerPosition;

/// Correlations `cor(T_j, T_{j+δ})` for `1 ≤ δ < bandwidth`, with block
/// boundaries. Entries reaching across a boundary are stored as exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCorrelation {
    m: usize,
    bandwidth: usize,
    /// `band[j * (bandwidth - 1) + δ - 1]`; slots past the last marker are zero.
    band: Vec<f64>,
    /// Sorted first markers of each block; always starts with 0 when `m > 0`.
    block_starts: Vec<usize>,
}

impl BandedCorrelation {
    /// Band with all off-diagonal entries zero (independent statistics), one block.
    pub fn independent(m: usize, bandwidth: usize) -> Result<Self> {
        Self::from_fn(m, bandwidth, |_, _| 0.0)
    }

    /// Band filled from `f(j, δ)`, one block.
    pub fn from_fn(
        m: usize,
        bandwidth: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::InvalidArgument(
                "bandwidth must be at least 1".into(),
            ));
        }
        let stride = bandwidth - 1;
        let mut band = vec![0.0; m * stride];
        for j in 0..m {
            for delta in 1..bandwidth {
                if j + delta < m {
                    let v = f(j, delta);
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!(
                            "correlation ({j}, {}) = {v} outside [-1, 1]",
                            j + delta
                        )));
                    }
                    band[j * stride + delta - 1] = v;
                }
            }
        }
        Ok(BandedCorrelation {
            m,
            bandwidth,
            band,
            block_starts: if m > 0 { vec![0] } else { Vec::new() },
        })
    }

    /// Band of a dense correlation matrix, truncated to `bandwidth`.
    pub fn from_dense(matrix: &DMatrix<f64>, bandwidth: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(
                "correlation matrix is not square".into(),
            ));
        }
        Self::from_fn(matrix.nrows(), bandwidth, |j, d| matrix[(j, j + d)])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn block_starts(&self) -> &[usize] {
        &self.block_starts
    }

    /// Half-open marker ranges of the blocks, in order.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.block_starts.iter().enumerate().map(move |(i, &s)| {
            let e = self.block_starts.get(i + 1).copied().unwrap_or(self.m);
            (s, e)
        })
    }

    /// `cor(T_j, T_k)`; `None` outside the stored band.
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        let (a, b) = (j.min(k), j.max(k));
        if b >= self.m {
            return None;
        }
        let delta = b - a;
        if delta == 0 {
            return Some(1.0);
        }
        if delta >= self.bandwidth {
            return None;
        }
        Some(self.band[a * (self.bandwidth - 1) + delta - 1])
    }

    /// Stored entry `cor(T_j, T_{j+δ})` for `1 ≤ δ < bandwidth`.
    pub fn entry(&self, j: usize, delta: usize) -> f64 {
        self.band[j * (self.bandwidth - 1) + delta - 1]
    }

    /// The `size × size` correlation window starting at marker `start`.
    pub fn window(&self, start: usize, size: usize) -> Result<DMatrix<f64>> {
        if size > self.bandwidth {
            return Err(Error::OrderExceedsBandwidth {
                order: size,
                bandwidth: self.bandwidth,
            });
        }
        if start + size > self.m {
            return Err(Error::DimensionMismatch(format!(
                "window {start}..{} beyond {} markers",
                start + size,
                self.m
            )));
        }
        Ok(DMatrix::from_fn(size, size, |a, b| {
            self.get(start + a, start + b).unwrap_or(0.0)
        }))
    }

    /// Dense matrix with zeros outside the band.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |a, b| self.get(a, b).unwrap_or(0.0))
    }

    /// Replace the block structure; entries reaching across a boundary are zeroed.
    pub fn with_blocks(mut self, starts: &[usize]) -> Result<Self> {
        let mut s: Vec<usize> = starts.to_vec();
        if self.m > 0 {
            s.push(0);
        }
        s.sort_unstable();
        s.dedup();
        if let Some(&last) = s.last() {
            if last >= self.m && self.m > 0 {
                return Err(Error::InvalidArgument(format!(
                    "block start {last} beyond {} markers",
                    self.m
                )));
            }
        }
        self.block_starts = s;
        self.zero_crossings();
        Ok(self)
    }

    fn zero_crossings(&mut self) {
        let stride = self.bandwidth - 1;
        for (start, end) in self.blocks().collect::<Vec<_>>() {
            for j in start..end {
                for delta in 1..self.bandwidth {
                    if j + delta >= end {
                        self.band[j * stride + delta - 1] = 0.0;
                    }
                }
            }
        }
    }

    /// Serialize as `#m=<m> bandwidth=<w> blocks=<csv>` followed by `j δ value` rows.
    pub fn to_tsv(&self) -> String {
        let blocks: Vec<String> = self.block_starts.iter().map(|b| b.to_string()).collect();
        let mut out = format!(
            "#m={} bandwidth={} blocks={}\n",
            self.m,
            self.bandwidth,
            blocks.join(",")
        );
        for j in 0..self.m {
            for delta in 1..self.bandwidth {
                if j + delta < self.m {
                    let _ = writeln!(out, "{j}\t{delta}\t{}", self.entry(j, delta));
                }
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<band>".into(),
            line,
            message: msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "empty band file".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| bad(1, "missing #m= header".into()))?;
        let (mut m, mut w, mut blocks) = (None, None, Vec::new());
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(1, format!("bad header field {field:?}")))?;
            match k {
                "m" => m = v.parse().ok(),
                "bandwidth" => w = v.parse().ok(),
                "blocks" => {
                    blocks = v
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(1, format!("bad block list {v:?}")))?
                }
                _ => {}
            }
        }
        let m: usize = m.ok_or_else(|| bad(1, "header lacks m".into()))?;
        let w: usize = w.ok_or_else(|| bad(1, "header lacks bandwidth".into()))?;
        let mut out = Self::independent(m, w)?;
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(idx + 1, format!("expected 3 fields, got {}", f.len())));
            }
            let j: usize = f[0]
                .parse()
                .map_err(|_| bad(idx + 1, "bad marker index".into()))?;
            let delta: usize = f[1]
                .parse()
                .map_err(|_| bad(idx + 1, "bad offset".into()))?;
            let v: f64 = f[2].parse().map_err(|_| bad(idx + 1, "bad value".into()))?;
            if delta == 0 || delta >= w || j + delta >= m {
                return Err(bad(
                    idx + 1,
                    format!("entry ({j}, {delta}) outside the band"),
                ));
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(bad(idx + 1, format!("correlation {v} outside [-1, 1]")));
            }
            out.band[j * (w - 1) + delta - 1] = v;
        }
        out.with_blocks(&blocks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }
}

/// Insert block boundaries at every chromosome change and, when `threshold`
/// is positive, at every cut where all band entries reaching across it are
/// below `threshold` in absolute value. Existing boundaries are kept.
pub fn detect_blocks(
    band: &BandedCorrelation,
    positions: &[MarkerPosition],
    threshold: f64,
) -> Result<BandedCorrelation> {
    let m = band.m();
    if positions.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} positions for {m} markers",
            positions.len()
        )));
    }
    let mut starts: Vec<usize> = band.block_starts().to_vec();
    for cut in 1..m {
        if positions[cut].chrom != positions[cut - 1].chrom {
            starts.push(cut);
            continue;
        }
        if threshold > 0.0 {
            let lo = cut.saturating_sub(band.bandwidth() - 1);
            let all_small = (lo..cut).all(|a| {
                (cut..m.min(a + band.bandwidth()))
                    .all(|b| band.get(a, b).map_or(true, |v| v.abs() < threshold))
            });
            if all_small {
                starts.push(cut);
            }
        }
    }
    band.clone().with_blocks(&starts)
}
