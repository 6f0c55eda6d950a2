//! Run log, table writers and the small input tables read only by the CLI.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fwerk_core::{BandedCorrelation, Error, MarkerPosition, Method};

/// Width of a neighbor-correlation histogram bin.
pub const HIST_BIN: f64 = 0.02;

/// `run.log` in the output directory; every line is also sent to the logger.
pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join("run.log");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunLog {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn line(&mut self, text: impl AsRef<str>) -> anyhow::Result<()> {
        let text = text.as_ref();
        log::info!("{text}");
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))?)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Counts of lag-1 correlations in bins of width [`HIST_BIN`] over `[-1, 1]`.
pub fn neighbor_histogram(band: &BandedCorrelation) -> Vec<usize> {
    let bins = (2.0 / HIST_BIN).round() as usize;
    let mut counts = vec![0; bins];
    if band.bandwidth() < 2 {
        return counts;
    }
    for j in 1..band.m() {
        let r = band.entry(j - 1, 1);
        let i = (((r + 1.0) / HIST_BIN).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

pub fn histogram_tsv(counts: &[usize]) -> String {
    let mut out = String::from("#bin_lo\tbin_hi\tcount\n");
    for (i, c) in counts.iter().enumerate() {
        let lo = -1.0 + i as f64 * HIST_BIN;
        out.push_str(&format!("{lo:.2}\t{:.2}\t{c}\n", lo + HIST_BIN));
    }
    out
}

/// Per-method columns of the statistics table.
#[derive(Debug, Clone)]
pub struct MethodColumn {
    pub method: Method,
    pub alpha_loc: f64,
    pub adjusted: Vec<f64>,
}

/// `#marker_id position t p p_adj_<method>… reject_<method>…`; `t` is optional.
pub fn write_statistics(
    path: &Path,
    ids: &[String],
    positions: Option<&[MarkerPosition]>,
    t: Option<&[f64]>,
    p: &[f64],
    columns: &[MethodColumn],
) -> anyhow::Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let mut header = String::from("#marker_id\tposition");
    if t.is_some() {
        header.push_str("\tt");
    }
    header.push_str("\tp");
    for c in columns {
        header.push_str(&format!("\tp_adj_{}", c.method));
    }
    for c in columns {
        header.push_str(&format!("\treject_{}", c.method));
    }
    writeln!(w, "{header}").map_err(io)?;
    for j in 0..ids.len() {
        let pos = positions.map_or_else(|| "NA".to_string(), |ps| ps[j].to_string());
        let mut line = format!("{}\t{pos}", ids[j]);
        if let Some(t) = t {
            line.push_str(&format!("\t{:.6}", t[j]));
        }
        line.push_str(&format!("\t{:e}", p[j]));
        for c in columns {
            line.push_str(&format!("\t{:e}", c.adjusted[j]));
        }
        for c in columns {
            line.push_str(if p[j] <= c.alpha_loc { "\t1" } else { "\t0" });
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn lines(path: &Path) -> anyhow::Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i + 1, t.to_string()));
        }
    }
    Ok(out)
}

fn parse_error(path: &Path, line: usize, message: String) -> anyhow::Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
    .into()
}

/// P-value table: `marker_id<TAB>p[<TAB>chrom:bp]`.
pub struct PValueTable {
    pub ids: Vec<String>,
    pub p: Vec<f64>,
    pub positions: Option<Vec<MarkerPosition>>,
}

pub fn read_pvalues(path: &Path) -> anyhow::Result<PValueTable> {
    let mut ids = Vec::new();
    let mut p = Vec::new();
    let mut positions = Vec::new();
    for (line, text) in lines(path)? {
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_error(
                path,
                line,
                format!("expected 2 or 3 fields, got {}", fields.len()),
            ));
        }
        let v: f64 = fields[1]
            .parse()
            .map_err(|_| parse_error(path, line, format!("not a p-value: {:?}", fields[1])))?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(parse_error(
                path,
                line,
                format!("p-value {v} outside (0, 1]"),
            ));
        }
        ids.push(fields[0].to_string());
        p.push(v);
        if let Some(pos) = fields.get(2) {
            positions.push(
                pos.parse()
                    .map_err(|e: Error| parse_error(path, line, e.to_string()))?,
            );
        }
    }
    if ids.is_empty() {
        return Err(parse_error(path, 0, "no p-values".into()));
    }
    let positions = match positions.len() {
        0 => None,
        n if n == ids.len() => Some(positions),
        _ => {
            return Err(parse_error(
                path,
                0,
                "positions given for some markers only".into(),
            ))
        }
    };
    Ok(PValueTable { ids, p, positions })
}

/// One non-negative integer stratum label per line.
pub fn read_strata(path: &Path) -> anyhow::Result<Vec<usize>> {
    lines(path)?
        .into_iter()
        .map(|(line, t)| {
            t.parse()
                .map_err(|_| parse_error(path, line, format!("not a stratum label: {t:?}")))
        })
        .collect()
}
