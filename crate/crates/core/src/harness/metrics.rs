use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::norms::NormSpec;

/// One logged step of a run. Per-spec vectors follow the order of the
/// tracked specs.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub t: u64,
    pub eta: f64,
    pub loss: f64,
    pub proxy: f64,
    /// `G/L`; `None` once the loss underflows to zero.
    pub proxy_loss_ratio: Option<f64>,
    pub dual_norms: Vec<f64>,
    /// Attained unnormalized margin.
    pub margin: f64,
    pub normalized_margins: Vec<Option<f64>>,
    /// `(γ − normalized margin) / γ`.
    pub gaps: Vec<Option<f64>>,
    pub correlations: Vec<Option<f64>>,
    pub mom_gap_sum: Option<f64>,
    pub adam_ratio_max: Option<f64>,
}

/// The exact column list for a set of tracked specs.
pub fn metrics_header(specs: &[NormSpec]) -> Vec<String> {
    let mut cols: Vec<String> = ["t", "eta", "loss", "proxy", "proxy_loss_ratio"].map(String::from).to_vec();
    let per_spec = |prefix: &'static str| specs.iter().map(move |s| format!("{prefix}_{s}"));
    cols.extend(per_spec("dualnorm"));
    cols.push("margin".into());
    cols.extend(per_spec("normmargin"));
    cols.extend(per_spec("gap"));
    cols.extend(per_spec("corr"));
    cols.push("mom_gap_sum".into());
    cols.push("adam_ratio_max".into());
    cols
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl MetricsRecord {
    /// Cells in header order; inapplicable values are `None`.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut out = vec![
            Some(self.t as f64),
            Some(self.eta),
            Some(self.loss),
            Some(self.proxy),
            self.proxy_loss_ratio,
        ];
        out.extend(self.dual_norms.iter().map(|&v| Some(v)));
        out.push(Some(self.margin));
        out.extend(&self.normalized_margins);
        out.extend(&self.gaps);
        out.extend(&self.correlations);
        out.push(self.mom_gap_sum);
        out.push(self.adam_ratio_max);
        out
    }

    pub fn to_csv_row(&self) -> String {
        let mut row = self.t.to_string();
        for v in &self.values()[1..] {
            row.push(',');
            row.push_str(&cell(*v));
        }
        row
    }
}

/// Streams records to a CSV file, flushing after every row so that a
/// crashed run leaves a readable prefix.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>, specs: &[NormSpec]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = MetricsWriter {
            path,
            out: BufWriter::new(file),
        };
        w.line(&metrics_header(specs).join(","))?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        self.line(&record.to_csv_row())
    }

    /// Appends `# FAILED t=<t> error=<message>`.
    pub fn write_failure(&mut self, t: u64, error: &Error) -> Result<()> {
        let msg = error.to_string().replace(['\n', '\r'], " ");
        self.line(&format!("# FAILED t={t} error={msg}"))
    }
}

/// A metrics table: named columns, one row per logged step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    /// Text of a failure marker row, if the run died.
    pub failure: Option<String>,
}

impl MetricsLog {
    pub fn from_records(specs: &[NormSpec], records: &[MetricsRecord]) -> Self {
        MetricsLog {
            columns: metrics_header(specs),
            rows: records.iter().map(MetricsRecord::values).collect(),
            failure: None,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// `(t, value)` pairs of a column, skipping empty cells.
    pub fn series(&self, column: &str) -> Result<Vec<(f64, f64)>> {
        let t = self
            .column_index("t")
            .ok_or_else(|| Error::InvalidInput("metrics log has no 't' column".into()))?;
        let c = self.column_index(column).ok_or_else(|| {
            Error::InvalidInput(format!("unknown column '{column}' (have: {})", self.columns.join(",")))
        })?;
        Ok(self
            .rows
            .iter()
            .filter_map(|r| Some((r[t]?, r[c]?)))
            .collect())
    }

    /// Parses the CSV written by [`MetricsWriter`].
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut log = MetricsLog::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(rest) = comment.trim().strip_prefix("FAILED") {
                    log.failure = Some(rest.trim().to_string());
                }
                continue;
            }
            if log.columns.is_empty() {
                log.columns = line.split(',').map(|s| s.trim().to_string()).collect();
                continue;
            }
            let mut row = Vec::with_capacity(log.columns.len());
            for cell in line.split(',') {
                let cell = cell.trim();
                row.push(if cell.is_empty() {
                    None
                } else {
                    Some(
                        cell.parse::<f64>()
                            .map_err(|_| format!("line {}: bad number '{cell}'", lineno + 1))?,
                    )
                });
            }
            if row.len() != log.columns.len() {
                return Err(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    log.columns.len(),
                    row.len()
                ));
            }
            log.rows.push(row);
        }
        if log.columns.is_empty() {
            return Err("missing header line".into());
        }
        Ok(log)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| cell(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Least-squares line through `(log t, log value)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

/// Minimum number of positive points [`fit_rate`] accepts.
pub const MIN_FIT_POINTS: usize = 10;

/// Fits `log(value) = intercept + slope · log(t)` over `from ≤ t ≤ to`.
/// Non-positive values are dropped.
pub fn fit_rate(log: &MetricsLog, column: &str, from: f64, to: f64) -> Result<RateFit> {
    if !(from > 0.0 && to >= from) {
        return Err(Error::InvalidInput(format!("bad range [{from}, {to}]")));
    }
    let pts: Vec<(f64, f64)> = log
        .series(column)?
        .into_iter()
        .filter(|&(t, v)| t >= from && t <= to && v > 0.0 && v.is_finite())
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InvalidInput(format!(
            "only {} positive points of '{column}' in [{from}, {to}], need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("all points share one t".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (sse / n).sqrt(),
        points: pts.len(),
    })
}
