//! Report assembly and atomic file output.
//!
//! Every subcommand produces one [`Report`]: a numeric table written as
//! `<stem>_<subcommand>.csv`, plus a JSON document with the same table, the
//! parameters and a summary. Numbers in CSV use 17 significant digits.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::ingest::IngestionReport;
use crate::{CliError, OutputFormat};

pub const SCHEMA_VERSION: u32 = 1;

/// How a table is drawn when SVG output is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    Scatter,
    Step,
    /// Not a plot; no SVG is written.
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingestion: Option<IngestionReport>,
    pub parameters: Map<String, Value>,
    pub summary: Map<String, Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    #[serde(skip)]
    pub integer_columns: Vec<usize>,
    #[serde(skip)]
    pub plot: PlotKind,
    /// Diagnostics for stderr.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(subcommand: &str, columns: &[&str]) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            subcommand: subcommand.to_string(),
            ingestion: None,
            parameters: Map::new(),
            summary: Map::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            integer_columns: Vec::new(),
            plot: PlotKind::None,
            warnings: Vec::new(),
        }
    }

    /// Marks columns (by index) that hold counts and print without exponent.
    pub fn integers(mut self, cols: &[usize]) -> Self {
        self.integer_columns = cols.to_vec();
        self
    }

    pub fn plot(mut self, kind: PlotKind) -> Self {
        self.plot = kind;
        self
    }

    pub fn param(&mut self, key: &str, v: impl Serialize) {
        self.parameters.insert(key.into(), to_value(v));
    }

    pub fn summary(&mut self, key: &str, v: impl Serialize) {
        self.summary.insert(key.into(), to_value(v));
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(
                    |(j, v)| {
                        if self.integer_columns.contains(&j) {
                            format!("{}", *v as i64)
                        } else {
                            format_number(*v)
                        }
                    },
                )
                .collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("value serializes")
}

/// `{:.16e}` for finite values; `inf`, `-inf` and `nan` otherwise.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes the report files and returns their paths.
pub fn emit(report: &Report, dir: &Path, stem: &str, format: OutputFormat) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let base = format!("{stem}_{}", report.subcommand);
    let mut written = Vec::new();
    let csv = dir.join(format!("{base}.csv"));
    write_atomic(&csv, &report.to_csv())?;
    written.push(csv);
    match format {
        OutputFormat::Csv => {}
        OutputFormat::Json => {
            let p = dir.join(format!("{base}.json"));
            write_atomic(&p, &report.to_json())?;
            written.push(p);
        }
        OutputFormat::Svg => {
            if let Some(svg) = crate::svg::render(report) {
                let p = dir.join(format!("{base}.svg"));
                write_atomic(&p, &svg)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut r = Report::new("hill", &["k", "estimate"]).integers(&[0]);
        r.push(vec![1.0, 0.5]);
        r.push(vec![2.0, f64::INFINITY]);
        assert_eq!(r.to_csv(), "k,estimate\n1,5.0000000000000000e-1\n2,inf\n");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        let v = 0.1 + 0.2;
        assert_eq!(format_number(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
