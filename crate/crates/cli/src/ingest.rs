//! Reading claim files into validated samples.
//!
//! Columns are addressed by header name, or by 0-based index when the file
//! has no header (or no header matches). Censoring flags are `1` for a
//! right-censored value and `0` for an observed one; `--invert-flags` swaps
//! the meaning. Empty and `NA` flags count as uncensored and are reported.

use std::path::Path;

use serde::Serialize;
use tailforge::bivariate::BivariateSample;
use tailforge::empirics::CensoredSample;
use tailforge::regression::CovariateSample;

use crate::CliError;

/// Layout of a delimited claims file.
#[derive(Debug, Clone)]
pub struct ClaimsFile {
    pub delimiter: u8,
    pub has_header: bool,
    pub value: String,
    pub flag: Option<String>,
    pub invert_flags: bool,
    pub covariate: Option<String>,
    pub second: Option<String>,
    pub second_flag: Option<String>,
}

/// Summary of what was read.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestionReport {
    pub n: usize,
    pub censored: usize,
    pub min: f64,
    pub max: f64,
    /// Flags given as `""` or `NA`, taken as uncensored.
    pub missing_flags: usize,
    /// Second-margin counterparts for bivariate files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub censored_second: Option<usize>,
    /// Diagnostics for stderr; not part of the JSON report.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl IngestionReport {
    pub fn describe(&self) -> String {
        let mut s = format!("ingested {} rows: {} censored, min {}, max {}", self.n, self.censored, self.min, self.max);
        if let Some(c2) = self.censored_second {
            s.push_str(&format!(", {c2} censored in the second margin"));
        }
        s
    }
}

struct Table {
    headers: Option<Vec<String>>,
    /// (line number, fields)
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path, file: &ClaimsFile) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(file.delimiter)
        .has_headers(file.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = if file.has_header {
        let h = reader.headers().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { headers, rows })
}

impl Table {
    fn column(&self, spec: &str) -> Result<usize, CliError> {
        if let Some(h) = &self.headers {
            if let Some(i) = h.iter().position(|c| c == spec) {
                return Ok(i);
            }
            if let Some(i) = h.iter().position(|c| c.eq_ignore_ascii_case(spec)) {
                return Ok(i);
            }
        }
        match spec.parse::<usize>() {
            Ok(i) => Ok(i),
            Err(_) => Err(CliError::data(format!("column '{spec}' not found"))),
        }
    }

    fn field<'a>(&self, fields: &'a [String], col: usize, line: u64) -> Result<&'a str, CliError> {
        fields.get(col).map(String::as_str).ok_or_else(|| CliError::data(format!("line {line}: missing column {col}")))
    }

    fn positive(&self, col: usize) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .map(|(line, f)| {
                let raw = self.field(f, col, *line)?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| CliError::data(format!("line {line}: cannot parse '{raw}' as a number")))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::data(format!("line {line}: value {raw} is not positive")));
                }
                Ok(v)
            })
            .collect()
    }

    fn real(&self, col: usize) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .map(|(line, f)| {
                let raw = self.field(f, col, *line)?;
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::data(format!("line {line}: cannot parse '{raw}' as a number")))
            })
            .collect()
    }

    /// Flags plus the number of missing tokens.
    fn flags(&self, col: Option<usize>, invert: bool) -> Result<(Vec<bool>, usize), CliError> {
        let Some(col) = col else {
            return Ok((vec![false; self.rows.len()], 0));
        };
        let mut missing = 0;
        let mut out = Vec::with_capacity(self.rows.len());
        for (line, f) in &self.rows {
            let raw = f.get(col).map_or("", String::as_str);
            let flag = match raw {
                "" | "NA" => {
                    missing += 1;
                    out.push(false);
                    continue;
                }
                "1" => true,
                "0" => false,
                _ => return Err(CliError::data(format!("line {line}: censoring flag '{raw}' is not 0 or 1"))),
            };
            out.push(flag != invert);
        }
        Ok((out, missing))
    }
}

fn warn_missing(rep: &mut IngestionReport, missing: usize, column: &str) {
    if missing > 0 {
        rep.warnings.push(format!("warning: {missing} empty or NA flags in column '{column}' taken as uncensored"));
    }
}

fn report(sample: &CensoredSample, missing: usize) -> IngestionReport {
    IngestionReport {
        n: sample.len(),
        censored: sample.censored_count(),
        min: sample.min(),
        max: sample.max(),
        missing_flags: missing,
        censored_second: None,
        warnings: Vec::new(),
    }
}

fn no_rows(path: &Path) -> CliError {
    CliError::data(format!("{}: no data rows", path.display()))
}

/// Reads a univariate, possibly censored, sample.
pub fn ingest_censored(path: &Path, file: &ClaimsFile) -> Result<(CensoredSample, IngestionReport), CliError> {
    let t = read_table(path, file)?;
    if t.rows.is_empty() {
        return Err(no_rows(path));
    }
    let values = t.positive(t.column(&file.value)?)?;
    let flag_col = file.flag.as_deref().map(|f| t.column(f)).transpose()?;
    let (flags, missing) = t.flags(flag_col, file.invert_flags)?;
    let sample = CensoredSample::new(values, flags)?;
    let mut rep = report(&sample, missing);
    if let Some(f) = &file.flag {
        warn_missing(&mut rep, missing, f);
    }
    Ok((sample, rep))
}

/// Reads a (loss, second margin) sample with optional flags on each margin.
pub fn ingest_bivariate(path: &Path, file: &ClaimsFile) -> Result<(BivariateSample, IngestionReport), CliError> {
    let second =
        file.second.as_deref().ok_or_else(|| CliError::data("a second-margin column is required (--second-col)"))?;
    let t = read_table(path, file)?;
    if t.rows.is_empty() {
        return Err(no_rows(path));
    }
    let x1 = t.positive(t.column(&file.value)?)?;
    let x2 = t.positive(t.column(second)?)?;
    let c1_col = file.flag.as_deref().map(|f| t.column(f)).transpose()?;
    let c2_col = file.second_flag.as_deref().map(|f| t.column(f)).transpose()?;
    let (c1, m1) = t.flags(c1_col, file.invert_flags)?;
    let (c2, m2) = t.flags(c2_col, file.invert_flags)?;
    let sample = BivariateSample::new(x1, x2, c1, c2)?;
    let margin = sample.margin1()?;
    let mut rep = report(&margin, m1 + m2);
    if let Some(f) = &file.flag {
        warn_missing(&mut rep, m1, f);
    }
    if let Some(f) = &file.second_flag {
        warn_missing(&mut rep, m2, f);
    }
    rep.censored_second = Some(sample.censored2().iter().filter(|c| **c).count());
    Ok((sample, rep))
}

/// Reads a censored sample with a real-valued covariate.
pub fn ingest_covariate(path: &Path, file: &ClaimsFile) -> Result<(CovariateSample, IngestionReport), CliError> {
    let cov =
        file.covariate.as_deref().ok_or_else(|| CliError::data("a covariate column is required (--covariate-col)"))?;
    let t = read_table(path, file)?;
    if t.rows.is_empty() {
        return Err(no_rows(path));
    }
    let z = t.positive(t.column(&file.value)?)?;
    let x = t.real(t.column(cov)?)?;
    let flag_col = file.flag.as_deref().map(|f| t.column(f)).transpose()?;
    let (flags, missing) = t.flags(flag_col, file.invert_flags)?;
    let margin = CensoredSample::new(z.clone(), flags.clone())?;
    let mut rep = report(&margin, missing);
    if let Some(f) = &file.flag {
        warn_missing(&mut rep, missing, f);
    }
    Ok((CovariateSample::new(z, flags, x)?, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn layout() -> ClaimsFile {
        ClaimsFile {
            delimiter: b',',
            has_header: true,
            value: "loss".into(),
            flag: Some("cens".into()),
            invert_flags: false,
            covariate: None,
            second: None,
            second_flag: None,
        }
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_flags_and_reports() {
        let f = file("loss,cens\n3,0\n1,1\n2,NA\n");
        let (s, rep) = ingest_censored(f.path(), &layout()).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.censored(), &[true, false, false]);
        assert_eq!(rep.n, 3);
        assert_eq!(rep.censored, 1);
        assert_eq!(rep.missing_flags, 1);
    }

    #[test]
    fn inverted_flags() {
        let f = file("loss,cens\n3,0\n1,1\n");
        let mut l = layout();
        l.invert_flags = true;
        let (s, _) = ingest_censored(f.path(), &l).unwrap();
        assert_eq!(s.censored(), &[false, true]);
    }

    #[test]
    fn no_flag_column_is_uncensored() {
        let f = file("loss\n3\n1\n");
        let mut l = layout();
        l.flag = None;
        let (s, rep) = ingest_censored(f.path(), &l).unwrap();
        assert_eq!(rep.censored, 0);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn negative_value_names_the_line() {
        let f = file("loss,cens\n3,0\n-1,0\n");
        let err = ingest_censored(f.path(), &layout()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn bad_flag_and_missing_column() {
        let f = file("loss,cens\n3,2\n");
        assert!(ingest_censored(f.path(), &layout()).unwrap_err().to_string().contains("line 2"));
        let f = file("amount\n3\n");
        assert!(ingest_censored(f.path(), &layout()).unwrap_err().to_string().contains("'loss'"));
    }

    #[test]
    fn headerless_index_columns() {
        let f = file("5;1\n7;0\n");
        let l =
            ClaimsFile { delimiter: b';', has_header: false, value: "0".into(), flag: Some("1".into()), ..layout() };
        let (s, _) = ingest_censored(f.path(), &l).unwrap();
        assert_eq!(s.censored(), &[true, false]);
    }
}
