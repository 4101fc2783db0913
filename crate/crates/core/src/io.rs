//! CSV ingestion and export.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which parses
//! back to the identical `f64`. Parsers reject NaN and infinities and report
//! the offending line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::{smooth_curve, BSplineBasis, RawCurve};
use crate::error::{Error, Result};
use crate::fpca::FunctionalSample;
use crate::simulation::{Method, StudyReport};
use crate::tuning::{TuningReport, TuningRow};

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(field: &str, line: usize, column: &str) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{column}: cannot parse {field:?} as a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{column}: non-finite value {field:?}"),
        });
    }
    Ok(value)
}

fn parse_count(field: &str, line: usize, column: &str) -> Result<usize> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{column}: cannot parse {field:?} as a count"),
    })
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            line: pos.line() as usize,
            message: e.to_string(),
        },
        None => Error::Csv(e),
    }
}

/// Records with their line numbers, plus the index of the matched header.
/// A completely empty input counts as an empty table.
fn read_records<R: Read>(reader: R, headers: &[&[&str]]) -> Result<(usize, Vec<(usize, csv::StringRecord)>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let Some(first) = records.next() else {
        return Ok((0, Vec::new()));
    };
    let header = first.map_err(csv_error)?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let which = headers.iter().position(|h| *h == names.as_slice()).ok_or_else(|| Error::Parse {
        line: 1,
        message: format!(
            "expected header {}, found {}",
            headers.iter().map(|h| h.join(",")).collect::<Vec<_>>().join(" or "),
            names.join(",")
        ),
    })?;
    let width = headers[which].len();
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        out.push((line, rec));
    }
    Ok((which, out))
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(File::create(path)?)))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn time_key(t: f64) -> u64 {
    // -0.0 and 0.0 are the same observation time
    (t + 0.0).to_bits()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub subject: String,
    pub variable: String,
    pub time: f64,
    pub value: f64,
}

/// Longitudinal predictor observations, sorted by (variable, subject, time).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LongTable {
    rows: Vec<LongRow>,
}

impl LongTable {
    /// Validates and sorts `rows`; error lines refer to 1-based row positions.
    pub fn new(rows: Vec<LongRow>) -> Result<Self> {
        let lines: Vec<usize> = (1..=rows.len()).collect();
        Self::validated(rows, &lines)
    }

    fn validated(mut rows: Vec<LongRow>, lines: &[usize]) -> Result<Self> {
        let mut seen: HashMap<(&str, &str, u64), usize> = HashMap::new();
        for (row, &line) in rows.iter().zip(lines) {
            if !row.time.is_finite() || !row.value.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: "non-finite time or value".into(),
                });
            }
            if seen.insert((&row.subject, &row.variable, time_key(row.time)), line).is_some() {
                return Err(Error::DuplicateKey {
                    line,
                    key: format!("({}, {}, {})", row.subject, row.variable, row.time),
                });
            }
        }
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for row in &rows {
            *counts.entry((&row.subject, &row.variable)).or_default() += 1;
        }
        let short: Vec<String> = counts
            .iter()
            .filter(|(_, c)| **c < 2)
            .map(|((s, v), _)| format!("({s}, {v}) has a single observation"))
            .collect();
        if !short.is_empty() {
            return Err(Error::InvalidInput(short.join("; ")));
        }
        rows.sort_by(|a, b| {
            (&a.variable, &a.subject)
                .cmp(&(&b.variable, &b.subject))
                .then(a.time.total_cmp(&b.time))
        });
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[LongRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn variables(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.variable).collect();
        set.into_iter().cloned().collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.subject).collect();
        set.into_iter().cloned().collect()
    }

    /// Observed `(min, max)` time of a variable.
    pub fn time_range(&self, variable: &str) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.variable == variable)
            .fold(None, |acc, r| match acc {
                None => Some((r.time, r.time)),
                Some((lo, hi)) => Some((f64::min(lo, r.time), f64::max(hi, r.time))),
            })
    }

    fn curve_map(&self) -> Result<BTreeMap<(&str, &str), RawCurve>> {
        let mut grouped: BTreeMap<(&str, &str), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for r in &self.rows {
            let e = grouped.entry((&r.subject, &r.variable)).or_default();
            e.0.push(r.time);
            e.1.push(r.value);
        }
        grouped
            .into_iter()
            .map(|(k, (t, v))| Ok((k, RawCurve::new(t, v)?)))
            .collect()
    }

    /// `curves[j][i]` for `variables[j]` and `subjects[i]`; every gap is reported.
    pub fn collect_curves(&self, subjects: &[String], variables: &[String]) -> Result<Vec<Vec<RawCurve>>> {
        let map = self.curve_map()?;
        let mut gaps = Vec::new();
        let mut out = Vec::with_capacity(variables.len());
        for v in variables {
            let mut set = Vec::with_capacity(subjects.len());
            for s in subjects {
                match map.get(&(s.as_str(), v.as_str())) {
                    Some(c) => set.push(c.clone()),
                    None => gaps.push(format!("subject {s} has no observations of {v}")),
                }
            }
            out.push(set);
        }
        if gaps.is_empty() {
            Ok(out)
        } else {
            Err(Error::MissingData(gaps))
        }
    }
}

const LONG_HEADER: [&str; 4] = ["subject", "variable", "time", "value"];

pub fn parse_long_csv<R: Read>(reader: R) -> Result<LongTable> {
    let (_, records) = read_records(reader, &[&LONG_HEADER])?;
    let mut rows = Vec::with_capacity(records.len());
    let mut lines = Vec::with_capacity(records.len());
    for (line, rec) in records {
        rows.push(LongRow {
            subject: rec[0].trim().to_string(),
            variable: rec[1].trim().to_string(),
            time: parse_float(&rec[2], line, "time")?,
            value: parse_float(&rec[3], line, "value")?,
        });
        lines.push(line);
    }
    LongTable::validated(rows, &lines)
}

pub fn load_long_csv(path: &Path) -> Result<LongTable> {
    parse_long_csv(File::open(path)?)
}

pub fn write_long_csv(table: &LongTable, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(LONG_HEADER).map_err(csv_error)?;
    for r in &table.rows {
        w.write_record([r.subject.as_str(), r.variable.as_str(), &format_float(r.time), &format_float(r.value)])
            .map_err(csv_error)?;
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRow {
    pub subject: String,
    pub y: f64,
    pub t: f64,
}

/// Response and exogenous value per subject, sorted by subject.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseTable {
    rows: Vec<ResponseRow>,
}

impl ResponseTable {
    pub fn new(rows: Vec<ResponseRow>) -> Result<Self> {
        let lines: Vec<usize> = (1..=rows.len()).collect();
        Self::validated(rows, &lines)
    }

    fn validated(mut rows: Vec<ResponseRow>, lines: &[usize]) -> Result<Self> {
        let mut seen = HashMap::new();
        for (row, &line) in rows.iter().zip(lines) {
            if seen.insert(row.subject.clone(), line).is_some() {
                return Err(Error::DuplicateKey {
                    line,
                    key: row.subject.clone(),
                });
            }
        }
        rows.sort_by(|a, b| a.subject.cmp(&b.subject));
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ResponseRow] {
        &self.rows
    }

    pub fn subjects(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.subject.clone()).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    pub fn t(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }
}

const RESPONSE_HEADER: [&str; 3] = ["subject", "y", "t"];
const EXOGENOUS_HEADER: [&str; 2] = ["subject", "t"];

pub fn parse_response_csv<R: Read>(reader: R) -> Result<ResponseTable> {
    let (_, records) = read_records(reader, &[&RESPONSE_HEADER])?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (line, rec) in records {
        rows.push(ResponseRow {
            subject: rec[0].trim().to_string(),
            y: parse_float(&rec[1], line, "y")?,
            t: parse_float(&rec[2], line, "t")?,
        });
        lines.push(line);
    }
    ResponseTable::validated(rows, &lines)
}

pub fn load_response_csv(path: &Path) -> Result<ResponseTable> {
    parse_response_csv(File::open(path)?)
}

pub fn write_response_csv(table: &ResponseTable, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(RESPONSE_HEADER).map_err(csv_error)?;
    for r in &table.rows {
        w.write_record([r.subject.as_str(), &format_float(r.y), &format_float(r.t)])
            .map_err(csv_error)?;
    }
    finish(w)
}

/// `(subject, t)` pairs sorted by subject, from a `subject,t` or
/// `subject,y,t` file (any `y` column is ignored).
pub fn parse_exogenous_csv<R: Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let (which, records) = read_records(reader, &[&EXOGENOUS_HEADER, &RESPONSE_HEADER])?;
    let t_col = if which == 0 { 1 } else { 2 };
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, rec) in records {
        let subject = rec[0].trim().to_string();
        if seen.insert(subject.clone(), line).is_some() {
            return Err(Error::DuplicateKey { line, key: subject });
        }
        out.push((subject, parse_float(&rec[t_col], line, "t")?));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn load_exogenous_csv(path: &Path) -> Result<Vec<(String, f64)>> {
    parse_exogenous_csv(File::open(path)?)
}

/// Smoothed predictors aligned with the response.
#[derive(Debug, Clone)]
pub struct Assembled {
    /// Canonical (sorted) subject order shared by every output.
    pub subjects: Vec<String>,
    pub variables: Vec<String>,
    pub bases: Vec<BSplineBasis>,
    /// Per variable, one row of smoothing coefficients per subject.
    pub coefficients: Vec<DMatrix<f64>>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
}

impl Assembled {
    /// One sample per variable; needs at least two subjects.
    pub fn samples(&self) -> Result<Vec<FunctionalSample>> {
        self.bases
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| FunctionalSample::new(b.clone(), c.clone()))
            .collect()
    }
}

/// Smooths every response subject's curves with the basis of each variable.
pub fn assemble(long: &LongTable, response: &ResponseTable, bases: &[(String, BSplineBasis)]) -> Result<Assembled> {
    let subjects = response.subjects();
    let variables: Vec<String> = bases.iter().map(|(v, _)| v.clone()).collect();
    let curves = long.collect_curves(&subjects, &variables)?;
    let coefficients = curves
        .iter()
        .zip(bases)
        .map(|(set, (_, basis))| {
            let mut coef = DMatrix::zeros(set.len(), basis.n_basis());
            for (i, c) in set.iter().enumerate() {
                coef.set_row(i, &smooth_curve(c, basis)?.transpose());
            }
            Ok(coef)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Assembled {
        subjects,
        variables,
        bases: bases.iter().map(|(_, b)| b.clone()).collect(),
        coefficients,
        y: response.y(),
        t: response.t(),
    })
}

/// A coefficient surface on a rectangular grid; `values[(a, b)]` is at `(grid_s[a], grid_t[b])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub grid_s: Vec<f64>,
    pub grid_t: Vec<f64>,
    pub values: DMatrix<f64>,
}

pub fn write_surface_grid<W: Write>(surface: &DMatrix<f64>, grid_s: &[f64], grid_t: &[f64], writer: W) -> Result<()> {
    if surface.shape() != (grid_s.len(), grid_t.len()) {
        return Err(Error::DimensionMismatch(format!(
            "surface {:?} for a {} × {} grid",
            surface.shape(),
            grid_s.len(),
            grid_t.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["s", "t", "beta"]).map_err(csv_error)?;
    for (a, s) in grid_s.iter().enumerate() {
        for (b, t) in grid_t.iter().enumerate() {
            w.write_record([format_float(*s), format_float(*t), format_float(surface[(a, b)])])
                .map_err(csv_error)?;
        }
    }
    finish(w)
}

pub fn export_surface_grid(surface: &DMatrix<f64>, grid_s: &[f64], grid_t: &[f64], path: &Path) -> Result<()> {
    write_surface_grid(surface, grid_s, grid_t, BufWriter::new(File::create(path)?))
}

pub fn parse_surface_grid<R: Read>(reader: R) -> Result<SurfaceGrid> {
    let (_, records) = read_records(reader, &[&["s", "t", "beta"]])?;
    let mut triples = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        triples.push((
            *line,
            parse_float(&rec[0], *line, "s")?,
            parse_float(&rec[1], *line, "t")?,
            parse_float(&rec[2], *line, "beta")?,
        ));
    }
    let Some(&(_, s0, _, _)) = triples.first() else {
        return Ok(SurfaceGrid {
            grid_s: vec![],
            grid_t: vec![],
            values: DMatrix::zeros(0, 0),
        });
    };
    let grid_t: Vec<f64> = triples.iter().take_while(|r| r.1 == s0).map(|r| r.2).collect();
    let nt = grid_t.len();
    if triples.len() % nt != 0 {
        return Err(Error::InvalidInput(format!(
            "{} surface rows do not form a grid with {nt} t values",
            triples.len()
        )));
    }
    let ns = triples.len() / nt;
    let mut grid_s = Vec::with_capacity(ns);
    let mut values = DMatrix::zeros(ns, nt);
    for (a, block) in triples.chunks(nt).enumerate() {
        let s = block[0].1;
        for (b, &(line, sv, tv, beta)) in block.iter().enumerate() {
            if sv != s || tv != grid_t[b] {
                return Err(Error::Parse {
                    line,
                    message: "surface rows are not a row-major (s, t) grid".into(),
                });
            }
            values[(a, b)] = beta;
        }
        grid_s.push(s);
    }
    Ok(SurfaceGrid { grid_s, grid_t, values })
}

pub fn read_surface_grid(path: &Path) -> Result<SurfaceGrid> {
    parse_surface_grid(File::open(path)?)
}

const TUNING_HEADER: [&str; 7] = ["m2", "alpha", "lambda", "bic", "sigma2", "df", "n_active"];

pub fn write_tuning_report_to<W: Write>(report: &TuningReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TUNING_HEADER).map_err(csv_error)?;
    for r in &report.rows {
        w.write_record([
            r.m2.to_string(),
            format_float(r.alpha),
            format_float(r.lambda),
            format_float(r.bic),
            format_float(r.sigma2),
            format_float(r.df),
            r.n_active.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

pub fn write_tuning_report(report: &TuningReport, path: &Path) -> Result<()> {
    write_tuning_report_to(report, BufWriter::new(File::create(path)?))
}

pub fn parse_tuning_report<R: Read>(reader: R) -> Result<TuningReport> {
    let (_, records) = read_records(reader, &[&TUNING_HEADER])?;
    let rows = records
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            Ok(TuningRow {
                m2: parse_count(&rec[0], line, "m2")?,
                alpha: parse_float(&rec[1], line, "alpha")?,
                lambda: parse_float(&rec[2], line, "lambda")?,
                bic: parse_float(&rec[3], line, "bic")?,
                sigma2: parse_float(&rec[4], line, "sigma2")?,
                df: parse_float(&rec[5], line, "df")?,
                n_active: parse_count(&rec[6], line, "n_active")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TuningReport::from_rows(rows)
}

pub fn read_tuning_report(path: &Path) -> Result<TuningReport> {
    parse_tuning_report(File::open(path)?)
}

pub fn write_predictions(subjects: &[String], y_hat: &[f64], path: &Path) -> Result<()> {
    if subjects.len() != y_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} subjects and {} predictions",
            subjects.len(),
            y_hat.len()
        )));
    }
    let mut w = create(path)?;
    w.write_record(["subject", "y_hat"]).map_err(csv_error)?;
    for (s, y) in subjects.iter().zip(y_hat) {
        w.write_record([s.as_str(), &format_float(*y)]).map_err(csv_error)?;
    }
    finish(w)
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    let (_, records) = read_records(File::open(path)?, &[&["subject", "y_hat"]])?;
    records
        .iter()
        .map(|(line, rec)| Ok((rec[0].to_string(), parse_float(&rec[1], *line, "y_hat")?)))
        .collect()
}

/// One block of RMSE / APR / ANR rows per study, one column per method.
pub fn write_study_table(reports: &[StudyReport], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["n", "s", "metric"];
    header.extend(Method::ALL.iter().map(|m| m.name()));
    w.write_record(&header).map_err(csv_error)?;
    for report in reports {
        let metrics: [(&str, fn(&crate::simulation::MethodSummary) -> f64); 3] =
            [("RMSE", |m| m.mean_rmse), ("APR", |m| m.mean_apr), ("ANR", |m| m.mean_anr)];
        for (name, get) in metrics {
            let mut rec = vec![report.n.to_string(), format_float(report.noise_level), name.to_string()];
            for method in Method::ALL {
                rec.push(report.summary(method).map_or_else(|| "NA".to_string(), |m| format_float(get(m))));
            }
            w.write_record(&rec).map_err(csv_error)?;
        }
    }
    finish(w)
}

/// Per-replicate outcomes, one row per (study, replicate, method).
pub fn write_replicate_log(reports: &[StudyReport], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["n", "s", "replicate", "method", "rmse", "apr", "anr", "m2", "alpha", "lambda", "selected"])
        .map_err(csv_error)?;
    for report in reports {
        for rep in &report.replicates {
            for m in &rep.methods {
                let selected: Vec<String> = m.selected.iter().map(|j| (j + 1).to_string()).collect();
                w.write_record([
                    report.n.to_string(),
                    format_float(report.noise_level),
                    rep.replicate.to_string(),
                    m.method.name().to_string(),
                    format_float(m.rmse),
                    format_float(m.apr),
                    format_float(m.anr),
                    m.m2.to_string(),
                    format_float(m.alpha),
                    format_float(m.lambda),
                    selected.join(" "),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    finish(w)
}
