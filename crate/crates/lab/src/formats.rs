//! Text formats for datasets, true parameters and result tables.
//!
//! Reals are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use softmax_lab_core::experiments::VarianceRow;
use softmax_lab_core::metrics::MetricsTrace;
use softmax_lab_core::{ClassId, Dataset, ModelParams};

pub const METRICS_HEADER: [&str; 7] = [
    "iteration",
    "method",
    "exact_ll",
    "bias",
    "param_diff",
    "op_count",
    "wallclock_ms",
];

pub const VARIANCE_HEADER: [&str; 6] = [
    "estimator",
    "trials",
    "exact_z",
    "mean",
    "empirical_variance",
    "closed_form_variance",
];

fn write_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

/// Header `N D C`, then `N` rows of `D` reals, then `N` labels.
pub fn format_dataset(data: &Dataset) -> String {
    let mut out = format!("{} {} {}\n", data.len(), data.dim(), data.classes());
    for n in 0..data.len() {
        write_row(&mut out, data.input(n));
    }
    for c in data.labels() {
        writeln!(out, "{}", c.0).unwrap();
    }
    out
}

/// Header `C D`, then one row of `D` reals per class.
pub fn format_params(params: &ModelParams) -> String {
    let mut out = format!("{} {}\n", params.classes(), params.dim());
    for c in 0..params.classes() {
        write_row(&mut out, params.row(c));
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            let (i, line) = self
                .inner
                .next()
                .ok_or_else(|| anyhow!("unexpected end of file, expected {what}"))?;
            if !line.trim().is_empty() {
                return Ok((i + 1, line));
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        for (i, line) in self.inner.by_ref() {
            if !line.trim().is_empty() {
                bail!("line {}: unexpected trailing content", i + 1);
            }
        }
        Ok(())
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, lineno: usize, expected: usize) -> Result<Vec<T>> {
    let fields: Vec<T> = line
        .split_whitespace()
        .map(|f| f.parse().map_err(|_| anyhow!("line {lineno}: cannot parse '{f}'")))
        .collect::<Result<_>>()?;
    if fields.len() != expected {
        bail!("line {lineno}: expected {expected} fields, found {}", fields.len());
    }
    Ok(fields)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    let (i, header) = lines.next_line("header 'N D C'")?;
    let h: Vec<usize> = parse_fields(header, i, 3)?;
    let (n, d, c) = (h[0], h[1], h[2]);
    let mut inputs = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (i, line) = lines.next_line("an input row")?;
        let row: Vec<f64> = parse_fields(line, i, d)?;
        inputs.extend(row);
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, line) = lines.next_line("a label")?;
        labels.push(ClassId(parse_fields::<usize>(line, i, 1)?[0]));
    }
    lines.finish()?;
    Ok(Dataset::new(d, c, inputs, labels)?)
}

pub fn parse_params(text: &str) -> Result<ModelParams> {
    let mut lines = Lines::new(text);
    let (i, header) = lines.next_line("header 'C D'")?;
    let h: Vec<usize> = parse_fields(header, i, 2)?;
    let (c, d) = (h[0], h[1]);
    let mut weights = Vec::with_capacity(c * d);
    for _ in 0..c {
        let (i, line) = lines.next_line("a parameter row")?;
        let row: Vec<f64> = parse_fields(line, i, d)?;
        weights.extend(row);
    }
    lines.finish()?;
    Ok(ModelParams::from_rows(c, d, weights)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_dataset(&text).with_context(|| format!("in {}", path.display()))
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_params(&text).with_context(|| format!("in {}", path.display()))
}

fn metadata(meta: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").unwrap();
    }
    out
}

fn finish_csv(meta: &[(String, String)], w: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?;
    Ok(metadata(meta) + &body)
}

/// Metadata lines, the metrics header, then every record in trace order.
pub fn format_metrics_csv(meta: &[(String, String)], traces: &[MetricsTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for trace in traces {
        for r in &trace.records {
            w.write_record([
                r.iteration.to_string(),
                r.method.clone(),
                r.exact_ll.to_string(),
                r.bias.to_string(),
                r.param_diff.to_string(),
                r.op_count.to_string(),
                r.wallclock_ms.to_string(),
            ])?;
        }
    }
    finish_csv(meta, w)
}

pub fn format_variance_csv(meta: &[(String, String)], rows: &[VarianceRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(VARIANCE_HEADER)?;
    for r in rows {
        w.write_record([
            r.estimator.to_string(),
            r.trials.to_string(),
            r.exact_z.to_string(),
            r.mean.to_string(),
            r.empirical_variance.to_string(),
            r.closed_form_variance.to_string(),
        ])?;
    }
    finish_csv(meta, w)
}

/// A results CSV read back: header names and string records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Table::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("results CSV has no '{name}' column"))
    }
}
