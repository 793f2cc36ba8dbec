//! Table and curve renderings of aggregated cells.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AggregateCell;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Curve(CurveAxis),
}

/// Grid coordinate on the x axis of a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveAxis {
    Size,
    Pct,
    Lambda,
}

impl CurveAxis {
    fn value(self, c: &AggregateCell) -> Option<f64> {
        match self {
            CurveAxis::Size => Some(c.cell.size as f64),
            CurveAxis::Pct => c.cell.pct,
            CurveAxis::Lambda => c.cell.method.uses_lambda().then_some(c.cell.lambda),
        }
    }

    fn name(self) -> &'static str {
        match self {
            CurveAxis::Size => "size",
            CurveAxis::Pct => "pct",
            CurveAxis::Lambda => "lambda",
        }
    }
}

const Z95: f64 = 1.96;

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Machine-readable CSV and an aligned plain-text table.
pub fn render_table(cells: &[AggregateCell]) -> Result<(String, String)> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("aggregates"));
    }
    let header = ["method", "size", "pct", "lambda", "precision", "recall", "f1", "se_p", "se_r", "se_f1", "n"];
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.cell.method.name().to_string(),
                c.cell.size.to_string(),
                c.cell.pct.map(|p| p.to_string()).unwrap_or_default(),
                if c.cell.method.uses_lambda() { c.cell.lambda.to_string() } else { String::new() },
                num(c.precision),
                num(c.recall),
                num(c.f1),
                num(c.se_precision),
                num(c.se_recall),
                num(c.se_f1),
                c.n.to_string(),
            ]
        })
        .collect();

    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, v) in widths.iter_mut().zip(r) {
            *w = (*w).max(v.len());
        }
    }
    let line = |vals: Vec<&str>| -> String {
        let cols: Vec<String> = vals.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        cols.join("  ").trim_end().to_string() + "\n"
    };
    let mut text = line(header.to_vec());
    for r in &rows {
        text += &line(r.iter().map(String::as_str).collect());
    }
    Ok((csv_bytes(&header, rows)?, text))
}

/// `method, x, mean, lo95, hi95` rows with a normal-approximation band on
/// F1. Cells without a value on `axis` are skipped; two cells of one method
/// at the same `x` are an error.
pub fn render_curve(cells: &[AggregateCell], axis: CurveAxis) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("aggregates"));
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for c in cells {
        let Some(x) = axis.value(c) else { continue };
        if !seen.insert((c.cell.method.name(), x.to_bits())) {
            return Err(Error::Config(format!(
                "{} has several cells at {} = {x}; fix the other coordinates",
                c.cell.method.name(),
                axis.name()
            )));
        }
        rows.push(vec![
            c.cell.method.name().to_string(),
            x.to_string(),
            num(c.f1),
            num(c.f1 - Z95 * c.se_f1),
            num(c.f1 + Z95 * c.se_f1),
        ]);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("cells with a value on the curve axis"));
    }
    csv_bytes(&["method", "x", "mean", "lo95", "hi95"], rows)
}

/// Write the report files for `cells` into `dir` and return their paths.
pub fn emit_report(cells: &[AggregateCell], format: ReportFormat, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Table => {
            let (csv, text) = render_table(cells)?;
            let (a, b) = (dir.join(format!("{stem}.csv")), dir.join(format!("{stem}.txt")));
            fs::write(&a, csv)?;
            fs::write(&b, text)?;
            Ok(vec![a, b])
        }
        ReportFormat::Curve(axis) => {
            let path = dir.join(format!("{stem}.{}-curve.csv", axis.name()));
            fs::write(&path, render_curve(cells, axis)?)?;
            Ok(vec![path])
        }
    }
}
