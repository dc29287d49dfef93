//! Result tables: aligned text with `mean±std` percentages and CSV with the
//! raw fractions, plus the metric-vs-N curve of a sweep.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spurious_core::harness::{ExperimentResult, Protocol};
use spurious_core::pipeline::SweepPoint;

use crate::error::{CliError, CliResult};

/// `mean±std` in percent with one decimal.
pub fn format_pm(mean: f64, std: f64) -> String {
    format!("{:.1}±{:.1}", 100.0 * mean, 100.0 * std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub protocol: Protocol,
    pub reps: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub wga_mean: f64,
    pub wga_std: f64,
}

impl From<&ExperimentResult> for TableRow {
    fn from(r: &ExperimentResult) -> Self {
        Self {
            method: r.label.clone(),
            protocol: r.protocol,
            reps: r.reps.len(),
            accuracy_mean: r.accuracy.mean,
            accuracy_std: r.accuracy.std,
            wga_mean: r.wga.mean,
            wga_std: r.wga.std,
        }
    }
}

fn rows(results: &[ExperimentResult]) -> CliResult<Vec<TableRow>> {
    if results.is_empty() {
        return Err(CliError::Invalid("no results to report".into()));
    }
    Ok(results.iter().map(TableRow::from).collect())
}

pub fn render_text(results: &[ExperimentResult]) -> CliResult<String> {
    let rows = rows(results)?;
    let mut cells = vec![["Method".to_string(), "Accuracy".to_string(), "WGA".to_string()]];
    for r in &rows {
        cells.push([
            r.method.clone(),
            format_pm(r.accuracy_mean, r.accuracy_std),
            format_pm(r.wga_mean, r.wga_std),
        ]);
    }
    let mut width = [0usize; 3];
    for row in &cells {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line = format!(
            "{} | {} | {}",
            pad(&row[0], width[0]),
            pad(&row[1], width[1]),
            pad(&row[2], width[2])
        );
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&format!("{}-|-{}-|-{}\n", "-".repeat(width[0]), "-".repeat(width[1]), "-".repeat(width[2])));
        }
    }
    Ok(out)
}

pub fn write_csv(results: &[ExperimentResult], path: &Path) -> CliResult<()> {
    let rows = rows(results)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv(path: &Path) -> CliResult<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<TableRow>, _>>()
        .map_err(|e| CliError::csv(path, e))
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    for p in points {
        w.serialize(p).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> CliResult<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<SweepPoint>, _>>()
        .map_err(|e| CliError::csv(path, e))
}

pub fn write_text(text: &str, path: &Path) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
