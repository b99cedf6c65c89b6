//! Tidy CSV of a report: one row per curve or method, grid point and metric.
//!
//! Estimation rows use `strategy = <weights>/<fusion>` (`separate` alone) and
//! metrics `tp`, `fp` per grid point, `selected_tp`, `selected_fp`,
//! `selected_f1` at the eBIC choice, and `auc` with empty `rho1`, `rho2`.
//! Testing rows use `strategy = <method>/M=<m>`, metrics `power`, `fwer`,
//! `fdr` and empty `rho1`, `rho2`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchReport, Estimate};
use crate::error::Result;

pub const PLOT_COLUMNS: [&str; 7] = [
    "strategy",
    "rho1",
    "rho2",
    "metric",
    "value",
    "stderr",
    "seed_count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub strategy: String,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub seed_count: usize,
}

impl BenchReport {
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        let mut rows = Vec::new();
        let row = |strategy: &str, rho: Option<(f64, f64)>, metric: &str, e: Estimate, n: usize| {
            PlotRow {
                strategy: strategy.to_string(),
                rho1: rho.map(|r| r.0),
                rho2: rho.map(|r| r.1),
                metric: metric.to_string(),
                value: e.mean,
                stderr: e.stderr,
                seed_count: n,
            }
        };
        for c in &self.estimation {
            let label = c.label();
            let n = c.seeds.len();
            for pt in &c.points {
                rows.push(row(&label, Some((pt.rho1, pt.rho2)), "tp", pt.tp, n));
                rows.push(row(&label, Some((pt.rho1, pt.rho2)), "fp", pt.fp, n));
            }
            let sel = Some((c.selected.rho1, c.selected.rho2));
            rows.push(row(&label, sel, "selected_tp", c.selected.tp, n));
            rows.push(row(&label, sel, "selected_fp", c.selected.fp, n));
            rows.push(row(&label, sel, "selected_f1", c.selected_f1, n));
            rows.push(row(&label, None, "auc", c.auc, n));
        }
        for t in &self.testing {
            let label = format!("{}/M={}", t.method.name(), t.m);
            rows.push(row(&label, None, "power", t.power, t.runs));
            rows.push(row(&label, None, "fwer", t.fwer, t.runs));
            rows.push(row(&label, None, "fdr", t.fdr, t.runs));
        }
        rows
    }
}

/// Writes the rows of `report` as CSV; an empty report gives the header alone.
pub fn write_plot_data<W: Write>(report: &BenchReport, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(PLOT_COLUMNS)?;
    for r in report.plot_rows() {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_plot_data(report: &BenchReport, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_plot_data(report, std::io::BufWriter::new(f))
}

pub fn parse_plot_data(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(PLOT_COLUMNS) {
        return crate::error::domain(format!(
            "plot data columns {headers:?} differ from {PLOT_COLUMNS:?}"
        ));
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
