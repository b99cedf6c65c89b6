//! File formats: event CSVs, model, weights and tree JSON, test output CSVs.
//!
//! Experiments and units are 1-based in every file.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crosscov::{SimilarityWeights, ThresholdRule};
use crate::error::{domain, Error, Result};
use crate::estimate::{threshold_edges, FitResult, TunePoint};
use crate::infer::RejectionMatrix;
use crate::process::{
    ExperimentData, ExperimentModel, Kernel, Link, MultiExperimentData, MultiModel,
};
use crate::tree::SimilarityTree;

pub const EVENT_COLUMNS: [&str; 3] = ["experiment", "unit", "time"];

/// Shape information not carried by an event file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventOptions {
    /// Number of units; defaults to the largest unit index seen.
    pub units: Option<usize>,
    /// Observation window of each experiment; defaults to the last event time
    /// of each experiment.
    pub horizons: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct EventRow {
    experiment: usize,
    unit: usize,
    time: f64,
}

pub fn read_events(path: &Path, opts: &EventOptions) -> Result<MultiExperimentData> {
    let f = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_events_from(f, opts)
}

/// Parses `experiment,unit,time` rows. Times of one unit must not decrease
/// down the file.
pub fn read_events_from<R: Read>(input: R, opts: &EventOptions) -> Result<MultiExperimentData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    for col in EVENT_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return domain(format!(
                "event file lacks the column {col:?} (found {:?})",
                headers.iter().collect::<Vec<_>>()
            ));
        }
    }
    let mut by_exp: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<EventRow>().enumerate() {
        let line = line + 2;
        let row = row.map_err(|e| Error::Domain(format!("line {line}: {e}")))?;
        if row.experiment == 0 || row.unit == 0 {
            return domain(format!(
                "line {line}: experiment and unit indices start at 1"
            ));
        }
        if !(row.time.is_finite() && row.time >= 0.0) {
            return domain(format!(
                "line {line}: time {} is not a nonnegative number",
                row.time
            ));
        }
        if let Some(p) = opts.units {
            if row.unit > p {
                return domain(format!(
                    "line {line}: unit {} is out of range 1..={p}",
                    row.unit
                ));
            }
        }
        let times = by_exp
            .entry(row.experiment)
            .or_default()
            .entry(row.unit)
            .or_default();
        if let Some(&last) = times.last() {
            if row.time < last {
                return domain(format!(
                    "line {line}: times of unit {} in experiment {} are not monotone ({} after {last})",
                    row.unit, row.experiment, row.time
                ));
            }
        }
        times.push(row.time);
    }
    let max_exp = by_exp.keys().next_back().copied().unwrap_or(0);
    let m = match &opts.horizons {
        Some(h) => {
            if max_exp > h.len() {
                return domain(format!(
                    "events mention experiment {max_exp} but only {} horizons were given",
                    h.len()
                ));
            }
            h.len()
        }
        None => max_exp,
    };
    if m == 0 {
        return domain("event file has no events and no horizons were given");
    }
    let p = opts.units.unwrap_or_else(|| {
        by_exp
            .values()
            .flat_map(|u| u.keys().copied())
            .max()
            .unwrap_or(0)
    });
    if p == 0 {
        return domain("cannot infer the number of units from an empty event file");
    }
    let exps = (1..=m)
        .map(|e| {
            let units = by_exp.remove(&e).unwrap_or_default();
            let last = units
                .values()
                .filter_map(|t| t.last().copied())
                .fold(0.0, f64::max);
            let horizon = match &opts.horizons {
                Some(h) => h[e - 1],
                None if last > 0.0 => last,
                None => {
                    return domain(format!(
                        "experiment {e} has no events; give its horizon explicitly"
                    ))
                }
            };
            if last > horizon {
                return domain(format!(
                    "experiment {e} has an event at {last}, beyond its horizon {horizon}"
                ));
            }
            let mut times = vec![Vec::new(); p];
            for (u, t) in units {
                times[u - 1] = t;
            }
            ExperimentData::from_times(times, horizon)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiExperimentData::new(exps)
}

/// Writes events ordered by experiment, then time.
pub fn write_events_to<W: Write>(data: &MultiExperimentData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_COLUMNS)?;
    for (m, exp) in data.experiments().iter().enumerate() {
        for (t, u) in exp.merged() {
            w.write_record([(m + 1).to_string(), (u + 1).to_string(), format!("{t:?}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(data: &MultiExperimentData, path: &Path) -> Result<()> {
    write_events_to(data, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// `beta` as nested rows (written) or one flat row-major array (accepted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum BetaDoc {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExperimentDoc {
    mu: Vec<f64>,
    beta: BetaDoc,
}

fn default_kernel() -> Kernel {
    Kernel::Exponential { rate: 1.0 }
}

fn default_link() -> Link {
    Link::Linear
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDoc {
    #[serde(default = "default_kernel")]
    kernel: Kernel,
    #[serde(default = "default_link")]
    link: Link,
    experiments: Vec<ExperimentDoc>,
}

pub fn model_to_json(model: &MultiModel) -> Result<String> {
    let first = model.experiment(0);
    let doc = ModelDoc {
        kernel: first.kernel.clone(),
        link: first.link,
        experiments: model
            .experiments()
            .iter()
            .map(|e| ExperimentDoc {
                mu: e.mu.iter().copied().collect(),
                beta: BetaDoc::Rows(
                    e.beta
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                ),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn model_from_json(text: &str) -> Result<MultiModel> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    if doc.experiments.is_empty() {
        return domain("model has no experiments");
    }
    let exps = doc
        .experiments
        .iter()
        .enumerate()
        .map(|(m, e)| {
            let p = e.mu.len();
            let beta = match &e.beta {
                BetaDoc::Rows(rows) => {
                    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                        return domain(format!(
                            "experiment {}: beta must have {p} rows of {p} entries",
                            m + 1
                        ));
                    }
                    DMatrix::from_fn(p, p, |i, j| rows[i][j])
                }
                BetaDoc::Flat(v) => {
                    if v.len() != p * p {
                        return domain(format!(
                            "experiment {}: flat beta needs {} entries, got {}",
                            m + 1,
                            p * p,
                            v.len()
                        ));
                    }
                    DMatrix::from_row_slice(p, p, v)
                }
            };
            ExperimentModel::new(
                DVector::from_vec(e.mu.clone()),
                beta,
                doc.kernel.clone(),
                doc.link,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MultiModel::new(exps)
}

pub fn read_model(path: &Path) -> Result<MultiModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_model(model: &MultiModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)? + "\n")?;
    Ok(())
}

/// A fitted model with every `|beta| <= tau` set to zero, plus the tuning
/// parameters that produced it.
pub fn fit_to_json(fit: &FitResult, kernel: &Kernel, tau: f64) -> Result<String> {
    let betas = threshold_edges(fit, tau)?;
    let exps = betas
        .into_iter()
        .enumerate()
        .map(|(m, b)| ExperimentModel::new(fit.mu(m), b, kernel.clone(), fit.link))
        .collect::<Result<Vec<_>>>()?;
    let mut v: serde_json::Value = serde_json::from_str(&model_to_json(&MultiModel::new(exps)?)?)?;
    v["rho1"] = fit.rho1.into();
    v["rho2"] = fit.rho2.into();
    v["tau"] = tau.into();
    v["converged"] = fit.converged().into();
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn write_fit(fit: &FitResult, kernel: &Kernel, tau: f64, path: &Path) -> Result<()> {
    std::fs::write(path, fit_to_json(fit, kernel, tau)? + "\n")?;
    Ok(())
}

/// Fusion weights with the similarity counts behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsDoc {
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub similarity: Vec<Vec<f64>>,
    /// Nonzero entries of each thresholded cross-covariance matrix.
    #[serde(default)]
    pub edge_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<ThresholdRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_lag: Option<usize>,
}

impl WeightsDoc {
    pub fn to_weights(&self) -> Result<SimilarityWeights> {
        let m = self.weights.len();
        if self.weights.iter().any(|r| r.len() != m) {
            return domain("weights must be a square matrix");
        }
        let w = DMatrix::from_fn(m, m, |a, b| self.weights[a][b]);
        if (0..m).any(|a| (0..m).any(|b| w[(a, b)] != w[(b, a)])) {
            return domain("weights must be symmetric");
        }
        SimilarityWeights::from_matrix(&w)
    }

    pub fn similarity_matrix(&self) -> Result<DMatrix<f64>> {
        let m = self.similarity.len();
        if m == 0 || self.similarity.iter().any(|r| r.len() != m) {
            return domain("weights file has no square similarity matrix");
        }
        Ok(DMatrix::from_fn(m, m, |a, b| self.similarity[a][b]))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_tree(path: &Path) -> Result<SimilarityTree> {
    read_json(path)
}

/// `rho1,rho2,ebic,converged` per grid point.
pub fn write_tune_path<W: Write>(path: &[TunePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for pt in path {
        w.serialize(pt)?;
    }
    if path.is_empty() {
        w.write_record(["rho1", "rho2", "ebic", "converged"])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per edge `(target, source)` and one 0/1 column per experiment.
pub fn write_rejections<W: Write>(z: &RejectionMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["target".to_string(), "source".to_string()];
    header.extend((1..=z.m).map(|m| format!("exp{m}")));
    w.write_record(&header)?;
    for k in 0..z.p * z.p {
        let mut rec = vec![(k / z.p + 1).to_string(), (k % z.p + 1).to_string()];
        rec.extend(z.row(k).iter().map(|&b| u8::from(b).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Every node p-value evaluated by the test, with its node set.
pub fn write_pvalues<W: Write>(z: &RejectionMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "target", "source", "level", "nodes", "pvalue", "alpha", "rejected",
    ])?;
    for r in &z.records {
        let nodes: Vec<String> = r.nodes.iter().map(|m| (m + 1).to_string()).collect();
        w.write_record([
            (r.edge / z.p + 1).to_string(),
            (r.edge % z.p + 1).to_string(),
            r.level.to_string(),
            nodes.join(";"),
            format!("{:e}", r.pvalue),
            format!("{:e}", r.alpha),
            u8::from(r.rejected).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
