use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    BenchConfig, BenchReport, CurvePoint, Estimate, FusionStrength, StrategyCurve, WeightStrategy,
};
use crate::crosscov::{
    cross_covariances, oracle_similarity_matrix, similarity_weights, threshold_covariance,
    SimilarityWeights,
};
use crate::error::{Error, Result};
use crate::estimate::{precompute_design, threshold_edges, tune, FusionScale, TuneOptions};
use crate::process::{Kernel, Link, MultiModel};
use crate::simulate::{make_benchmark_networks, network_layout, simulate_multi, BENCHMARK_MU};

/// `(tp, fp)` of the nonzero pattern of `est` against `truth`, over all
/// experiments.
pub fn edge_confusion(est: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> (usize, usize) {
    let (mut tp, mut fp) = (0, 0);
    for (e, t) in est.iter().zip(truth) {
        for (a, b) in e.iter().zip(t.iter()) {
            if *a != 0.0 {
                if *b != 0.0 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    (tp, fp)
}

/// Area under a TP/FP curve with both axes scaled to `[0, 1]` by the numbers
/// of true edges and of true non-edges. The curve is closed with `(0, 0)` and
/// `(1, 1)`, so an empty path scores 0.5.
pub fn normalized_auc(points: &[(usize, usize)], true_edges: usize, non_edges: usize) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(tp, fp)| {
            let x = if non_edges == 0 {
                0.0
            } else {
                fp as f64 / non_edges as f64
            };
            let y = if true_edges == 0 {
                1.0
            } else {
                tp as f64 / true_edges as f64
            };
            (x, y)
        })
        .collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

struct RunCurve {
    rho: Vec<(f64, f64)>,
    confusion: Vec<(usize, usize)>,
    selected: (f64, f64, usize, usize),
    auc: f64,
    nonconverged: usize,
}

fn combos(config: &BenchConfig) -> Vec<(WeightStrategy, Option<FusionStrength>)> {
    let mut out = Vec::new();
    for &s in &config.strategies {
        if s == WeightStrategy::Separate {
            out.push((s, None));
        } else {
            out.extend(config.fusion.iter().map(|&f| (s, Some(f))));
        }
    }
    out
}

fn estimation_model(config: &BenchConfig) -> Result<MultiModel> {
    let layouts = config
        .networks
        .iter()
        .map(|&n| network_layout(n, config.p, config.motif_size))
        .collect::<Result<Vec<_>>>()?;
    make_benchmark_networks(config.p, &layouts, BENCHMARK_MU, Kernel::exponential(1.0)?)
}

fn run_one(
    config: &BenchConfig,
    model: &MultiModel,
    truth: &[DMatrix<f64>],
    seed: u64,
) -> Result<Vec<RunCurve>> {
    let kernel = model.experiment(0).kernel.clone();
    let m = model.num_experiments();
    let p = config.p;
    let true_edges: usize = truth
        .iter()
        .map(|b| b.iter().filter(|v| **v != 0.0).count())
        .sum();
    let non_edges = m * p * p - true_edges;

    let data = simulate_multi(model, &config.horizons, seed)?;
    let design = precompute_design(&data, &kernel)?;
    let empirical = if config.strategies.contains(&WeightStrategy::Empirical) && m > 1 {
        let covs = cross_covariances(data.experiments(), config.bin_width, config.max_lag)?
            .iter()
            .map(|c| threshold_covariance(c, config.rule))
            .collect::<Result<Vec<_>>>()?;
        Some(similarity_weights(&covs)?)
    } else {
        None
    };
    let opts = TuneOptions {
        ebic_gamma: config.ebic_gamma,
        ..TuneOptions::default()
    };
    let total_t = design.total_horizon;

    combos(config)
        .into_iter()
        .map(|(strategy, fusion)| {
            let weights = match (strategy, m) {
                (_, 1) => SimilarityWeights::uniform(1),
                (WeightStrategy::Oracle, _) => {
                    SimilarityWeights::from_similarity(&oracle_similarity_matrix(model))?
                }
                (WeightStrategy::Empirical, _) => empirical.clone().expect("computed above"),
                _ => SimilarityWeights::uniform(m),
            };
            let ratio = fusion.map_or(0.0, |f| f.ratio(m));
            let grid = crate::estimate::default_grid(
                &design,
                config.grid_size,
                config.grid_lo,
                config.grid_hi,
                &FusionScale::Ratios(vec![ratio]),
            );
            let res = tune(
                &design,
                &weights,
                &grid,
                Link::Linear,
                &config.solver,
                &opts,
            )?;
            let confusion = res
                .fits
                .iter()
                .map(|f| {
                    Ok(edge_confusion(
                        &threshold_edges(f, config.curve_tau.tau(f.rho1, total_t))?,
                        truth,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let sel = threshold_edges(&res.fit, config.tau.tau(res.best.0, total_t))?;
            let (tp, fp) = edge_confusion(&sel, truth);
            Ok(RunCurve {
                rho: grid.clone(),
                auc: normalized_auc(&confusion, true_edges, non_edges),
                confusion,
                selected: (res.best.0, res.best.1, tp, fp),
                nonconverged: res.path.iter().filter(|pt| !pt.converged).count(),
            })
        })
        .collect()
}

/// Simulates `replications` data sets of the configured networks, fits the
/// tuning path of every weight strategy and fusion strength, and summarizes
/// the thresholded estimates. Runs whose path has a nonconverged fit are left
/// out of the averages; more than `max_failure_rate` of them aborts.
pub fn run_benchmark_estimation(config: &BenchConfig) -> Result<BenchReport> {
    config.validate_estimation()?;
    let model = estimation_model(config)?;
    let truth: Vec<DMatrix<f64>> = model.experiments().iter().map(|e| e.beta.clone()).collect();
    let true_edges: usize = truth
        .iter()
        .map(|b| b.iter().filter(|v| **v != 0.0).count())
        .sum();
    let seeds: Vec<u64> = (0..config.replications as u64)
        .map(|r| config.seed.wrapping_add(r))
        .collect();

    let runs = seeds
        .par_iter()
        .map(|&s| run_one(config, &model, &truth, s))
        .collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::new();
    for (c, (strategy, fusion)) in combos(config).into_iter().enumerate() {
        let nonconverged: usize = runs.iter().map(|r| r[c].nonconverged).sum();
        let kept: Vec<(u64, &RunCurve)> = seeds
            .iter()
            .zip(&runs)
            .map(|(s, r)| (*s, &r[c]))
            .filter(|(_, r)| r.nonconverged == 0)
            .collect();
        let excluded = seeds.len() - kept.len();
        if excluded as f64 > config.max_failure_rate * seeds.len() as f64 || kept.is_empty() {
            return Err(Error::NonConvergence(format!(
                "{excluded} of {} runs of {} had nonconverged fits",
                seeds.len(),
                strategy.name()
            )));
        }
        let n_pts = kept[0].1.confusion.len();
        let points = (0..n_pts)
            .map(|k| {
                let col = |f: &dyn Fn(&RunCurve) -> f64| {
                    Estimate::from_samples(&kept.iter().map(|(_, r)| f(r)).collect::<Vec<_>>())
                };
                CurvePoint {
                    rho1: col(&|r| r.rho[k].0).mean,
                    rho2: col(&|r| r.rho[k].1).mean,
                    tp: col(&|r| r.confusion[k].0 as f64),
                    fp: col(&|r| r.confusion[k].1 as f64),
                }
            })
            .collect();
        let sample = |f: &dyn Fn(&RunCurve) -> f64| {
            Estimate::from_samples(&kept.iter().map(|(_, r)| f(r)).collect::<Vec<_>>())
        };
        let auc_runs: Vec<f64> = kept.iter().map(|(_, r)| r.auc).collect();
        curves.push(StrategyCurve {
            strategy,
            fusion,
            points,
            auc: Estimate::from_samples(&auc_runs),
            auc_runs,
            selected: CurvePoint {
                rho1: sample(&|r| r.selected.0).mean,
                rho2: sample(&|r| r.selected.1).mean,
                tp: sample(&|r| r.selected.2 as f64),
                fp: sample(&|r| r.selected.3 as f64),
            },
            selected_f1: sample(&|r| {
                let (tp, fp) = (r.selected.2 as f64, r.selected.3 as f64);
                let denom = tp + fp + true_edges as f64;
                if denom == 0.0 {
                    1.0
                } else {
                    2.0 * tp / denom
                }
            }),
            seeds: kept.iter().map(|(s, _)| *s).collect(),
            nonconverged_fits: nonconverged,
            excluded,
        });
    }
    Ok(BenchReport {
        p: config.p,
        true_edges,
        estimation: curves,
        testing: Vec::new(),
    })
}
