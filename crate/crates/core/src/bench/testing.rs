use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{BenchConfig, BenchReport, Estimate, TestMethod, TestingPoint, TestingScenario};
use crate::crosscov::thresholded_covariances;
use crate::error::{Error, Result};
use crate::infer::{
    bonferroni_test, hierarchical_test, least_squares_fits, score_statistics, EdgeTrees,
    RejectionMatrix, TestConfig, TestingDesign,
};
use crate::process::{Kernel, Link, MultiModel};
use crate::simulate::{
    make_benchmark_networks, network_layout, simulate_multi, BenchmarkNetwork, BENCHMARK_MU,
};
use crate::tree::empirical_tree;

/// Networks of the testing study with `m` experiments.
pub fn testing_model(config: &BenchConfig, m: usize) -> Result<MultiModel> {
    let kernel = Kernel::exponential(1.0)?;
    let layouts = match config.scenario {
        TestingScenario::Benchmark => {
            let one = network_layout(BenchmarkNetwork::One, config.p, config.motif_size)?;
            let three = network_layout(BenchmarkNetwork::Three, config.p, config.motif_size)?;
            let mut l = vec![one; m.saturating_sub(1)];
            l.push(three);
            l
        }
        TestingScenario::AllNull => {
            let mut zero = network_layout(BenchmarkNetwork::One, config.p, config.motif_size)?;
            zero.iter_mut().for_each(|s| s.coefficient = 0.0);
            vec![zero; m]
        }
    };
    make_benchmark_networks(config.p, &layouts, BENCHMARK_MU, kernel)
}

struct RunOutcome {
    power: f64,
    false_any: f64,
    fdp: f64,
}

fn outcome(z: &RejectionMatrix, truth: &[DMatrix<f64>]) -> RunOutcome {
    let p = z.p;
    let (mut tp, mut fp, mut nonzero) = (0usize, 0usize, 0usize);
    for (e, b) in truth.iter().enumerate() {
        for i in 0..p {
            for j in 0..p {
                let nz = b[(i, j)] != 0.0;
                nonzero += usize::from(nz);
                if z.rejected(i, j, e) {
                    if nz {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
    }
    RunOutcome {
        power: if nonzero == 0 {
            0.0
        } else {
            tp as f64 / nonzero as f64
        },
        false_any: if fp > 0 { 1.0 } else { 0.0 },
        fdp: fp as f64 / (tp + fp).max(1) as f64,
    }
}

fn run_one(
    config: &BenchConfig,
    model: &MultiModel,
    m: usize,
    seed: u64,
) -> Result<Vec<RunOutcome>> {
    let kernel = model.experiment(0).kernel.clone();
    let truth: Vec<DMatrix<f64>> = model.experiments().iter().map(|e| e.beta.clone()).collect();
    let data = simulate_multi(model, &config.testing_horizons(m), seed)?;
    let design = TestingDesign::build(&data, &kernel, Link::Linear)?;
    let thetas = least_squares_fits(&design)?;
    let stats = score_statistics(&design, &thetas, config.decorrelation)?;
    let tc = TestConfig {
        alpha: config.alpha,
        node_test: config.node_test,
        subset: vec![],
    };
    config
        .methods
        .iter()
        .map(|method| {
            let z = match method {
                TestMethod::Bonferroni => bonferroni_test(&stats, &tc)?,
                TestMethod::HierarchicalOracle => {
                    hierarchical_test(&EdgeTrees::oracle(model, false)?, &stats, &tc)?
                }
                TestMethod::HierarchicalScrambled => {
                    hierarchical_test(&EdgeTrees::oracle(model, true)?, &stats, &tc)?
                }
                TestMethod::HierarchicalEmpirical => {
                    let covs = thresholded_covariances(
                        data.experiments(),
                        config.bin_width,
                        config.max_lag,
                        config.rule,
                    )?;
                    let tree = empirical_tree(&covs)?;
                    hierarchical_test(&EdgeTrees::Shared(tree), &stats, &tc)?
                }
            };
            Ok(outcome(&z, &truth))
        })
        .collect()
}

/// For each `M`, simulates `replications` data sets, computes the score
/// statistics from unpenalized least-squares fits and applies every method.
/// Runs that fail (simulation blow-up, singular designs) are counted; above
/// `max_failure_rate` of them the study aborts.
pub fn run_benchmark_testing(config: &BenchConfig) -> Result<BenchReport> {
    config.validate_testing()?;
    let mut points = Vec::new();
    for &m in &config.ms {
        let model = testing_model(config, m)?;
        let seeds: Vec<u64> = (0..config.replications as u64)
            .map(|r| config.seed.wrapping_add(r))
            .collect();
        let results: Vec<Result<Vec<RunOutcome>>> = seeds
            .par_iter()
            .map(|&s| run_one(config, &model, m, s))
            .collect();
        let mut kept = Vec::with_capacity(results.len());
        let mut failed = 0usize;
        for r in results {
            match r {
                Ok(v) => kept.push(v),
                Err(e @ (Error::Domain(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_))) => {
                    return Err(e)
                }
                Err(e) => {
                    log::warn!("testing run failed at M={m}: {e}");
                    failed += 1;
                }
            }
        }
        if kept.is_empty() || failed as f64 > config.max_failure_rate * seeds.len() as f64 {
            return Err(Error::NonConvergence(format!(
                "{failed} of {} testing runs failed at M={m}",
                seeds.len()
            )));
        }
        for (k, &method) in config.methods.iter().enumerate() {
            let col = |f: fn(&RunOutcome) -> f64| {
                Estimate::from_samples(&kept.iter().map(|r| f(&r[k])).collect::<Vec<_>>())
            };
            points.push(TestingPoint {
                method,
                m,
                power: col(|o| o.power),
                fwer: col(|o| o.false_any),
                fdr: col(|o| o.fdp),
                runs: kept.len(),
            });
        }
    }
    Ok(BenchReport {
        p: config.p,
        true_edges: 0,
        estimation: Vec::new(),
        testing: points,
    })
}
