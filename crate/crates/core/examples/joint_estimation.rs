//! eBIC-tuned joint estimation with empirical weights, compared with
//! separate estimation.

use hawkesnet::bench::edge_confusion;
use hawkesnet::crosscov::{
    similarity_weights, thresholded_covariances, SimilarityWeights, ThresholdRule,
};
use hawkesnet::estimate::{
    default_grid, precompute_design, threshold_edges, tune, FusionScale, SolverConfig, TauRule,
    TuneOptions,
};
use hawkesnet::process::{Kernel, Link};
use hawkesnet::simulate::{default_benchmark, simulate_multi};

fn main() -> hawkesnet::Result<()> {
    let model = default_benchmark(20)?;
    let truth: Vec<_> = model.experiments().iter().map(|e| e.beta.clone()).collect();
    let data = simulate_multi(&model, &[400.0, 1000.0, 600.0], 2)?;
    let design = precompute_design(&data, &Kernel::exponential(1.0)?)?;
    let covs = thresholded_covariances(data.experiments(), 1.0, 5, ThresholdRule::default())?;
    let tau = TauRule::Rate { k: 2.0, c: 1.0 };

    let runs = [
        ("joint", similarity_weights(&covs)?, FusionScale::SqrtM),
        (
            "separate",
            SimilarityWeights::uniform(3),
            FusionScale::Ratios(vec![0.0]),
        ),
    ];
    for (name, weights, scale) in runs {
        let grid = default_grid(&design, 10, 1e-3, 1.0, &scale);
        let res = tune(
            &design,
            &weights,
            &grid,
            Link::Linear,
            &SolverConfig::default(),
            &TuneOptions::default(),
        )?;
        let est = threshold_edges(&res.fit, tau.tau(res.best.0, design.total_horizon))?;
        let (tp, fp) = edge_confusion(&est, &truth);
        println!(
            "{name:>8}: rho1 = {:.2e}, rho2 = {:.2e}, {tp} true and {fp} false edges of {}",
            res.best.0,
            res.best.1,
            truth
                .iter()
                .map(|b| b.iter().filter(|v| **v != 0.0).count())
                .sum::<usize>()
        );
    }
    Ok(())
}
