//! Hierarchical edge tests with the empirical tree against per-experiment
//! Bonferroni tests.

use hawkesnet::crosscov::{thresholded_covariances, ThresholdRule};
use hawkesnet::infer::{
    bonferroni_test, hierarchical_test, least_squares_fits, score_statistics, Decorrelation,
    EdgeTrees, TestConfig, TestingDesign,
};
use hawkesnet::process::{Kernel, Link};
use hawkesnet::simulate::{
    make_benchmark_networks, network_layout, simulate_multi, BenchmarkNetwork,
};
use hawkesnet::tree::empirical_tree;

fn main() -> hawkesnet::Result<()> {
    let kernel = Kernel::exponential(1.0)?;
    let one = network_layout(BenchmarkNetwork::One, 10, 5)?;
    let three = network_layout(BenchmarkNetwork::Three, 10, 5)?;
    let model = make_benchmark_networks(
        10,
        &[one.clone(), one.clone(), one.clone(), one, three],
        0.2,
        kernel.clone(),
    )?;
    let data = simulate_multi(&model, &[500.0; 5], 8)?;

    let design = TestingDesign::build(&data, &kernel, Link::Linear)?;
    let stats = score_statistics(&design, &least_squares_fits(&design)?, Decorrelation::Auto)?;
    let covs = thresholded_covariances(data.experiments(), 1.0, 5, ThresholdRule::default())?;
    let config = TestConfig::default();

    let tree = EdgeTrees::Shared(empirical_tree(&covs)?);
    let runs = [
        ("hierarchical", hierarchical_test(&tree, &stats, &config)?),
        ("bonferroni", bonferroni_test(&stats, &config)?),
    ];
    for (name, z) in runs {
        let (mut tp, mut fp) = (0, 0);
        for (m, e) in model.experiments().iter().enumerate() {
            for i in 0..10 {
                for j in 0..10 {
                    if z.rejected(i, j, m) {
                        if e.beta[(i, j)] != 0.0 {
                            tp += 1;
                        } else {
                            fp += 1;
                        }
                    }
                }
            }
        }
        println!("{name:>12}: {tp} true and {fp} false rejections");
    }
    Ok(())
}
