//! Fusion weights and the shared testing tree from thresholded
//! cross-covariances.

use hawkesnet::crosscov::{
    empirical_similarity_matrix, oracle_similarity_matrix, similarity_weights,
    thresholded_covariances, ThresholdRule,
};
use hawkesnet::simulate::{default_benchmark, simulate_multi};
use hawkesnet::tree::empirical_tree;

fn main() -> hawkesnet::Result<()> {
    let model = default_benchmark(20)?;
    let data = simulate_multi(&model, &[200.0, 500.0, 300.0], 4)?;
    let covs = thresholded_covariances(data.experiments(), 1.0, 5, ThresholdRule::PValue(0.1))?;
    println!(
        "support sizes: {:?}",
        covs.iter().map(|c| c.nnz()).collect::<Vec<_>>()
    );
    println!(
        "empirical similarity:{}",
        empirical_similarity_matrix(&covs)?
    );
    println!("weights:{}", similarity_weights(&covs)?.matrix());
    println!("oracle similarity:{}", oracle_similarity_matrix(&model));
    let tree = empirical_tree(&covs)?;
    println!(
        "tree order (1-based): {:?}",
        tree.order().iter().map(|m| m + 1).collect::<Vec<_>>()
    );
    Ok(())
}
