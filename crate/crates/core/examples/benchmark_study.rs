//! A small run of both simulation studies, written as plot-ready CSV.

use hawkesnet::bench::{
    emit_plot_data, run_benchmark_estimation, run_benchmark_testing, BenchConfig, BenchReport,
};

fn main() -> hawkesnet::Result<()> {
    let est = run_benchmark_estimation(&BenchConfig {
        replications: 5,
        ..BenchConfig::default()
    })?;
    for c in &est.estimation {
        println!(
            "{:>16}: AUC {:.3} +- {:.3}",
            c.label(),
            c.auc.mean,
            c.auc.stderr
        );
    }
    let test = run_benchmark_testing(&BenchConfig {
        replications: 20,
        horizons: vec![500.0],
        ms: vec![5, 10],
        ..BenchConfig::testing()
    })?;
    for t in &test.testing {
        println!(
            "{:>24} M={:>2}: power {:.3}, FWER {:.3}, FDR {:.3}",
            t.method.name(),
            t.m,
            t.power.mean,
            t.fwer.mean,
            t.fdr.mean
        );
    }
    let report = BenchReport {
        testing: test.testing,
        ..est
    };
    let path = std::env::temp_dir().join("hawkesnet-plot.csv");
    emit_plot_data(&report, &path)?;
    println!("plot data written to {}", path.display());
    Ok(())
}
