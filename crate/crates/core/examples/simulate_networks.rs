//! Simulates the three benchmark networks and writes the events as CSV.

use hawkesnet::io::write_events;
use hawkesnet::simulate::{default_benchmark, simulate_multi};

fn main() -> hawkesnet::Result<()> {
    let model = default_benchmark(20)?;
    let data = simulate_multi(&model, &[200.0, 500.0, 300.0], 1)?;
    for (m, exp) in data.experiments().iter().enumerate() {
        println!(
            "network {}: {} edges, {} events, mean rate {:.3}",
            m + 1,
            model.experiment(m).edge_count(),
            exp.total_events(),
            exp.total_events() as f64 / (exp.horizon() * exp.num_units() as f64)
        );
    }
    let path = std::env::temp_dir().join("hawkesnet-events.csv");
    write_events(&data, &path)?;
    println!("events written to {}", path.display());
    Ok(())
}
