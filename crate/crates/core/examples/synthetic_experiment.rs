// A reduced synthetic-distribution experiment: one σ² value, two seeds,
// written out as per-cell records, a CSV and a summary table.

use prob_lqr::benchmarks::{format_summary, records_to_csv, run_experiment, summarize, ExperimentConfig};

/// Returns the CSV text.
pub fn run_example() -> prob_lqr::Result<String> {
    let config = ExperimentConfig {
        grid: vec![1e-5],
        repetitions: 2,
        eval_systems: 200,
        seed: 3,
        ..ExperimentConfig::synthetic_desk()
    };
    let records = run_experiment(&config)?;
    print!("{}", format_summary(&summarize(&records)));
    let csv = records_to_csv(&records);
    println!("{} CSV rows", csv.lines().count() - 1);
    Ok(csv)
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
