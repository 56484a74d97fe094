// A reduced cubic-plant experiment: learn a law from rollouts, synthesize
// with every method and grade the gains on the nonlinear plant.

use prob_lqr::benchmarks::{format_summary, run_experiment, summarize, CellRecord, ExperimentConfig};

pub fn run_example() -> prob_lqr::Result<Vec<CellRecord>> {
    let config = ExperimentConfig {
        grid: vec![8.0],
        repetitions: 2,
        plant_reps: 20,
        seed: 11,
        ..ExperimentConfig::cubic_desk()
    };
    let records = run_experiment(&config)?;
    print!("{}", format_summary(&summarize(&records)));
    for cell in &records {
        for m in &cell.methods {
            if let Some(rho) = m.reference_radius {
                println!("rep {} {:?}: spectral radius on the true linearization {rho:.3}", cell.repetition, m.method);
            }
        }
    }
    Ok(records)
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
