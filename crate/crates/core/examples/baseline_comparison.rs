// The probabilistic design next to certainty equivalence and the
// worst-case robust baseline on one uncertain system.

use nalgebra::DVector;
use prob_lqr::benchmarks::{dean_linear_system, evaluate_on_law, robust_baseline, synthetic_law, RobustOutcome};
use prob_lqr::control::{dare_solve, Gain, LinearSystem};
use prob_lqr::distributions::{RiskProfile, TruncatedLaw};
use prob_lqr::rng;
use prob_lqr::sdp::SolverSettings;
use prob_lqr::synthesis::{algorithm1, SynthesisOptions, SynthesisOutcome};

/// Per method: (name, mean cost over stable draws, instability frequency);
/// `None` when the method found no gain.
pub fn run_example() -> prob_lqr::Result<Vec<(&'static str, Option<(f64, f64)>)>> {
    let law = synthetic_law(1e-5, &mut rng::stream(99, &[]))?;
    let (_, weights) = dean_linear_system();
    let profile = RiskProfile::default();

    let pr = match algorithm1(&TruncatedLaw::new(law.clone(), profile.c)?, &profile, &weights, 1, &SynthesisOptions::default())? {
        SynthesisOutcome::Certified(c) => Some(c.gain),
        _ => None,
    };
    let ce = Some(dare_solve(&LinearSystem::from_parameters(law.mean())?, &weights)?.1);
    let r = match robust_baseline(&law, &weights, 0.95, &SolverSettings::default())? {
        RobustOutcome::Feasible(k) => Some(k),
        _ => None,
    };

    let evaluate = |k: &Gain| -> prob_lqr::Result<(f64, f64)> {
        let e = evaluate_on_law(k, &law, &weights, 1_000, 200, &DVector::zeros(3), 5)?;
        let costs = e.stable_costs();
        Ok((costs.iter().sum::<f64>() / costs.len().max(1) as f64, e.instability_freq))
    };
    let mut rows = Vec::new();
    for (name, gain) in [("PR", pr), ("CE", ce), ("R", r)] {
        let row = gain.as_ref().map(evaluate).transpose()?;
        match row {
            Some((cost, unstable)) => println!("{name:>3}: mean cost {cost:.4e}, unstable {:.1}%", 100.0 * unstable),
            None => println!("{name:>3}: infeasible"),
        }
        rows.push((name, row));
    }
    Ok(rows)
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
