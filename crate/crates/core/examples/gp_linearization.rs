// Learning a parameter law: GP regression on rollouts of the cubic plant,
// linearized at the operating point.

use nalgebra::DMatrix;
use prob_lqr::benchmarks::{collect_rollouts, cubic_plant, RolloutSettings, CUBIC_NOISE};
use prob_lqr::gp::{GpPosterior, SeKernel, TargetMode};
use prob_lqr::rng;

/// Returns the Frobenius distance of the law mean from the true Jacobian
/// and the largest posterior standard deviation of an entry.
pub fn run_example() -> prob_lqr::Result<(f64, f64)> {
    let plant = cubic_plant(DMatrix::identity(3, 3) * CUBIC_NOISE)?;
    let data = collect_rollouts(&plant, 20, &RolloutSettings::default(), &mut rng::stream(1, &[]))?;
    println!("{} transitions from 20 rollouts", data.len());

    let kernel = SeKernel::isotropic(1.0, 1.0, 6)?;
    let post = GpPosterior::fit(data, kernel, vec![CUBIC_NOISE; 3], TargetMode::Successor)?;
    let law = post.linearize(&[0.0; 6])?;
    let truth = plant.reference_linearization().parameters();
    let err = (law.mean() - &truth).norm();
    let max_sd = law.covariance().diagonal().amax().sqrt();
    println!("posterior mean of [A B]:\n{:.4}", law.mean());
    println!("distance from the true linearization {err:.4}, largest entry std {max_sd:.4}");
    println!("process noise estimate {:?}", post.process_noise_estimate().diagonal().as_slice());
    Ok((err, max_sd))
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
