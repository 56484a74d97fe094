// Certainty-equivalent LQR on the three-state benchmark and the two cost
// evaluators.

use nalgebra::DVector;
use prob_lqr::benchmarks::dean_linear_system;
use prob_lqr::control::{dare_solve, finite_horizon_expected_cost, lyapunov_cost, spectral_radius};

pub fn run_example() -> prob_lqr::Result<(f64, f64)> {
    let (sys, weights) = dean_linear_system();
    println!("open-loop spectral radius {:.4}", spectral_radius(&sys.a)?);
    let (p, k) = dare_solve(&sys, &weights)?;
    println!("DARE gain:\n{:.5}", k.k);
    println!("closed-loop spectral radius {:.4}", spectral_radius(&sys.closed_loop(&k))?);

    let stationary = lyapunov_cost(&sys, &k, &weights)?.value();
    println!("stationary cost {stationary:.6e} (trace P Σω = {:.6e})", (&p * &weights.sigma_w).trace());
    let x0 = DVector::zeros(3);
    for t in [10, 200, 10_000] {
        println!("average cost over {t:>5} steps {:.6e}", finite_horizon_expected_cost(&sys, &k, &weights, &x0, t)?);
    }
    let long = finite_horizon_expected_cost(&sys, &k, &weights, &x0, 10_000)?;
    Ok((stationary, long))
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
