// Modelling a small semidefinite program with the LMI builder: the
// tightest quadratic Lyapunov certificate for a fixed stable matrix.
//
// minimize trace(P) subject to P ⪰ I and [[P, Aᵀ P], [P A, P]] ⪰ 0.

use nalgebra::DMatrix;
use prob_lqr::control::dlyap_solve;
use prob_lqr::linalg::min_eigenvalue;
use prob_lqr::sdp::{LinearObjective, LmiConstraint, SdpProblem, SdpStatus, Shape, SolverSettings};

pub fn run_example() -> prob_lqr::Result<(SdpStatus, f64)> {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, -0.2, 0.7]);
    let eye = DMatrix::<f64>::identity(2, 2);

    let mut prob = SdpProblem::new();
    let p = prob.declare_variable(Shape::Symmetric(2), "P");
    prob.add_lmi(LmiConstraint::new("floor", &[2]).var(0, 0, p)?.constant(0, 0, -&eye)?)?;
    prob.add_lmi(
        LmiConstraint::new("decrease", &[2, 2])
            .var(0, 0, p)?
            .term(1, 0, eye.clone(), p, a.clone())?
            .var(1, 1, p)?,
    )?;
    prob.set_objective_min(LinearObjective::new().trace(p, eye.clone()))?;
    let sol = prob.solve(&SolverSettings::default());
    println!("status {:?} after {} iterations", sol.status, sol.diagnostics.iterations);
    println!("P =\n{:.6}", sol.value(p));
    println!("smallest LMI eigenvalues {:?}", prob.lmi_min_eigenvalues(&sol));

    // a Stein solution P = I + Aᵀ P A, scaled to P ⪰ I, is feasible, so
    // its trace bounds the optimum
    let stein = dlyap_solve(&a, &eye)?;
    let bound = stein.trace() / min_eigenvalue(&stein);
    println!("objective {:.6} ≤ Lyapunov-based bound {:.6}", sol.objective, bound);
    Ok((sol.status, sol.objective))
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
