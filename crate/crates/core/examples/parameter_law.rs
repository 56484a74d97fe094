// Parameter laws over `[A B]`: sampling, the truncated credible region
// and the sample-size bounds of the certificate.

use nalgebra::DMatrix;
use prob_lqr::distributions::{
    hoeffding_sample_bound, n_k_for, scenario_sample_bound, GaussianParameterLaw, RiskProfile, TruncatedLaw,
};
use prob_lqr::rng;

pub struct LawSummary {
    pub m_scenarios: usize,
    pub m_validation: usize,
    pub acceptance: f64,
    pub max_mahalanobis_sq: f64,
    pub radius_sq: f64,
}

pub fn run_example() -> prob_lqr::Result<LawSummary> {
    let mean = DMatrix::from_row_slice(2, 3, &[1.0, 0.1, 0.5, 0.0, 0.9, 1.0]);
    let row_cov = DMatrix::from_row_slice(2, 2, &[1e-3, 2e-4, 2e-4, 5e-4]);
    let col_cov = DMatrix::from_diagonal_element(3, 3, 1.0);
    let law = GaussianParameterLaw::matrix_normal(mean, row_cov, col_cov)?;
    let tlaw = TruncatedLaw::new(law, 0.98)?;

    let mut r = rng::stream(7, &[]);
    let (mut draws, mut max_d) = (0usize, 0.0f64);
    let n = 5_000;
    for _ in 0..n {
        let (s, tries) = tlaw.sample_counted(&mut r);
        draws += tries;
        max_d = max_d.max(tlaw.base().mahalanobis_sq(&s)?);
    }

    let profile = RiskProfile::default();
    let summary = LawSummary {
        m_scenarios: scenario_sample_bound(profile.eps, profile.beta, n_k_for(3, 3))?,
        m_validation: hoeffding_sample_bound(profile.eps_val, profile.alpha)?,
        acceptance: n as f64 / draws as f64,
        max_mahalanobis_sq: max_d,
        radius_sq: tlaw.radius_sq(),
    };
    println!("scenarios for a 3x3 system:  {}", summary.m_scenarios);
    println!("validation draws:            {}", summary.m_validation);
    println!("guaranteed stability:        {:.3}", profile.guaranteed_stability_prob());
    println!(
        "truncated sampler: acceptance {:.4}, max distance² {:.3} of {:.3}",
        summary.acceptance, summary.max_mahalanobis_sq, summary.radius_sq
    );
    Ok(summary)
}

fn main() -> prob_lqr::Result<()> {
    run_example().map(|_| ())
}
