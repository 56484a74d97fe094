//! Benchmark plants, the synthetic uncertainty generator, and the
//! evaluation pipelines for the synthetic-distribution and cubic-plant
//! experiments.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    dare_solve, finite_horizon_expected_cost, is_stable, spectral_radius, CostWeights, Gain,
    LinearSystem,
};
use crate::distributions::{
    sample_wishart, GaussianParameterLaw, RiskProfile, TruncatedLaw,
};
use crate::error::{domain, Result};
use crate::gp::{GpPosterior, SeKernel, TargetMode, TransitionDataset};
use crate::rng::{self, label, StreamRng};
use crate::sdp::{LinearObjective, LmiConstraint, SdpProblem, SdpStatus, Shape, SolverSettings};
use crate::synthesis::{
    algorithm1, parallel_draws, CertifiedController, StopRule, LOOSE_GAP_FACTOR, SynthesisOptions, SynthesisOutcome,
};

/// The three-state benchmark: mildly unstable `A`, `B = I`,
/// `Q = 1e-3 I`, `R = I`, `Σω = 1e-3 I`.
pub fn dean_linear_system() -> (LinearSystem, CostWeights) {
    let eye = DMatrix::identity(3, 3);
    let sys = LinearSystem::new(dean_a(), eye.clone()).expect("constant system");
    let weights = CostWeights::new(&eye * 1e-3, eye.clone(), &eye * 1e-3).expect("constant weights");
    (sys, weights)
}

fn dean_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.01, 0.01, 0.0, 0.01, 1.01, 0.01, 0.0, 0.01, 1.01])
}

#[derive(Debug, Clone, PartialEq)]
enum Dynamics {
    Linear(LinearSystem),
    /// `x⁺ = A x + (M x)^∘3 + B u`.
    Cubic {
        a: DMatrix<f64>,
        mix: DMatrix<f64>,
        b: DMatrix<f64>,
    },
}

/// `x_{k+1} = f(x_k, u_k) + ω_k`, `ω ~ N(0, Σω)`, around a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearPlant {
    dynamics: Dynamics,
    pub x_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub weights: CostWeights,
}

impl NonlinearPlant {
    /// A linear system used as a plant, operating point at the origin.
    pub fn linear(sys: LinearSystem, weights: CostWeights) -> Result<Self> {
        weights.check_system(&sys)?;
        Ok(Self {
            x_star: DVector::zeros(sys.d_x()),
            u_star: DVector::zeros(sys.d_u()),
            dynamics: Dynamics::Linear(sys),
            weights,
        })
    }

    pub fn d_x(&self) -> usize {
        self.x_star.len()
    }

    pub fn d_u(&self) -> usize {
        self.u_star.len()
    }

    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match &self.dynamics {
            Dynamics::Linear(sys) => &sys.a * x + &sys.b * u,
            Dynamics::Cubic { a, mix, b } => a * x + (mix * x).map(|v| v * v * v) + b * u,
        }
    }

    /// Analytic Jacobian of `f` at the operating point.
    pub fn reference_linearization(&self) -> LinearSystem {
        match &self.dynamics {
            Dynamics::Linear(sys) => sys.clone(),
            // the cubic term has zero Jacobian at the origin
            Dynamics::Cubic { a, b, .. } => LinearSystem::new(a.clone(), b.clone()).expect("shapes"),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.d_x(), |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * self.weights.sigma_w[(i, i)].sqrt()
        })
    }
}

/// The cubic benchmark `x⁺ = Ā x + (M x)^∘3 + u + ω` with `Ā` from
/// [`dean_linear_system`], `M` lower triangular with entries 0.3,
/// `Q = R = I` and process noise `Σω`.
pub fn cubic_plant(sigma_w: DMatrix<f64>) -> Result<NonlinearPlant> {
    let eye = DMatrix::identity(3, 3);
    let weights = CostWeights::new(eye.clone(), eye.clone(), sigma_w)?;
    let mix = DMatrix::from_fn(3, 3, |i, j| if j <= i { 0.3 } else { 0.0 });
    Ok(NonlinearPlant {
        dynamics: Dynamics::Cubic {
            a: dean_a(),
            mix,
            b: eye,
        },
        x_star: DVector::zeros(3),
        u_star: DVector::zeros(3),
        weights,
    })
}

/// Default process noise of the cubic plant.
pub const CUBIC_NOISE: f64 = 1e-3;

/// Mean `[Ā B̄]` of the benchmark and one Wishart draw (18 degrees of
/// freedom, scale `σ²(0.5 I + 0.5 · 11ᵀ)`) as the full covariance of
/// `vec(S)`.
pub fn synthetic_law<R: Rng + ?Sized>(sigma_sq: f64, rng: &mut R) -> Result<GaussianParameterLaw> {
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(domain("σ² must be positive"));
    }
    let (sys, _) = dean_linear_system();
    let d_s = sys.d_x() * (sys.d_x() + sys.d_u());
    let scale = synthetic_scale(sigma_sq, d_s);
    let cov = sample_wishart(&scale, d_s, rng)?;
    GaussianParameterLaw::new(sys.parameters(), cov)
}

/// `σ² (0.5 I + 0.5 · 11ᵀ)`.
pub fn synthetic_scale(sigma_sq: f64, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { sigma_sq } else { 0.5 * sigma_sq })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSettings {
    /// Transitions per rollout.
    pub length: usize,
    pub input_std: f64,
    /// Standard deviation of the start state around the operating point.
    pub init_std: f64,
}

impl Default for RolloutSettings {
    fn default() -> Self {
        Self {
            length: 6,
            input_std: 0.1,
            init_std: 0.01,
        }
    }
}

/// `n_rollouts` rollouts of `settings.length` transitions each, started
/// near the operating point with Gaussian inputs around `u*`.
pub fn collect_rollouts<R: Rng + ?Sized>(
    plant: &NonlinearPlant,
    n_rollouts: usize,
    settings: &RolloutSettings,
    rng: &mut R,
) -> Result<TransitionDataset> {
    if settings.length == 0 || n_rollouts == 0 {
        return Err(domain("rollout counts must be positive"));
    }
    let (d_x, d_u) = (plant.d_x(), plant.d_u());
    let n = n_rollouts * settings.length;
    let mut inputs = DMatrix::zeros(n, d_x + d_u);
    let mut targets = DMatrix::zeros(n, d_x);
    let mut row = 0;
    for _ in 0..n_rollouts {
        let mut x = plant.x_star.map(|v| v + settings.init_std * rng.sample::<f64, _>(StandardNormal));
        for _ in 0..settings.length {
            let u = plant.u_star.map(|v| v + settings.input_std * rng.sample::<f64, _>(StandardNormal));
            let next = plant.f(&x, &u) + plant.sample_noise(rng);
            for j in 0..d_x {
                inputs[(row, j)] = x[j];
                targets[(row, j)] = next[j];
            }
            for j in 0..d_u {
                inputs[(row, d_x + j)] = u[j];
            }
            row += 1;
            x = next;
        }
    }
    TransitionDataset::new(inputs, targets)
}

/// Costs of one gain on draws from a parameter law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawEvaluation {
    /// Per draw: the finite-horizon cost, or `None` if the closed loop is unstable.
    pub per_sample: Vec<Option<f64>>,
    pub instability_freq: f64,
}

impl LawEvaluation {
    pub fn stable_costs(&self) -> Vec<f64> {
        self.per_sample.iter().flatten().copied().collect()
    }
}

/// Draws `n_systems` systems from the (non-truncated) law and evaluates
/// the finite-horizon expected cost of `k` on each stable one.
pub fn evaluate_on_law(
    k: &Gain,
    law: &GaussianParameterLaw,
    weights: &CostWeights,
    n_systems: usize,
    horizon: usize,
    x0: &DVector<f64>,
    seed: u64,
) -> Result<LawEvaluation> {
    if n_systems == 0 || horizon == 0 {
        return Err(domain("evaluation counts must be positive"));
    }
    let per_sample: Vec<Result<Option<f64>>> = parallel_draws(n_systems, seed, |r| {
        let sys = LinearSystem::from_parameters(&law.sample(r))?;
        if !is_stable(&sys, k) {
            return Ok(None);
        }
        finite_horizon_expected_cost(&sys, k, weights, x0, horizon).map(Some)
    });
    let per_sample = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    let unstable = per_sample.iter().filter(|c| c.is_none()).count();
    Ok(LawEvaluation {
        instability_freq: unstable as f64 / n_systems as f64,
        per_sample,
    })
}

/// Simulated costs of one gain on a plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantEvaluation {
    /// Per repetition: average per-step cost, or `None` if the run diverged.
    pub per_rep: Vec<Option<f64>>,
}

impl PlantEvaluation {
    pub fn diverged(&self) -> bool {
        self.per_rep.iter().any(Option::is_none)
    }

    pub fn divergence_freq(&self) -> f64 {
        self.per_rep.iter().filter(|c| c.is_none()).count() as f64 / self.per_rep.len().max(1) as f64
    }

    /// Mean over repetitions, `None` if any run diverged.
    pub fn mean_cost(&self) -> Option<f64> {
        let costs: Option<Vec<f64>> = self.per_rep.iter().copied().collect();
        costs.map(|c| c.iter().sum::<f64>() / c.len() as f64)
    }
}

/// Closed-loop simulation `u = u* + K (x − x*)` from `x*` for `horizon`
/// steps, `reps` times. A run diverges when any state component reaches
/// `divergence_threshold` in magnitude; otherwise its cost is
/// `(1/T) Σ (xᵀQx + uᵀRu)` over deviations from the operating point.
pub fn evaluate_on_plant(
    k: &Gain,
    plant: &NonlinearPlant,
    horizon: usize,
    reps: usize,
    divergence_threshold: f64,
    seed: u64,
) -> Result<PlantEvaluation> {
    if horizon == 0 || reps == 0 {
        return Err(domain("simulation counts must be positive"));
    }
    if k.k.shape() != (plant.d_u(), plant.d_x()) {
        return Err(crate::error::dimension("gain does not match the plant"));
    }
    let w = &plant.weights;
    let per_rep = parallel_draws(reps, seed, |r: &mut StreamRng| {
        let mut x = plant.x_star.clone();
        let mut total = 0.0;
        for _ in 0..horizon {
            let dx = &x - &plant.x_star;
            let du = &k.k * &dx;
            total += dx.dot(&(&w.q * &dx)) + du.dot(&(&w.r * &du));
            x = plant.f(&x, &(&plant.u_star + du)) + plant.sample_noise(r);
            if x.iter().any(|v| !v.is_finite() || v.abs() >= divergence_threshold) {
                return None;
            }
        }
        Some(total / horizon as f64)
    });
    Ok(PlantEvaluation { per_rep })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub mean: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl CostSummary {
    pub fn of(costs: &[f64]) -> Option<Self> {
        if costs.is_empty() {
            return None;
        }
        let mut s = costs.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            q25: quantile(&s, 0.25),
            q50: quantile(&s, 0.5),
            q75: quantile(&s, 0.75),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Probabilistic robust synthesis.
    #[serde(rename = "PR")]
    ProbabilisticRobust,
    /// Certainty equivalence on the posterior mean.
    #[serde(rename = "CE")]
    CertaintyEquivalent,
    /// Common-Lyapunov design over the credible region.
    #[serde(rename = "R")]
    Robust,
    /// LQR on the true linearization (plant experiments only).
    #[serde(rename = "T")]
    TrueLinearization,
}

impl Method {
    pub fn code(self) -> &'static str {
        match self {
            Method::ProbabilisticRobust => "PR",
            Method::CertaintyEquivalent => "CE",
            Method::Robust => "R",
            Method::TrueLinearization => "T",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SyntheticDist,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSettings {
    pub signal_variance: f64,
    pub lengthscale: f64,
    /// Observation-noise variance per output; also the process-noise estimate.
    pub noise_variance: f64,
    #[serde(default)]
    pub target_mode: TargetMode,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            lengthscale: 1.0,
            noise_variance: CUBIC_NOISE,
            target_mode: TargetMode::Successor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            feas_tol: s.feas_tol,
            gap_tol: s.gap_tol,
            max_iter: s.max_iter,
        }
    }
}

impl From<SolverConfig> for SolverSettings {
    fn from(c: SolverConfig) -> Self {
        Self {
            feas_tol: c.feas_tol,
            gap_tol: c.gap_tol,
            max_iter: c.max_iter,
        }
    }
}

/// Parameters of one experiment. `grid` holds σ² values for the synthetic
/// distribution and rollout counts for the cubic plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub grid: Vec<f64>,
    pub repetitions: usize,
    pub profile: RiskProfile,
    /// Credible region of the robust baseline.
    pub robust_credibility: f64,
    pub max_restarts: usize,
    pub stop: StopRule,
    pub solver: SolverConfig,
    /// Systems drawn per evaluation (synthetic distribution).
    pub eval_systems: usize,
    pub horizon: usize,
    /// Simulations per gain (cubic plant).
    pub plant_reps: usize,
    pub divergence_threshold: f64,
    pub rollout: RolloutSettings,
    pub process_noise: f64,
    pub gp: GpSettings,
    pub seed: u64,
    /// Record wall-clock times; off by default so reruns are byte-identical.
    pub record_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::synthetic_desk()
    }
}

impl ExperimentConfig {
    pub fn synthetic_desk() -> Self {
        Self {
            kind: ExperimentKind::SyntheticDist,
            grid: vec![1e-6, 1e-5, 1e-4, 1e-3],
            repetitions: 5,
            profile: RiskProfile::default(),
            robust_credibility: 0.95,
            max_restarts: 10,
            stop: StopRule::default(),
            solver: SolverConfig::default(),
            eval_systems: 1_000,
            horizon: 200,
            plant_reps: 50,
            divergence_threshold: 1_000.0,
            rollout: RolloutSettings::default(),
            process_noise: CUBIC_NOISE,
            gp: GpSettings::default(),
            seed: 0,
            record_timings: false,
        }
    }

    pub fn cubic_desk() -> Self {
        Self {
            kind: ExperimentKind::Cubic,
            grid: vec![3.0, 5.0, 8.0],
            ..Self::synthetic_desk()
        }
    }

    /// Sample sizes of the original study: 10,000 evaluation systems and
    /// 25 repetitions for the synthetic distribution, 200 simulations per
    /// gain for the plant.
    pub fn paper_scale(mut self) -> Self {
        self.eval_systems = 10_000;
        self.plant_reps = 200;
        if self.kind == ExperimentKind::SyntheticDist {
            self.repetitions = 25;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.grid.is_empty() {
            return Err(domain("experiment grid must not be empty"));
        }
        if self.grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(domain("grid values must be positive"));
        }
        if self.kind == ExperimentKind::Cubic && self.grid.iter().any(|v| v.fract() != 0.0) {
            return Err(domain("cubic grid values are rollout counts and must be integers"));
        }
        if self.repetitions == 0 || self.eval_systems == 0 || self.horizon == 0 || self.plant_reps == 0 {
            return Err(domain("experiment counts must be positive"));
        }
        if !(self.robust_credibility > 0.0 && self.robust_credibility < 1.0) {
            return Err(domain("robust credibility must be in (0,1)"));
        }
        if !(self.process_noise > 0.0) || !(self.divergence_threshold > 0.0) {
            return Err(domain("process noise and divergence threshold must be positive"));
        }
        Ok(())
    }

    fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            max_restarts: self.max_restarts,
            stop: self.stop,
            solver: self.solver.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub feasible: bool,
    /// Short description of how the synthesis ended.
    pub outcome: String,
    pub gain: Option<Gain>,
    pub summary: Option<CostSummary>,
    pub instability_freq: Option<f64>,
    /// Spectral radius of the gain on the reference linearization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertifiedController>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
    /// Raw per-sample (or per-simulation) costs; `null` marks instability.
    pub raw_costs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub kind: ExperimentKind,
    pub grid_value: f64,
    pub grid_index: usize,
    pub repetition: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law_fingerprint: Option<String>,
    pub methods: Vec<MethodRecord>,
}

struct Synthesized {
    feasible: bool,
    outcome: String,
    gain: Option<Gain>,
    certificate: Option<CertifiedController>,
    runtime_s: f64,
}

fn timed<F: FnOnce() -> Result<Synthesized>>(f: F) -> Result<Synthesized> {
    let start = Instant::now();
    let mut s = f()?;
    s.runtime_s = start.elapsed().as_secs_f64();
    Ok(s)
}

fn infeasible(outcome: impl Into<String>) -> Synthesized {
    Synthesized {
        feasible: false,
        outcome: outcome.into(),
        gain: None,
        certificate: None,
        runtime_s: 0.0,
    }
}

fn feasible(gain: Gain, outcome: impl Into<String>) -> Synthesized {
    Synthesized {
        feasible: true,
        outcome: outcome.into(),
        gain: Some(gain),
        certificate: None,
        runtime_s: 0.0,
    }
}

fn run_pr(
    law: &GaussianParameterLaw,
    weights: &CostWeights,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Synthesized> {
    let tlaw = TruncatedLaw::new(law.clone(), config.profile.c)?;
    let out = algorithm1(&tlaw, &config.profile, weights, seed, &config.synthesis_options())?;
    Ok(match out {
        SynthesisOutcome::Certified(c) => Synthesized {
            feasible: true,
            outcome: "certified".into(),
            gain: Some(c.gain.clone()),
            certificate: Some(c),
            runtime_s: 0.0,
        },
        SynthesisOutcome::InfeasibleInit { .. } => infeasible("infeasible_init"),
        SynthesisOutcome::RestartsExhausted { .. } => infeasible("restarts_exhausted"),
    })
}

fn run_ce(sys: &LinearSystem, weights: &CostWeights) -> Result<Synthesized> {
    Ok(match dare_solve(sys, weights) {
        Ok((_, k)) => feasible(k, "riccati"),
        Err(crate::Error::Stabilizability(m)) => infeasible(format!("not stabilizable: {m}")),
        Err(e) => return Err(e),
    })
}

/// Result of the robust baseline.
#[derive(Debug, Clone)]
pub enum RobustOutcome {
    Feasible(Gain),
    Infeasible,
    /// The solver stopped without a verified answer.
    Unsolved(String),
}

/// The robust baseline: a worst-case common-Lyapunov LQR gain for every
/// `[A B]` in the `credibility` ellipsoid of the law.
///
/// Writing `[A B] = [Ā B̄] + Δ`, every `Δ` in the ellipsoid satisfies
/// `Δ Δᵀ ⪯ r² U`, with `r²` the chi-squared radius and `U` the sum of the
/// diagonal `d_x × d_x` blocks of the covariance of `vec [A B]`. The
/// initialization LMI is made robust against that norm-bounded set with
/// one multiplier `λ`:
///
/// ```text
/// ⎡ Y            *            *     *     *  ⎤
/// ⎢ Ā Y + B̄ L    Y − λ r² U   *     *     *  ⎥
/// ⎢ Q^½ Y        0            I     *     *  ⎥ ⪰ 0
/// ⎢ L            0            0     R⁻¹   *  ⎥
/// ⎣ [Y; L]       0            0     0     λI ⎦
/// ```
///
/// together with the same cost and floor constraints as the scenario
/// program.
pub fn robust_baseline(
    law: &GaussianParameterLaw,
    weights: &CostWeights,
    credibility: f64,
    settings: &SolverSettings,
) -> Result<RobustOutcome> {
    let tlaw = TruncatedLaw::new(law.clone(), credibility)?;
    let mean = LinearSystem::from_parameters(law.mean())?;
    weights.check_system(&mean)?;
    let (n, m) = (law.d_x(), law.d_u());
    let cov = law.covariance();
    let mut u = DMatrix::zeros(n, n);
    for j in 0..n + m {
        u += cov.view((j * n, j * n), (n, n));
    }
    let u_half = crate::linalg::psd_sqrt(&crate::linalg::symmetrize(&u))? * tlaw.radius_sq().sqrt();

    let sigma_scale = weights.sigma_w.amax();
    if sigma_scale <= 0.0 {
        return Err(domain("process noise must be nonzero"));
    }
    let sigma = &weights.sigma_w / sigma_scale;
    let sigma_half = crate::linalg::psd_sqrt(&sigma)?;
    let q_half = crate::linalg::psd_sqrt(&weights.q)?;
    let r_inv = weights.r.clone().try_inverse().ok_or_else(|| domain("R must be invertible"))?;
    let delta = 1e-6 * sigma.trace() / n as f64;
    let eye = DMatrix::identity(n, n);
    let mut top = DMatrix::zeros(n + m, n);
    top.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut bottom = DMatrix::zeros(n + m, m);
    bottom.view_mut((n, 0), (m, m)).fill_with_identity();

    let mut prob = SdpProblem::new();
    let y = prob.declare_variable(Shape::Symmetric(n), "Y");
    let l = prob.declare_variable(Shape::Rectangular(m, n), "L");
    let z = prob.declare_variable(Shape::Symmetric(n), "Z");
    let lambda = prob.declare_variable(Shape::Symmetric(1), "lambda");
    let mut lmi = LmiConstraint::new("robust", &[n, n, n, m, n + m])
        .var(0, 0, y)?
        .left_mul(1, 0, mean.a.clone(), y)?
        .left_mul(1, 0, mean.b.clone(), l)?
        .var(1, 1, y)?
        .left_mul(2, 0, q_half, y)?
        .constant(2, 2, eye.clone())?
        .var(3, 0, l)?
        .constant(3, 3, r_inv)?
        .left_mul(4, 0, top, y)?
        .left_mul(4, 0, bottom, l)?;
    for k in 0..n {
        let col = u_half.columns(k, 1).into_owned();
        lmi = lmi.term(1, 1, -&col, lambda, col.transpose())?;
    }
    for k in 0..n + m {
        let e = DMatrix::<f64>::identity(n + m, n + m).columns(k, 1).into_owned();
        lmi = lmi.term(4, 4, e.clone(), lambda, e.transpose())?;
    }
    prob.add_lmi(lmi)?;
    prob.add_lmi(
        LmiConstraint::new("cost", &[n, n])
            .var(0, 0, z)?
            .constant(1, 0, sigma_half)?
            .var(1, 1, y)?,
    )?;
    prob.add_lmi(LmiConstraint::new("floor", &[n]).var(0, 0, y)?.constant(0, 0, -&eye * delta)?)?;
    prob.set_objective_min(LinearObjective::new().trace(z, eye))?;

    let sol = prob.solve(settings);
    log::debug!(
        "robust baseline: status {:?}, objective {:e}, backend {}",
        sol.status, sol.objective, sol.diagnostics.backend_status
    );
    let loosely_solved = sol.status == SdpStatus::IllConditioned
        && sol.diagnostics.min_lmi_margin >= -settings.feas_tol
        && sol.diagnostics.gap <= LOOSE_GAP_FACTOR * settings.gap_tol;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => return Ok(RobustOutcome::Infeasible),
        _ if loosely_solved => {}
        other => {
            // As for the scenario program, feasibility reduces to the
            // homogeneous stability condition, which is better posed.
            return Ok(match robust_stability_check(&mean, &u_half, settings)? {
                SdpStatus::Infeasible => RobustOutcome::Infeasible,
                _ => RobustOutcome::Unsolved(format!("{other:?} ({})", sol.diagnostics.backend_status)),
            });
        }
    }
    let y_val = crate::linalg::symmetrize(sol.value(y));
    let y_inv = match y_val.cholesky() {
        Some(c) => c.inverse(),
        None => return Ok(RobustOutcome::Unsolved("non-PD Y".into())),
    };
    Ok(RobustOutcome::Feasible(Gain::new(sol.value(l) * y_inv)?))
}

/// Status of the homogeneous robust stability program
/// `Y ⪰ I, λ ≥ 0, [[Y, *, *], [Ā Y + B̄ L, Y − λ D Dᵀ, *], [[Y; L], 0, λ I]] ⪰ 0`.
fn robust_stability_check(mean: &LinearSystem, d: &DMatrix<f64>, settings: &SolverSettings) -> Result<SdpStatus> {
    let (n, m) = (mean.d_x(), mean.d_u());
    let mut top = DMatrix::zeros(n + m, n);
    top.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut bottom = DMatrix::zeros(n + m, m);
    bottom.view_mut((n, 0), (m, m)).fill_with_identity();
    let mut prob = SdpProblem::new();
    let y = prob.declare_variable(Shape::Symmetric(n), "Y");
    let l = prob.declare_variable(Shape::Rectangular(m, n), "L");
    let lambda = prob.declare_variable(Shape::Symmetric(1), "lambda");
    let mut lmi = LmiConstraint::new("robust", &[n, n, n + m])
        .var(0, 0, y)?
        .left_mul(1, 0, mean.a.clone(), y)?
        .left_mul(1, 0, mean.b.clone(), l)?
        .var(1, 1, y)?
        .left_mul(2, 0, top, y)?
        .left_mul(2, 0, bottom, l)?;
    for k in 0..n {
        let col = d.columns(k, 1).into_owned();
        lmi = lmi.term(1, 1, -&col, lambda, col.transpose())?;
    }
    for k in 0..n + m {
        let e = DMatrix::<f64>::identity(n + m, n + m).columns(k, 1).into_owned();
        lmi = lmi.term(2, 2, e.clone(), lambda, e.transpose())?;
    }
    prob.add_lmi(lmi)?;
    prob.add_lmi(
        LmiConstraint::new("normalization", &[n])
            .var(0, 0, y)?
            .constant(0, 0, -DMatrix::identity(n, n))?,
    )?;
    prob.set_objective_min(LinearObjective::new())?;
    let sol = prob.solve(settings);
    log::debug!("robust stability check: {:?} ({})", sol.status, sol.diagnostics.backend_status);
    Ok(sol.status)
}

fn run_r(law: &GaussianParameterLaw, weights: &CostWeights, config: &ExperimentConfig) -> Result<Synthesized> {
    let settings: SolverSettings = config.solver.into();
    Ok(
        match robust_baseline(law, weights, config.robust_credibility, &settings)? {
            RobustOutcome::Feasible(k) => feasible(k, "robust"),
            RobustOutcome::Infeasible => infeasible("infeasible"),
            RobustOutcome::Unsolved(why) => infeasible(format!("unsolved: {why}")),
        },
    )
}

/// A law fitted to rollouts of the plant, with the noise estimate.
pub fn learn_plant_law(
    plant: &NonlinearPlant,
    n_rollouts: usize,
    rollout: &RolloutSettings,
    gp: &GpSettings,
    seed: u64,
) -> Result<(GaussianParameterLaw, DMatrix<f64>)> {
    let mut r = rng::stream(seed, &[]);
    let data = collect_rollouts(plant, n_rollouts, rollout, &mut r)?;
    let d_q = plant.d_x() + plant.d_u();
    let kernel = SeKernel::isotropic(gp.signal_variance, gp.lengthscale, d_q)?;
    let post = GpPosterior::fit(data, kernel, vec![gp.noise_variance; plant.d_x()], gp.target_mode)?;
    let q_star: Vec<f64> = plant.x_star.iter().chain(plant.u_star.iter()).copied().collect();
    Ok((post.linearize(&q_star)?, post.process_noise_estimate()))
}

/// Seed of cell `(grid_index, repetition)`.
pub fn cell_seed(seed: u64, grid_index: usize, repetition: usize) -> u64 {
    rng::child_seed(seed, &[grid_index as u64, repetition as u64])
}

/// Runs one grid cell.
pub fn run_cell(config: &ExperimentConfig, grid_index: usize, repetition: usize) -> Result<CellRecord> {
    let seed = cell_seed(config.seed, grid_index, repetition);
    let grid_value = config.grid[grid_index];
    let sub = |l: u64| rng::child_seed(seed, &[l]);
    let mut methods = Vec::new();
    let timing = |s: &Synthesized| config.record_timings.then_some(s.runtime_s);

    match config.kind {
        ExperimentKind::SyntheticDist => {
            let law = synthetic_law(grid_value, &mut rng::stream(seed, &[label::LAW]))?;
            let (_, weights) = dean_linear_system();
            let mean_sys = LinearSystem::from_parameters(law.mean())?;
            let runs = [
                (Method::ProbabilisticRobust, timed(|| run_pr(&law, &weights, config, sub(label::SYNTHESIS)))?),
                (Method::CertaintyEquivalent, timed(|| run_ce(&mean_sys, &weights))?),
                (Method::Robust, timed(|| run_r(&law, &weights, config))?),
            ];
            let x0 = DVector::zeros(3);
            for (method, s) in runs {
                let eval = match &s.gain {
                    Some(k) => Some(evaluate_on_law(
                        k,
                        &law,
                        &weights,
                        config.eval_systems,
                        config.horizon,
                        &x0,
                        sub(label::EVALUATION),
                    )?),
                    None => None,
                };
                methods.push(MethodRecord {
                    method,
                    feasible: s.feasible,
                    outcome: s.outcome.clone(),
                    reference_radius: None,
                    summary: eval.as_ref().and_then(|e| CostSummary::of(&e.stable_costs())),
                    instability_freq: eval.as_ref().map(|e| e.instability_freq),
                    raw_costs: eval.map(|e| e.per_sample).unwrap_or_default(),
                    runtime_s: timing(&s),
                    gain: s.gain,
                    certificate: s.certificate,
                });
            }
            Ok(CellRecord {
                kind: config.kind,
                grid_value,
                grid_index,
                repetition,
                seed,
                law_fingerprint: Some(law.fingerprint()),
                methods,
            })
        }
        ExperimentKind::Cubic => {
            let plant = cubic_plant(DMatrix::identity(3, 3) * config.process_noise)?;
            let (law, noise) = learn_plant_law(&plant, grid_value as usize, &config.rollout, &config.gp, sub(label::ROLLOUTS))?;
            let weights = CostWeights::new(plant.weights.q.clone(), plant.weights.r.clone(), noise)?;
            let mean_sys = LinearSystem::from_parameters(law.mean())?;
            let reference = plant.reference_linearization();
            let runs = [
                (Method::ProbabilisticRobust, timed(|| run_pr(&law, &weights, config, sub(label::SYNTHESIS)))?),
                (Method::CertaintyEquivalent, timed(|| run_ce(&mean_sys, &weights))?),
                (Method::Robust, timed(|| run_r(&law, &weights, config))?),
                (Method::TrueLinearization, timed(|| run_ce(&reference, &plant.weights))?),
            ];
            for (method, s) in runs {
                let (eval, radius) = match &s.gain {
                    Some(k) => (
                        Some(evaluate_on_plant(
                            k,
                            &plant,
                            config.horizon,
                            config.plant_reps,
                            config.divergence_threshold,
                            sub(label::PLANT_EVAL),
                        )?),
                        Some(spectral_radius(&reference.closed_loop(k))?),
                    ),
                    None => (None, None),
                };
                let stable: Vec<f64> = eval.iter().flat_map(|e| e.per_rep.iter().flatten().copied()).collect();
                methods.push(MethodRecord {
                    method,
                    feasible: s.feasible,
                    outcome: s.outcome.clone(),
                    reference_radius: radius,
                    summary: CostSummary::of(&stable),
                    instability_freq: eval.as_ref().map(PlantEvaluation::divergence_freq),
                    raw_costs: eval.map(|e| e.per_rep).unwrap_or_default(),
                    runtime_s: timing(&s),
                    gain: s.gain,
                    certificate: s.certificate,
                });
            }
            Ok(CellRecord {
                kind: config.kind,
                grid_value,
                grid_index,
                repetition,
                seed,
                law_fingerprint: Some(law.fingerprint()),
                methods,
            })
        }
    }
}

/// Every `(grid point, repetition)` cell, in parallel; the result order is
/// grid-major and independent of scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<CellRecord>> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|g| (0..config.repetitions).map(move |r| (g, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(g, r)| run_cell(config, g, r))
        .collect()
}

pub const CSV_HEADER: [&str; 11] = [
    "sigma_sq_or_rollouts",
    "method",
    "repetition",
    "feasible",
    "mean_cost",
    "q25",
    "q50",
    "q75",
    "instability_freq",
    "runtime_s",
    "seed",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Aggregate CSV, one row per cell and method.
pub fn records_to_csv(records: &[CellRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for cell in records {
        for m in &cell.methods {
            w.write_record([
                format!("{:e}", cell.grid_value),
                m.method.code().to_string(),
                cell.repetition.to_string(),
                m.feasible.to_string(),
                opt(m.summary.map(|s| s.mean)),
                opt(m.summary.map(|s| s.q25)),
                opt(m.summary.map(|s| s.q50)),
                opt(m.summary.map(|s| s.q75)),
                opt(m.instability_freq),
                opt(m.runtime_s),
                cell.seed.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Per grid point and method: feasible count, mean of the mean costs over
/// feasible repetitions, mean instability frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub grid_value: f64,
    pub method: Method,
    pub feasible: usize,
    pub repetitions: usize,
    pub mean_cost: Option<f64>,
    pub instability_freq: Option<f64>,
}

pub fn summarize(records: &[CellRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for cell in records {
        for m in &cell.methods {
            let idx = rows
                .iter()
                .position(|r| r.grid_value == cell.grid_value && r.method == m.method)
                .unwrap_or_else(|| {
                    rows.push(SummaryRow {
                        grid_value: cell.grid_value,
                        method: m.method,
                        feasible: 0,
                        repetitions: 0,
                        mean_cost: None,
                        instability_freq: None,
                    });
                    rows.len() - 1
                });
            let row = &mut rows[idx];
            row.repetitions += 1;
            if m.feasible {
                row.feasible += 1;
            }
        }
    }
    for row in &mut rows {
        let ms: Vec<&MethodRecord> = records
            .iter()
            .filter(|c| c.grid_value == row.grid_value)
            .flat_map(|c| c.methods.iter().filter(|m| m.method == row.method && m.feasible))
            .collect();
        let costs: Vec<f64> = ms.iter().filter_map(|m| m.summary.map(|s| s.mean)).collect();
        let inst: Vec<f64> = ms.iter().filter_map(|m| m.instability_freq).collect();
        if !costs.is_empty() {
            row.mean_cost = Some(costs.iter().sum::<f64>() / costs.len() as f64);
        }
        if !inst.is_empty() {
            row.instability_freq = Some(inst.iter().sum::<f64>() / inst.len() as f64);
        }
    }
    rows.sort_by(|a, b| a.grid_value.total_cmp(&b.grid_value).then(a.method.cmp(&b.method)));
    rows
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!("{:>12} {:>6} {:>9} {:>14} {:>12}\n", "grid", "method", "feasible", "mean_cost", "instability");
    for r in rows {
        out.push_str(&format!(
            "{:>12.3e} {:>6} {:>5}/{:<3} {:>14} {:>12}\n",
            r.grid_value,
            r.method.code(),
            r.feasible,
            r.repetitions,
            r.mean_cost.map_or("-".into(), |c| format!("{c:.6e}")),
            r.instability_freq.map_or("-".into(), |c| format!("{c:.4}")),
        ));
    }
    out
}
