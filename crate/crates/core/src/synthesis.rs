//! Probabilistic robust LQR synthesis.
//!
//! The pipeline is: draw scenario systems from the truncated posterior,
//! find a common-Lyapunov initial gain with a scenario SDP
//! ([`synth_init`]), improve it with majorize–minimize steps that give each
//! scenario its own cost matrix ([`synth_iterate`]), and accept the result
//! only if a fresh Monte-Carlo sample confirms the stability rate
//! ([`validate`]). [`algorithm1`] repeats this until a gain is accepted.

use log::{debug, info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{lyapunov_cost, spectral_radius, CostWeights, Gain, LinearSystem};
use crate::distributions::{
    hoeffding_sample_bound, n_k_for, scenario_sample_bound, RiskProfile, TruncatedLaw,
};
use crate::error::{domain, Error, Result};
use crate::linalg;
use crate::rng::{self, label, CHUNK};
use crate::sdp::{
    LinearObjective, LmiConstraint, SdpProblem, SdpStatus, Shape, SolverSettings,
};

/// Scenario systems together with where they came from.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub systems: Vec<LinearSystem>,
    pub law_fingerprint: String,
    pub seed: u64,
}

impl ScenarioSet {
    /// `m` draws from the truncated law. Draw `i` comes from the stream
    /// `(seed, i / CHUNK)`, so the set does not depend on the thread count.
    pub fn draw(tlaw: &TruncatedLaw, m: usize, seed: u64) -> Result<Self> {
        Self::draw_with(tlaw, m, seed, |t, r| t.sample(r))
    }

    /// `m` points on the boundary of the credible ellipsoid.
    pub fn draw_boundary(tlaw: &TruncatedLaw, m: usize, seed: u64) -> Result<Self> {
        Self::draw_with(tlaw, m, seed, |t, r| t.sample_boundary(r))
    }

    fn draw_with<F>(tlaw: &TruncatedLaw, m: usize, seed: u64, draw: F) -> Result<Self>
    where
        F: Fn(&TruncatedLaw, &mut rng::StreamRng) -> DMatrix<f64> + Sync,
    {
        if m == 0 {
            return Err(domain("scenario count must be positive"));
        }
        let params = parallel_draws(m, seed, |r| draw(tlaw, r));
        let systems = params
            .iter()
            .map(LinearSystem::from_parameters)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            systems,
            law_fingerprint: tlaw.base().fingerprint(),
            seed,
        })
    }

    /// A hand-built set, mainly for tests and examples.
    pub fn from_systems(systems: Vec<LinearSystem>) -> Result<Self> {
        if systems.is_empty() {
            return Err(domain("scenario set must not be empty"));
        }
        Ok(Self {
            systems,
            law_fingerprint: String::from("manual"),
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

/// `n` draws in fixed-size chunks, chunk `c` using the stream `(seed, c)`.
pub fn parallel_draws<T, F>(n: usize, seed: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut rng::StreamRng) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::stream(seed, &[c as u64]);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| draw(&mut r)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InitSolution {
    pub gain: Gain,
    /// Common Lyapunov matrix `Y`; `Y⁻¹` bounds every scenario's cost matrix.
    pub y: DMatrix<f64>,
    /// `trace(Z*)`, an upper bound on every scenario's stationary cost.
    pub upper_bound: f64,
}

#[derive(Debug, Clone)]
pub enum InitOutcome {
    Feasible(InitSolution),
    Infeasible,
}

fn check_scenarios(scenarios: &ScenarioSet, weights: &CostWeights) -> Result<()> {
    if scenarios.is_empty() {
        return Err(domain("scenario set must not be empty"));
    }
    for s in &scenarios.systems {
        weights.check_system(s)?;
    }
    Ok(())
}

fn r_inverse(weights: &CostWeights) -> Result<DMatrix<f64>> {
    weights
        .r
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| domain("R must be positive definite"))
}

/// Largest closed-loop spectral radius over the scenarios.
pub fn max_scenario_radius(scenarios: &ScenarioSet, k: &Gain) -> Result<f64> {
    scenarios
        .systems
        .iter()
        .map(|s| spectral_radius(&s.closed_loop(k)))
        .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r)))
}

/// Common-Lyapunov scenario program: minimize `trace Z` over `(L, Y, Z)`
/// subject to, for every scenario,
///
/// ```text
/// ⎡ Y          *   *   *   ⎤
/// ⎢ A Y + B L  Y   *   *   ⎥ ⪰ 0,   ⎡ Z     Σ^½ ⎤ ⪰ 0,   Y ⪰ δ I,
/// ⎢ Q^½ Y      0   I   *   ⎥        ⎣ Σ^½   Y   ⎦
/// ⎣ L          0   0   R⁻¹ ⎦
/// ```
///
/// with `δ = 1e-6 · trace(Σω) / d_x`. Returns `K = L Y⁻¹`. The gain is
/// checked to stabilize every scenario; a violation is reported as a
/// numerical error.
pub fn synth_init(
    scenarios: &ScenarioSet,
    weights: &CostWeights,
    settings: &SolverSettings,
) -> Result<InitOutcome> {
    check_scenarios(scenarios, weights)?;
    let d_x = weights.d_x();
    let d_u = weights.d_u();
    let sigma_scale = weights.sigma_w.amax();
    if sigma_scale <= 0.0 {
        return Err(domain("process noise must be nonzero"));
    }
    // the program is solved for Σω / s and the bound rescaled afterwards
    let sigma = &weights.sigma_w / sigma_scale;
    let sigma_half = linalg::psd_sqrt(&sigma)?;
    let q_half = linalg::psd_sqrt(&weights.q)?;
    let r_inv = r_inverse(weights)?;
    let delta = 1e-6 * sigma.trace() / d_x as f64;
    let eye = DMatrix::identity(d_x, d_x);

    let mut prob = SdpProblem::new();
    let y = prob.declare_variable(Shape::Symmetric(d_x), "Y");
    let l = prob.declare_variable(Shape::Rectangular(d_u, d_x), "L");
    let z = prob.declare_variable(Shape::Symmetric(d_x), "Z");
    for (i, s) in scenarios.systems.iter().enumerate() {
        let lmi = LmiConstraint::new(format!("scenario{i}"), &[d_x, d_x, d_x, d_u])
            .var(0, 0, y)?
            .left_mul(1, 0, s.a.clone(), y)?
            .left_mul(1, 0, s.b.clone(), l)?
            .var(1, 1, y)?
            .left_mul(2, 0, q_half.clone(), y)?
            .constant(2, 2, eye.clone())?
            .var(3, 0, l)?
            .constant(3, 3, r_inv.clone())?;
        prob.add_lmi(lmi)?;
    }
    prob.add_lmi(
        LmiConstraint::new("cost", &[d_x, d_x])
            .var(0, 0, z)?
            .constant(1, 0, sigma_half)?
            .var(1, 1, y)?,
    )?;
    prob.add_lmi(
        LmiConstraint::new("floor", &[d_x])
            .var(0, 0, y)?
            .constant(0, 0, -&eye * delta)?,
    )?;
    prob.set_objective_min(LinearObjective::new().trace(z, eye.clone()))?;

    let sol = prob.solve(settings);
    debug!(
        "init: status {:?}, objective {:e}, {} iterations, backend {}",
        sol.status, sol.objective, sol.diagnostics.iterations, sol.diagnostics.backend_status
    );
    let loosely_solved = sol.status == SdpStatus::IllConditioned
        && sol.diagnostics.min_lmi_margin >= -settings.feas_tol
        && sol.diagnostics.gap <= LOOSE_GAP_FACTOR * settings.gap_tol;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => return Ok(InitOutcome::Infeasible),
        // The LMIs hold at the returned point, so the gain is certified; only
        // the bound is slightly loose.
        _ if loosely_solved => warn!(
            "initialization accepted with duality gap {:e} (backend {})",
            sol.diagnostics.gap, sol.diagnostics.backend_status
        ),
        other => {
            // Nearly infeasible programs can end with an unbounded Z or a
            // stalled solve. Feasibility of the program above is equivalent
            // to that of the homogeneous common-Lyapunov condition, which
            // is checked on its own.
            if !common_lyapunov_feasible(scenarios, settings)? {
                return Ok(InitOutcome::Infeasible);
            }
            return Err(Error::Sdp(format!(
                "initialization program ended with {other:?} ({}, gap {:e}, LMI margin {:e})",
                sol.diagnostics.backend_status, sol.diagnostics.gap, sol.diagnostics.min_lmi_margin
            )));
        }
    }
    let y_val = linalg::symmetrize(sol.value(y));
    let y_inv = y_val
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("initialization returned a non-PD Y".into()))?
        .inverse();
    let gain = Gain::new(sol.value(l) * &y_inv)?;
    let rho = max_scenario_radius(scenarios, &gain)?;
    if rho >= 1.0 {
        return Err(Error::Numerical(format!(
            "initial gain fails to stabilize a scenario (ρ = {rho})"
        )));
    }
    Ok(InitOutcome::Feasible(InitSolution {
        gain,
        y: y_val,
        upper_bound: sol.objective * sigma_scale,
    }))
}

/// Gap multiple under which a feasible but not fully converged
/// initialization is still accepted.
pub const LOOSE_GAP_FACTOR: f64 = 1e3;

/// Whether some `(Y ⪰ I, L)` satisfies `[[Y, *], [A_i Y + B_i L, Y]] ⪰ 0`
/// for every scenario, i.e. a common quadratic Lyapunov function exists.
/// The condition is homogeneous, so the normalization `Y ⪰ I` loses nothing.
pub fn common_lyapunov_feasible(scenarios: &ScenarioSet, settings: &SolverSettings) -> Result<bool> {
    let first = scenarios.systems.first().ok_or_else(|| domain("scenario set must not be empty"))?;
    let (d_x, d_u) = (first.d_x(), first.d_u());
    let eye = DMatrix::identity(d_x, d_x);
    let mut prob = SdpProblem::new();
    let y = prob.declare_variable(Shape::Symmetric(d_x), "Y");
    let l = prob.declare_variable(Shape::Rectangular(d_u, d_x), "L");
    for (i, s) in scenarios.systems.iter().enumerate() {
        prob.add_lmi(
            LmiConstraint::new(format!("scenario{i}"), &[d_x, d_x])
                .var(0, 0, y)?
                .left_mul(1, 0, s.a.clone(), y)?
                .left_mul(1, 0, s.b.clone(), l)?
                .var(1, 1, y)?,
        )?;
    }
    prob.add_lmi(LmiConstraint::new("floor", &[d_x]).var(0, 0, y)?.constant(0, 0, -eye)?)?;
    let sol = prob.solve(settings);
    debug!("common Lyapunov check: {:?} ({})", sol.status, sol.diagnostics.backend_status);
    match sol.status {
        SdpStatus::Optimal => Ok(true),
        SdpStatus::Infeasible => Ok(false),
        other => Err(Error::Sdp(format!(
            "common Lyapunov check ended with {other:?} ({})",
            sol.diagnostics.backend_status
        ))),
    }
}

/// First-order expansion of the matrix inverse around `x_bar`,
/// `T(X) = 2 x̄⁻¹ − x̄⁻¹ X x̄⁻¹`, returned as `(2 x̄⁻¹, x̄⁻¹)`.
#[derive(Debug, Clone)]
pub struct LinearizedInverse {
    pub offset: DMatrix<f64>,
    pub inv: DMatrix<f64>,
}

impl LinearizedInverse {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.offset - &self.inv * x * &self.inv
    }
}

pub fn linearized_inverse(x_bar: &DMatrix<f64>) -> Result<LinearizedInverse> {
    let inv = linalg::symmetrize(x_bar)
        .cholesky()
        .ok_or_else(|| domain("expansion point must be positive definite"))?
        .inverse();
    let inv = linalg::symmetrize(&inv);
    Ok(LinearizedInverse {
        offset: &inv * 2.0,
        inv,
    })
}

#[derive(Debug, Clone)]
pub struct ImproveStep {
    pub gain: Gain,
    pub xs: Vec<DMatrix<f64>>,
    pub objective: f64,
}

/// One convexified improvement step: minimize `(1/M) Σ trace(X_i Σω)`
/// subject to, per scenario,
///
/// ```text
/// ⎡ X_i − Q     *           *   ⎤
/// ⎢ A_i + B_i K T_i(X_i)    *   ⎥ ⪰ 0
/// ⎣ K           0           R⁻¹ ⎦
/// ```
///
/// where `T_i` linearizes the inverse at `x_bars[i]`. When `Q` is singular
/// each `X_i` is additionally kept above `δ I`. Returns `None` if the
/// program is not solved to optimality.
pub fn synth_improve_step(
    scenarios: &ScenarioSet,
    weights: &CostWeights,
    x_bars: &[DMatrix<f64>],
    objective_hint: Option<f64>,
    settings: &SolverSettings,
) -> Result<Option<ImproveStep>> {
    check_scenarios(scenarios, weights)?;
    if x_bars.len() != scenarios.len() {
        return Err(domain("one expansion point per scenario is required"));
    }
    let d_x = weights.d_x();
    let d_u = weights.d_u();
    let m = scenarios.len() as f64;
    let r_inv = r_inverse(weights)?;
    let floor = if linalg::min_eigenvalue(&weights.q) <= 1e-12 * weights.q.amax().max(1.0) {
        Some(1e-6 * weights.sigma_w.trace().max(f64::MIN_POSITIVE) / d_x as f64)
    } else {
        None
    };
    let eye = DMatrix::identity(d_x, d_x);

    let mut prob = SdpProblem::new();
    let k = prob.declare_variable(Shape::Rectangular(d_u, d_x), "K");
    let mut xs = Vec::with_capacity(scenarios.len());
    let mut objective = LinearObjective::new();
    for (i, (s, x_bar)) in scenarios.systems.iter().zip(x_bars).enumerate() {
        let t = linearized_inverse(x_bar)?;
        let x = prob.declare_variable(Shape::Symmetric(d_x), format!("X{i}"));
        let lmi = LmiConstraint::new(format!("scenario{i}"), &[d_x, d_x, d_u])
            .var(0, 0, x)?
            .constant(0, 0, -&weights.q)?
            .constant(1, 0, s.a.clone())?
            .left_mul(1, 0, s.b.clone(), k)?
            .constant(1, 1, t.offset.clone())?
            .term(1, 1, -&t.inv, x, t.inv.clone())?
            .var(2, 0, k)?
            .constant(2, 2, r_inv.clone())?;
        prob.add_lmi(lmi)?;
        if let Some(delta) = floor {
            prob.add_lmi(
                LmiConstraint::new(format!("floor{i}"), &[d_x])
                    .var(0, 0, x)?
                    .constant(0, 0, -&eye * delta)?,
            )?;
        }
        objective = objective.trace(x, &weights.sigma_w / m);
        xs.push(x);
    }
    prob.set_objective_min(objective)?;
    if let Some(h) = objective_hint {
        prob.set_objective_scale(h.abs());
    }
    let sol = prob.solve(settings);
    debug!(
        "improve: status {:?}, objective {:e}, gap {:e}, margin {:e}, {} iterations",
        sol.status,
        sol.objective,
        sol.diagnostics.gap,
        sol.diagnostics.min_lmi_margin,
        sol.diagnostics.iterations
    );
    if sol.status != SdpStatus::Optimal {
        return Ok(None);
    }
    Ok(Some(ImproveStep {
        gain: Gain::new(sol.value(k).clone())?,
        xs: xs.iter().map(|&x| linalg::symmetrize(sol.value(x))).collect(),
        objective: sol.objective,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterateResult {
    pub gain: Gain,
    /// `[trace Z*, f_1, f_2, …]`: the initialization bound followed by the
    /// objective of every accepted improvement step.
    pub objective_trace: Vec<f64>,
    /// Final per-scenario cost bounds `X_i`.
    pub xs: Vec<DMatrix<f64>>,
    /// An improvement step failed and the previous gain was kept.
    pub breakdown: bool,
}

/// Majorize–minimize iterations from the initialization.
///
/// Stops when the relative decrease falls below `stop.rel_tol` or after
/// `stop.max_iter` steps. A step that is not solved, or whose gain
/// destabilizes a scenario, ends the loop with the previous gain and sets
/// `breakdown`.
pub fn synth_iterate(
    scenarios: &ScenarioSet,
    weights: &CostWeights,
    init: &InitSolution,
    stop: &StopRule,
    settings: &SolverSettings,
) -> Result<IterateResult> {
    let y_inv = linalg::symmetrize(
        &init
            .y
            .clone()
            .cholesky()
            .ok_or_else(|| domain("initial Y must be positive definite"))?
            .inverse(),
    );
    let mut result = IterateResult {
        gain: init.gain.clone(),
        objective_trace: vec![init.upper_bound],
        xs: vec![y_inv; scenarios.len()],
        breakdown: false,
    };
    for iter in 0..stop.max_iter {
        let prev = *result.objective_trace.last().expect("non-empty trace");
        let step = synth_improve_step(scenarios, weights, &result.xs, Some(prev), settings)?;
        let Some(step) = step else {
            warn!("improvement step {iter} was not solved; keeping the previous gain");
            result.breakdown = true;
            break;
        };
        let rho = max_scenario_radius(scenarios, &step.gain)?;
        if rho >= 1.0 {
            warn!("improvement step {iter} destabilizes a scenario (ρ = {rho}); keeping the previous gain");
            result.breakdown = true;
            break;
        }
        let decrease = (prev - step.objective) / prev.abs().max(f64::MIN_POSITIVE);
        result.gain = step.gain;
        result.xs = step.xs;
        result.objective_trace.push(step.objective);
        debug!("improvement step {iter}: objective {:e}, relative decrease {decrease:e}", step.objective);
        if decrease < stop.rel_tol {
            break;
        }
    }
    Ok(result)
}

/// Summary of spectral radii over the validation draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub empirical_stability: f64,
    pub m_validation: usize,
    pub pass: bool,
    pub spectral_radius: RadiusSummary,
    pub seed: u64,
}

/// Fraction of `n` fresh truncated draws stabilized by `k`, with the
/// sample count set by the Hoeffding bound of `profile` unless `n` is given.
pub fn validate_with(
    k: &Gain,
    tlaw: &TruncatedLaw,
    profile: &RiskProfile,
    seed: u64,
    n: Option<usize>,
) -> Result<ValidationReport> {
    profile.validate()?;
    let m_validation = match n {
        Some(n) => n,
        None => hoeffding_sample_bound(profile.eps_val, profile.alpha)?,
    };
    if k.k.shape() != (tlaw.base().d_u(), tlaw.base().d_x()) {
        return Err(crate::error::dimension("gain does not match the law"));
    }
    let radii: Vec<f64> = parallel_draws(m_validation, seed, |r| {
        let s = tlaw.sample(r);
        let sys = LinearSystem::from_parameters(&s).expect("law shape");
        spectral_radius(&sys.closed_loop(k)).unwrap_or(f64::INFINITY)
    });
    let stable = radii.iter().filter(|&&r| r < 1.0).count();
    let empirical_stability = stable as f64 / m_validation.max(1) as f64;
    let mut sorted = radii;
    sorted.sort_by(f64::total_cmp);
    let summary = if sorted.is_empty() {
        RadiusSummary { min: f64::NAN, median: f64::NAN, max: f64::NAN }
    } else {
        RadiusSummary {
            min: sorted[0],
            median: sorted[sorted.len() / 2],
            max: sorted[sorted.len() - 1],
        }
    };
    Ok(ValidationReport {
        empirical_stability,
        m_validation,
        pass: empirical_stability >= 1.0 - profile.eps,
        spectral_radius: summary,
        seed,
    })
}

/// [`validate_with`] at the Hoeffding sample size.
pub fn validate(k: &Gain, tlaw: &TruncatedLaw, profile: &RiskProfile, seed: u64) -> Result<ValidationReport> {
    validate_with(k, tlaw, profile, seed, None)
}

pub const CONTROLLER_SCHEMA: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisSeeds {
    pub base: u64,
    pub scenarios: u64,
    pub validation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifiedController {
    pub schema: String,
    pub gain: Gain,
    pub profile: RiskProfile,
    pub m_scenarios: usize,
    pub m_validation: usize,
    pub empirical_stability: f64,
    pub guaranteed_stability_prob: f64,
    pub confidence: f64,
    pub objective_trace: Vec<f64>,
    pub seeds: SynthesisSeeds,
    /// Number of scenario draws used, including the accepted one.
    pub attempts: usize,
    /// The improvement loop stopped early on a failed step.
    pub improvement_breakdown: bool,
    pub law_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SynthesisOutcome {
    Certified(CertifiedController),
    InfeasibleInit { attempt: usize, scenario_seed: u64 },
    RestartsExhausted { attempts: usize, last_empirical_stability: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisOptions {
    pub max_restarts: usize,
    pub stop: StopRule,
    #[serde(skip)]
    pub solver: SolverSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            max_restarts: 10,
            stop: StopRule::default(),
            solver: SolverSettings::default(),
        }
    }
}

/// Draws per attempt: `(scenario seed, validation seed)` from disjoint
/// stream labels.
pub fn attempt_seeds(seed: u64, attempt: usize) -> (u64, u64) {
    (
        rng::child_seed(seed, &[label::SCENARIOS, attempt as u64]),
        rng::child_seed(seed, &[label::VALIDATION, attempt as u64]),
    )
}

/// Scenario draw, initialization, improvement and validation, repeated
/// with fresh scenario and validation sets until validation passes or
/// `1 + max_restarts` attempts are used.
pub fn algorithm1(
    tlaw: &TruncatedLaw,
    profile: &RiskProfile,
    weights: &CostWeights,
    seed: u64,
    options: &SynthesisOptions,
) -> Result<SynthesisOutcome> {
    profile.validate()?;
    if (tlaw.credibility() - profile.c).abs() > 1e-12 {
        return Err(domain(format!(
            "law is truncated at {} but the profile asks for {}",
            tlaw.credibility(),
            profile.c
        )));
    }
    let law = tlaw.base();
    if weights.d_x() != law.d_x() || weights.d_u() != law.d_u() {
        return Err(crate::error::dimension("weights do not match the law"));
    }
    let m = scenario_sample_bound(profile.eps, profile.beta, n_k_for(law.d_x(), law.d_u()))?;
    let mut last = f64::NAN;
    for attempt in 0..=options.max_restarts {
        let (scenario_seed, validation_seed) = attempt_seeds(seed, attempt);
        let scenarios = ScenarioSet::draw(tlaw, m, scenario_seed)?;
        let init = match synth_init(&scenarios, weights, &options.solver)? {
            InitOutcome::Feasible(i) => i,
            InitOutcome::Infeasible => {
                info!("attempt {attempt}: initialization infeasible");
                return Ok(SynthesisOutcome::InfeasibleInit { attempt, scenario_seed });
            }
        };
        let iterated = synth_iterate(&scenarios, weights, &init, &options.stop, &options.solver)?;
        let report = validate(&iterated.gain, tlaw, profile, validation_seed)?;
        info!(
            "attempt {attempt}: {} improvement steps, objective {:e}, empirical stability {:.5}",
            iterated.objective_trace.len() - 1,
            iterated.objective_trace.last().copied().unwrap_or(f64::NAN),
            report.empirical_stability
        );
        last = report.empirical_stability;
        if report.pass {
            return Ok(SynthesisOutcome::Certified(CertifiedController {
                schema: CONTROLLER_SCHEMA.into(),
                gain: iterated.gain,
                profile: *profile,
                m_scenarios: m,
                m_validation: report.m_validation,
                empirical_stability: report.empirical_stability,
                guaranteed_stability_prob: profile.guaranteed_stability_prob(),
                confidence: 1.0 - profile.alpha,
                objective_trace: iterated.objective_trace,
                seeds: SynthesisSeeds {
                    base: seed,
                    scenarios: scenario_seed,
                    validation: validation_seed,
                },
                attempts: attempt + 1,
                improvement_breakdown: iterated.breakdown,
                law_fingerprint: law.fingerprint(),
                config_hash: None,
            }));
        }
    }
    Ok(SynthesisOutcome::RestartsExhausted {
        attempts: options.max_restarts + 1,
        last_empirical_stability: last,
    })
}

/// Per-scenario stationary costs of `k`; unstable scenarios give `+∞`.
pub fn scenario_costs(scenarios: &ScenarioSet, k: &Gain, weights: &CostWeights) -> Result<Vec<f64>> {
    scenarios
        .systems
        .iter()
        .map(|s| lyapunov_cost(s, k, weights).map(|c| c.value()))
        .collect()
}
