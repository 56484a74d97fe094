//! Deterministic linear-control primitives: stability, Riccati and Stein
//! solvers, and the two LQR cost evaluators.
//!
//! Both cost evaluators report per-step costs (time averages), so their
//! values are directly comparable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, numerical, Error, Result};
use crate::linalg::{self, from_rows, to_rows};

/// `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(dimension(format!(
                "A is {:?}, B is {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(domain("system matrices have non-finite entries"));
        }
        Ok(Self { a, b })
    }

    /// Splits `S = [A B]` after the first `d_x` columns.
    pub fn from_parameters(s: &DMatrix<f64>) -> Result<Self> {
        let d_x = s.nrows();
        if s.ncols() < d_x {
            return Err(dimension("parameter matrix narrower than d_x"));
        }
        Self::new(
            s.columns(0, d_x).into_owned(),
            s.columns(d_x, s.ncols() - d_x).into_owned(),
        )
    }

    pub fn parameters(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.d_x(), self.d_x() + self.d_u());
        s.columns_mut(0, self.d_x()).copy_from(&self.a);
        s.columns_mut(self.d_x(), self.d_u()).copy_from(&self.b);
        s
    }

    pub fn d_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &Gain) -> DMatrix<f64> {
        &self.a + &self.b * &k.k
    }
}

/// LQR weights and process-noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, sigma_w: DMatrix<f64>) -> Result<Self> {
        linalg::check_psd(&q, "Q")?;
        linalg::check_psd(&r, "R")?;
        if linalg::min_eigenvalue(&r) <= 1e-12 {
            return Err(domain("R must be positive definite"));
        }
        if !sigma_w.is_square() || sigma_w.nrows() != q.nrows() {
            return Err(dimension("Σω must match Q"));
        }
        for i in 0..sigma_w.nrows() {
            for j in 0..sigma_w.ncols() {
                let v = sigma_w[(i, j)];
                if (i != j && v != 0.0) || (i == j && !(v >= 0.0)) {
                    return Err(domain("Σω must be diagonal and nonnegative"));
                }
            }
        }
        Ok(Self { q, r, sigma_w })
    }

    pub fn d_x(&self) -> usize {
        self.q.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.r.nrows()
    }

    pub fn check_system(&self, sys: &LinearSystem) -> Result<()> {
        if sys.d_x() != self.d_x() || sys.d_u() != self.d_u() {
            return Err(dimension("weights do not match the system dimensions"));
        }
        Ok(())
    }

    /// `Q + Kᵀ R K`.
    pub fn closed_loop_weight(&self, k: &Gain) -> DMatrix<f64> {
        &self.q + k.k.transpose() * &self.r * &k.k
    }
}

/// State feedback `u = K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain {
    pub k: DMatrix<f64>,
}

impl Gain {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(domain("gain has non-finite entries"));
        }
        Ok(Self { k })
    }

    pub fn zeros(d_u: usize, d_x: usize) -> Self {
        Self {
            k: DMatrix::zeros(d_u, d_x),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        to_rows(&self.k)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(from_rows(rows, "gain")?)
    }
}

impl Serialize for Gain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Gain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Gain::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Largest eigenvalue modulus, from a real Schur decomposition.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(dimension("spectral radius of a non-square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(domain("matrix has non-finite entries"));
    }
    match m.nrows() {
        0 => Ok(0.0),
        1 => Ok(m[(0, 0)].abs()),
        2 => {
            // closed form avoids Schur iterations in the hot validation loop
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let tr = a + d;
            let det = a * d - b * c;
            let disc = 0.25 * tr * tr - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                Ok((0.5 * tr + s).abs().max((0.5 * tr - s).abs()))
            } else {
                Ok(det.abs().sqrt())
            }
        }
        _ => {
            // the QR sweep occasionally stalls; an orthogonal similarity or the
            // transpose has the same spectrum and a different iteration path
            let schur = [m.clone(), householder_similarity(m), m.transpose()]
                .into_iter()
                .find_map(|t| nalgebra::linalg::Schur::try_new(t, f64::EPSILON, 10_000))
                .ok_or_else(|| numerical("eigenvalue iteration did not converge"))?;
            Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max))
        }
    }
}

/// `H M H` with the fixed reflection `H = I − 2vvᵀ/‖v‖²`, `v = (1, 2, …, n)`.
fn householder_similarity(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let v = DVector::from_fn(n, |i, _| (i + 1) as f64);
    let h = DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / v.norm_squared());
    &h * m * &h
}

/// Strict discrete-time stability of `A + B K` (ρ = 1 counts as unstable).
pub fn is_stable(sys: &LinearSystem, k: &Gain) -> bool {
    spectral_radius(&sys.closed_loop(k)).is_ok_and(|rho| rho < 1.0)
}

/// Riccati right-hand side `Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn riccati_map(sys: &LinearSystem, weights: &CostWeights, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let at = sys.a.transpose();
    let bt_p = sys.b.transpose() * p;
    let s = &weights.r + &bt_p * &sys.b;
    let s_inv = s
        .cholesky()
        .ok_or_else(|| numerical("R + BᵀPB is not positive definite"))?
        .inverse();
    let apb = &at * p * &sys.b;
    Ok(&weights.q + &at * p * &sys.a - &apb * s_inv * apb.transpose())
}

fn lqr_gain(sys: &LinearSystem, weights: &CostWeights, p: &DMatrix<f64>) -> Result<Gain> {
    let bt_p = sys.b.transpose() * p;
    let s = &weights.r + &bt_p * &sys.b;
    let k = -s
        .cholesky()
        .ok_or_else(|| numerical("R + BᵀPB is not positive definite"))?
        .solve(&(&bt_p * &sys.a));
    Gain::new(k)
}

const DARE_TOL: f64 = 1e-10;

/// Stabilizing solution of the discrete algebraic Riccati equation and the
/// certainty-equivalent gain `K = −(R + BᵀPB)⁻¹BᵀPA`.
///
/// Uses the structure-preserving doubling iteration, then polishes with
/// plain Riccati fixed-point steps until the relative residual is below
/// 1e-10. Fails with [`Error::Stabilizability`] when neither converges
/// within 10,000 total iterations or the closed loop is not stable.
pub fn dare_solve(sys: &LinearSystem, weights: &CostWeights) -> Result<(DMatrix<f64>, Gain)> {
    weights.check_system(sys)?;
    let n = sys.d_x();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv = weights
        .r
        .clone()
        .cholesky()
        .ok_or_else(|| domain("R must be positive definite"))?
        .inverse();

    let mut a = sys.a.clone();
    let mut g = &sys.b * r_inv * sys.b.transpose();
    let mut h = weights.q.clone();
    let mut iterations = 0usize;
    for _ in 0..64 {
        iterations += 1;
        let w = &eye + &g * &h;
        let lu = w.lu();
        let (Some(w_inv_a), Some(w_inv_g)) = (lu.solve(&a), lu.solve(&g)) else {
            return Err(Error::Stabilizability("doubling step became singular".into()));
        };
        let h_next = &h + a.transpose() * &h * &w_inv_a;
        let g_next = &g + &a * w_inv_g * a.transpose();
        let a_next = &a * w_inv_a;
        let finite = h_next.iter().chain(g_next.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Stabilizability("doubling iteration diverged".into()));
        }
        let delta = (&h_next - &h).norm();
        h = linalg::symmetrize(&h_next);
        g = linalg::symmetrize(&g_next);
        a = a_next;
        if delta <= 1e-15 * h.norm().max(f64::MIN_POSITIVE) || a.norm() < 1e-300 {
            break;
        }
    }

    let mut p = h;
    let mut residual = f64::INFINITY;
    while iterations < 10_000 {
        let next = linalg::symmetrize(&riccati_map(sys, weights, &p)?);
        residual = (&next - &p).norm() / p.norm().max(f64::MIN_POSITIVE);
        if !residual.is_finite() {
            return Err(Error::Stabilizability("Riccati iteration diverged".into()));
        }
        iterations += 1;
        if residual <= DARE_TOL {
            break;
        }
        p = next;
    }
    if residual > DARE_TOL {
        return Err(Error::Stabilizability(format!(
            "Riccati residual {residual:e} after {iterations} iterations"
        )));
    }
    let k = lqr_gain(sys, weights, &p)?;
    if !is_stable(sys, &k) {
        return Err(Error::Stabilizability(
            "Riccati fixed point does not stabilize the system".into(),
        ));
    }
    Ok((p, k))
}

/// Solves the Stein equation `P = W + AᵀPA` for stable `A` by doubling.
pub fn dlyap_solve(a_cl: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a_cl.is_square() || w.shape() != a_cl.shape() {
        return Err(dimension("Stein equation operands disagree"));
    }
    let rho = spectral_radius(a_cl)?;
    if rho >= 1.0 {
        return Err(domain(format!("closed loop is not stable (ρ = {rho})")));
    }
    let mut p = w.clone();
    let mut m = a_cl.clone();
    for _ in 0..200 {
        if m.norm() < 1e-15 {
            break;
        }
        p += m.transpose() * &p * &m;
        m = &m * &m;
    }
    // one refinement step absorbs the truncated tail
    let p = linalg::symmetrize(&(w + a_cl.transpose() * &p * a_cl));
    Ok(p)
}

/// Stationary per-step cost; `Unstable` stands for the infinite cost of a
/// closed loop that is not strictly stable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StationaryCost {
    Finite(f64),
    Unstable,
}

impl StationaryCost {
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(v) => v,
            Self::Unstable => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Self::Finite(_))
    }
}

/// Exact stationary LQR cost `trace(P_cl Σω)` with
/// `P_cl = dlyap(A + BK, Q + KᵀRK)`.
pub fn lyapunov_cost(sys: &LinearSystem, k: &Gain, weights: &CostWeights) -> Result<StationaryCost> {
    weights.check_system(sys)?;
    let a_cl = sys.closed_loop(k);
    if spectral_radius(&a_cl)? >= 1.0 {
        return Ok(StationaryCost::Unstable);
    }
    let p = dlyap_solve(&a_cl, &weights.closed_loop_weight(k))?;
    Ok(StationaryCost::Finite((p * &weights.sigma_w).trace()))
}

/// Saturation ceiling of [`finite_horizon_expected_cost`].
pub const COST_CEILING: f64 = 1e300;

/// Expected average cost over `t` steps,
/// `(1/t) Σ_{k<t} trace((Q + KᵀRK) Σ_k)`, `Σ_0 = x0 x0ᵀ`,
/// `Σ_{k+1} = A_cl Σ_k A_clᵀ + Σω`. Saturates at [`COST_CEILING`].
pub fn finite_horizon_expected_cost(
    sys: &LinearSystem,
    k: &Gain,
    weights: &CostWeights,
    x0: &DVector<f64>,
    t: usize,
) -> Result<f64> {
    weights.check_system(sys)?;
    if t == 0 {
        return Err(domain("horizon must be at least 1"));
    }
    if x0.len() != sys.d_x() {
        return Err(dimension("initial state length"));
    }
    let a_cl = sys.closed_loop(k);
    let w = weights.closed_loop_weight(k);
    let mut sigma = x0 * x0.transpose();
    let mut total = 0.0;
    for step in 0..t {
        total += (&w * &sigma).trace();
        if !total.is_finite() || total > COST_CEILING {
            return Ok(COST_CEILING);
        }
        if step + 1 < t {
            sigma = &a_cl * sigma * a_cl.transpose() + &weights.sigma_w;
        }
    }
    Ok((total / t as f64).min(COST_CEILING))
}
