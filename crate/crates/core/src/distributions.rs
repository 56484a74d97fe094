//! Probability laws over system parameters `S = [A B]`.
//!
//! A [`GaussianParameterLaw`] is a multivariate normal over `vec(S)`, where
//! `vec` stacks the columns of the `d_x × (d_x + d_u)` matrix (column-major,
//! see [`crate::linalg::vec_col_major`]). When the law is matrix normal with
//! among-row covariance `U` (`d_x × d_x`) and among-column covariance `V`
//! (`(d_x + d_u) × (d_x + d_u)`), the column-major convention gives
//! `Cov(vec S) = V ⊗ U`; the optional Kronecker factors are stored in that
//! order.
//!
//! [`TruncatedLaw`] restricts a law to its `c`-credible Mahalanobis
//! ellipsoid and is sampled by rejection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dimension, domain, numerical, Error, Result};
use crate::linalg::{self, from_rows, to_rows, vec_col_major};

/// Relative eigenvalue cutoff of the pseudo-inverse used by
/// [`GaussianParameterLaw::mahalanobis_sq`].
pub const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GaussianParameterLaw {
    d_x: usize,
    d_u: usize,
    mean: DMatrix<f64>,
    covariance: DMatrix<f64>,
    kron: Option<(DMatrix<f64>, DMatrix<f64>)>,
    factor: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl GaussianParameterLaw {
    /// Builds a law from the `d_x × (d_x + d_u)` mean and the full covariance
    /// of `vec(S)`.
    pub fn new(mean: DMatrix<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d_x = mean.nrows();
        let d_q = mean.ncols();
        if d_x == 0 || d_q < d_x {
            return Err(dimension(format!(
                "mean must be d_x × (d_x + d_u), got {}×{}",
                d_x, d_q
            )));
        }
        let d_s = d_x * d_q;
        if covariance.shape() != (d_s, d_s) {
            return Err(dimension(format!(
                "covariance must be {d_s}×{d_s}, got {:?}",
                covariance.shape()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(domain("mean has non-finite entries"));
        }
        linalg::check_psd(&covariance, "parameter covariance")?;
        let covariance = linalg::symmetrize(&covariance);
        let factor = linalg::psd_factor(&covariance)?;
        let precision = linalg::pinv_psd(&covariance, PINV_CUTOFF);
        Ok(Self {
            d_x,
            d_u: d_q - d_x,
            mean,
            covariance,
            kron: None,
            factor,
            precision,
        })
    }

    /// A point mass at `mean`.
    pub fn degenerate(mean: DMatrix<f64>) -> Result<Self> {
        let d_s = mean.len();
        Self::new(mean, DMatrix::zeros(d_s, d_s))
    }

    /// Matrix-normal law with among-row covariance `row_cov` and
    /// among-column covariance `col_cov`.
    pub fn matrix_normal(
        mean: DMatrix<f64>,
        row_cov: DMatrix<f64>,
        col_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let cov = col_cov.kronecker(&row_cov);
        Self::new(mean, cov)?.with_kronecker_factors(row_cov, col_cov)
    }

    /// Attaches Kronecker factors, checking `col_cov ⊗ row_cov` against the
    /// stored covariance to 1e-8 relative Frobenius error.
    pub fn with_kronecker_factors(
        mut self,
        row_cov: DMatrix<f64>,
        col_cov: DMatrix<f64>,
    ) -> Result<Self> {
        if row_cov.shape() != (self.d_x, self.d_x) || col_cov.shape() != (self.d_q(), self.d_q())
        {
            return Err(dimension("Kronecker factor shapes do not match the law"));
        }
        let k = col_cov.kronecker(&row_cov);
        let scale = self.covariance.norm().max(f64::MIN_POSITIVE);
        if (&k - &self.covariance).norm() > 1e-8 * scale {
            return Err(domain("Kronecker factors do not reproduce the covariance"));
        }
        self.kron = Some((row_cov, col_cov));
        Ok(self)
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_u(&self) -> usize {
        self.d_u
    }

    pub fn d_q(&self) -> usize {
        self.d_x + self.d_u
    }

    /// Number of parameters, `d_x · (d_x + d_u)`.
    pub fn d_s(&self) -> usize {
        self.d_x * self.d_q()
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `(row_cov, col_cov)` when the law is known to be matrix normal.
    pub fn kronecker_factors(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.kron.as_ref().map(|(u, v)| (u, v))
    }

    pub fn is_degenerate(&self) -> bool {
        self.covariance.iter().all(|&v| v == 0.0)
    }

    /// One draw of `S`. Consumes exactly `d_s` standard normals from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let z = DVector::from_fn(self.d_s(), |_, _| rng.sample::<f64, _>(StandardNormal));
        if self.is_degenerate() {
            return self.mean.clone();
        }
        let v = vec_col_major(&self.mean) + &self.factor * z;
        linalg::unvec(&v, self.d_x, self.d_q())
    }

    /// Squared Mahalanobis distance of `s` from the mean, using the
    /// pseudo-inverse of the covariance (cutoff [`PINV_CUTOFF`]).
    pub fn mahalanobis_sq(&self, s: &DMatrix<f64>) -> Result<f64> {
        if s.shape() != self.mean.shape() {
            return Err(dimension(format!(
                "expected {:?} parameter matrix, got {:?}",
                self.mean.shape(),
                s.shape()
            )));
        }
        let d = vec_col_major(&(s - &self.mean));
        Ok(d.dot(&(&self.precision * &d)).max(0.0))
    }

    pub fn to_document(&self, credibility: Option<f64>) -> LawDocument {
        LawDocument {
            d_x: self.d_x,
            d_u: self.d_u,
            mean: to_rows(&self.mean),
            covariance: to_rows(&self.covariance),
            credibility,
            process_noise: None,
            provenance: None,
        }
    }

    pub fn from_document(doc: &LawDocument) -> Result<Self> {
        let mean = from_rows(&doc.mean, "mean")?;
        if mean.shape() != (doc.d_x, doc.d_x + doc.d_u) {
            return Err(dimension("mean shape disagrees with d_x/d_u"));
        }
        Self::new(mean, from_rows(&doc.covariance, "covariance")?)
    }

    /// SHA-256 of the serialized law, used as scenario-set provenance.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.to_document(None)).expect("law serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// JSON form of a parameter law. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawDocument {
    pub d_x: usize,
    pub d_u: usize,
    pub mean: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credibility: Option<f64>,
    /// Diagonal of the process-noise covariance, when the law comes from a
    /// fitted model that also estimates it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_noise: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<crate::artifact::Provenance>,
}

/// A Gaussian law restricted to its `c`-credible ellipsoid
/// `{S : mahalanobis_sq(S) ≤ χ²_{d_s}(c)}`.
#[derive(Debug, Clone)]
pub struct TruncatedLaw {
    base: GaussianParameterLaw,
    credibility: f64,
    radius_sq: f64,
}

impl TruncatedLaw {
    pub fn new(base: GaussianParameterLaw, credibility: f64) -> Result<Self> {
        if !(credibility > 0.0 && credibility < 1.0) {
            return Err(domain(format!("credibility must be in (0,1), got {credibility}")));
        }
        let radius_sq = chi2_quantile(base.d_s(), credibility)?;
        Ok(Self {
            base,
            credibility,
            radius_sq,
        })
    }

    pub fn base(&self) -> &GaussianParameterLaw {
        &self.base
    }

    pub fn credibility(&self) -> f64 {
        self.credibility
    }

    pub fn radius_sq(&self) -> f64 {
        self.radius_sq
    }

    pub fn contains(&self, s: &DMatrix<f64>) -> bool {
        self.base
            .mahalanobis_sq(s)
            .is_ok_and(|d| d <= self.radius_sq)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        self.sample_counted(rng).0
    }

    /// Rejection sampling; also returns the number of base draws used.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R) -> (DMatrix<f64>, usize) {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let s = self.base.sample(rng);
            if self.contains(&s) {
                return (s, attempts);
            }
        }
    }

    /// A point on the boundary of the credible ellipsoid, in a uniformly
    /// random whitened direction. Degenerate laws return the mean.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let s = self.base.sample(rng);
        let d = self.base.mahalanobis_sq(&s).unwrap_or(0.0);
        if d <= 0.0 {
            return self.base.mean.clone();
        }
        let scale = (self.radius_sq / d).sqrt();
        &self.base.mean + (s - &self.base.mean) * scale
    }

    pub fn to_document(&self) -> LawDocument {
        self.base.to_document(Some(self.credibility))
    }
}

/// Risk and confidence parameters `(c, ε, β, ε_val, α)` of the synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskProfile {
    /// Credibility of the truncated posterior.
    pub c: f64,
    /// Scenario-program risk.
    pub eps: f64,
    /// Scenario-program confidence slack.
    pub beta: f64,
    /// Validation risk.
    pub eps_val: f64,
    /// Validation confidence slack.
    pub alpha: f64,
}

impl Default for RiskProfile {
    fn default() -> Self {
        Self {
            c: 0.98,
            eps: 0.02,
            beta: 0.20,
            eps_val: 0.01,
            alpha: 0.001,
        }
    }
}

impl RiskProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c", self.c),
            ("eps", self.eps),
            ("beta", self.beta),
            ("eps_val", self.eps_val),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(domain(format!("{name} must be in (0,1), got {v}")));
            }
        }
        if self.eps + self.eps_val >= self.c {
            return Err(domain("eps + eps_val must be below c"));
        }
        Ok(())
    }

    /// Probability of closed-loop stability under the posterior that the
    /// certificate guarantees, `c - ε - ε_val`.
    pub fn guaranteed_stability_prob(&self) -> f64 {
        self.c - self.eps - self.eps_val
    }
}

/// Quantile of the chi-squared distribution: the `x` with
/// `P(dof/2, x/2) = p`, `P` the regularized lower incomplete gamma function.
pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(domain("chi-squared degrees of freedom must be positive"));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(domain(format!("quantile level must be in [0,1), got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let a = dof as f64 / 2.0;
    let cdf = |x: f64| statrs::function::gamma::gamma_lr(a, x / 2.0);
    let mut lo = 0.0;
    let mut hi = dof as f64;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(numerical("chi-squared quantile bracket overflow"));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One Wishart draw with `dof` degrees of freedom and the given scale
/// (Bartlett decomposition).
pub fn sample_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if dof < d {
        return Err(domain(format!("Wishart needs dof ≥ {d}, got {dof}")));
    }
    linalg::check_psd(scale, "Wishart scale")?;
    let l = linalg::psd_factor(scale).map_err(|e| Error::Domain(e.to_string()))?;
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new((dof - i) as f64).map_err(|e| domain(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    Ok(linalg::symmetrize(&(&la * la.transpose())))
}

/// Scenario count `⌈(2/ε)·ln(1/β) + n_k⌉` for the convex scenario program.
pub fn scenario_sample_bound(eps: f64, beta: f64, n_k: usize) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(domain("eps and beta must lie in (0,1)"));
    }
    if n_k == 0 {
        return Err(domain("n_k must be positive"));
    }
    Ok(((2.0 / eps) * (1.0 / beta).ln() + n_k as f64).ceil() as usize)
}

/// Validation sample count `⌈ln(1/α) / (2 ε_val²)⌉` (at least 1) from the
/// one-sided Hoeffding inequality.
pub fn hoeffding_sample_bound(eps_val: f64, alpha: f64) -> Result<usize> {
    if !(eps_val > 0.0 && eps_val < 1.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain("eps_val and alpha must lie in (0,1)"));
    }
    let m = ((1.0 / alpha).ln() / (2.0 * eps_val * eps_val)).ceil();
    Ok((m as usize).max(1))
}

/// Decision-variable count of the initialization program, `2 d_x² + d_x d_u`.
pub fn n_k_for(d_x: usize, d_u: usize) -> usize {
    2 * d_x * d_x + d_x * d_u
}
