//! Gaussian-process models of one-step dynamics and their linearization.
//!
//! Each state dimension gets an independent zero-mean GP with a shared
//! squared-exponential kernel over `q = (x, u)`. Differentiating the
//! posterior mean and covariance at an operating point gives a Gaussian law
//! over the Jacobian `S = [A B]`, which is what the synthesis code consumes.

use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::distributions::GaussianParameterLaw;
use crate::error::{dimension, domain, numerical, Error, Result};
use crate::linalg::{self, from_rows, to_rows};

/// `k(a, b) = σ_f² · exp(-½ Σ_j (a_j − b_j)² / ℓ_j²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeKernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl SeKernel {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let k = Self {
            signal_variance,
            lengthscales,
        };
        k.validate()?;
        Ok(k)
    }

    /// Same lengthscale on every input dimension.
    pub fn isotropic(signal_variance: f64, lengthscale: f64, d_q: usize) -> Result<Self> {
        Self::new(signal_variance, vec![lengthscale; d_q])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(domain("kernel hyperparameters must be finite and positive"));
        }
        if self.lengthscales.is_empty() {
            return Err(dimension("kernel needs at least one lengthscale"));
        }
        Ok(())
    }

    pub fn d_q(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    pub fn gram(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let rows = row_vectors(inputs);
        let n = rows.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(&rows[i], &rows[j]))
    }

    /// `σ_f² · diag(1/ℓ²)`, the covariance of the gradient of a prior sample.
    pub fn prior_gradient_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.d_q(),
            self.lengthscales.iter().map(|l| self.signal_variance / (l * l)),
        ))
    }
}

fn row_vectors(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// One-step transitions: rows of `inputs` are `q_k = (x_k, u_k)`, rows of
/// `targets` are `x_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDocument {
    d_x: usize,
    d_u: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl TransitionDataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(dimension(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if targets.ncols() == 0 || inputs.ncols() < targets.ncols() {
            return Err(dimension("inputs must be (x, u) with at least d_x columns"));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(domain("dataset has non-finite entries"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn empty(d_x: usize, d_u: usize) -> Self {
        Self {
            inputs: DMatrix::zeros(0, d_x + d_u),
            targets: DMatrix::zeros(0, d_x),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_x(&self) -> usize {
        self.targets.ncols()
    }

    pub fn d_u(&self) -> usize {
        self.inputs.ncols() - self.d_x()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    /// The first `n` rows.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs.rows(0, n).into_owned(),
            targets: self.targets.rows(0, n).into_owned(),
        }
    }

    /// CSV with header `q_1..q_{d_x+d_u}, y_1..y_{d_x}`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (1..=self.inputs.ncols())
            .map(|i| format!("q_{i}"))
            .chain((1..=self.d_x()).map(|i| format!("y_{i}")))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for k in 0..self.len() {
            let rec: Vec<String> = self
                .inputs
                .row(k)
                .iter()
                .chain(self.targets.row(k).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("line 1: {e}")))?
            .clone();
        let mut d_q = 0;
        let mut d_x = 0;
        for (col, name) in header.iter().enumerate() {
            let expect_q = format!("q_{}", d_q + 1);
            let expect_y = format!("y_{}", d_x + 1);
            if d_x == 0 && name == expect_q {
                d_q += 1;
            } else if name == expect_y {
                d_x += 1;
            } else {
                return Err(Error::Parse(format!(
                    "line 1: unexpected header '{name}' in column {}",
                    col + 1
                )));
            }
        }
        if d_x == 0 || d_q < d_x {
            return Err(Error::Parse(
                "line 1: header must be q_1..q_n followed by y_1..y_m with n ≥ m ≥ 1".into(),
            ));
        }
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Parse(format!("line {line}: {e}"))
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != d_q + d_x {
                return Err(Error::Parse(format!(
                    "line {line}: expected {} fields, found {}",
                    d_q + d_x,
                    rec.len()
                )));
            }
            for (col, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Parse(format!("line {line}, column {}: '{field}' is not a number", col + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!(
                        "line {line}, column {}: non-finite value",
                        col + 1
                    )));
                }
                values.push(v);
            }
        }
        let n = values.len() / (d_q + d_x);
        let all = DMatrix::from_row_slice(n, d_q + d_x, &values);
        Self::new(all.columns(0, d_q).into_owned(), all.columns(d_q, d_x).into_owned())
    }

    pub fn to_json(&self) -> String {
        let doc = DatasetDocument {
            d_x: self.d_x(),
            d_u: self.d_u(),
            inputs: to_rows(&self.inputs),
            targets: to_rows(&self.targets),
        };
        serde_json::to_string_pretty(&doc).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DatasetDocument = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("line {}: {e}", e.line())))?;
        let d_q = doc.d_x + doc.d_u;
        let inputs = if doc.inputs.is_empty() {
            DMatrix::zeros(0, d_q)
        } else {
            from_rows(&doc.inputs, "inputs")?
        };
        let targets = if doc.targets.is_empty() {
            DMatrix::zeros(0, doc.d_x)
        } else {
            from_rows(&doc.targets, "targets")?
        };
        if inputs.ncols() != d_q || targets.ncols() != doc.d_x {
            return Err(dimension("dataset columns disagree with d_x/d_u"));
        }
        Self::new(inputs, targets)
    }

    /// Loads CSV or JSON, chosen by file extension (`.json` is JSON).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_csv_reader(text.as_bytes())
        }
    }
}

/// What the GP regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `x_{k+1}` itself.
    #[default]
    Successor,
    /// `x_{k+1} − x_k`; predictions and Jacobians add the identity back.
    Delta,
}

#[derive(Debug, Clone)]
struct OutputModel {
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

/// Posterior of `d_x` independent GPs sharing one kernel.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: SeKernel,
    dataset: TransitionDataset,
    noise_variances: Vec<f64>,
    mode: TargetMode,
    train: Vec<Vec<f64>>,
    outputs: Vec<OutputModel>,
}

impl GpPosterior {
    pub fn fit(
        dataset: TransitionDataset,
        kernel: SeKernel,
        noise_variances: Vec<f64>,
        mode: TargetMode,
    ) -> Result<Self> {
        kernel.validate()?;
        let d_x = dataset.d_x();
        if kernel.d_q() != dataset.inputs.ncols() {
            return Err(dimension(format!(
                "kernel has {} lengthscales but inputs have {} columns",
                kernel.d_q(),
                dataset.inputs.ncols()
            )));
        }
        if noise_variances.len() != d_x {
            return Err(dimension(format!("expected {d_x} noise variances")));
        }
        if !noise_variances.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(domain("noise variances must be positive"));
        }
        let gram = kernel.gram(&dataset.inputs);
        let n = dataset.len();
        let mut outputs = Vec::with_capacity(d_x);
        for (i, &noise) in noise_variances.iter().enumerate() {
            let mut k = gram.clone();
            for j in 0..n {
                k[(j, j)] += noise;
            }
            let chol = match Cholesky::new(k.clone()) {
                Some(c) => c,
                None => {
                    let jitter = 1e-8 * kernel.signal_variance;
                    for j in 0..n {
                        k[(j, j)] += jitter;
                    }
                    Cholesky::new(k).ok_or_else(|| {
                        numerical(format!("Gram matrix of output {} is not positive definite", i + 1))
                    })?
                }
            };
            let mut y: DVector<f64> = dataset.targets.column(i).into_owned();
            if mode == TargetMode::Delta {
                y -= dataset.inputs.column(i);
            }
            let weights = chol.solve(&y);
            outputs.push(OutputModel { chol, weights });
        }
        let train = row_vectors(&dataset.inputs);
        Ok(Self {
            kernel,
            dataset,
            noise_variances,
            mode,
            train,
            outputs,
        })
    }

    pub fn kernel(&self) -> &SeKernel {
        &self.kernel
    }

    pub fn dataset(&self) -> &TransitionDataset {
        &self.dataset
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    pub fn target_mode(&self) -> TargetMode {
        self.mode
    }

    pub fn d_x(&self) -> usize {
        self.dataset.d_x()
    }

    pub fn d_q(&self) -> usize {
        self.kernel.d_q()
    }

    fn check_input(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.d_q() {
            return Err(dimension(format!("expected input of length {}, got {}", self.d_q(), q.len())));
        }
        Ok(())
    }

    fn cross(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.train.len(), self.train.iter().map(|x| self.kernel.eval(q, x)))
    }

    /// Predictive mean and latent variance of `f(q)` per output.
    pub fn predict(&self, q: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_input(q)?;
        let k = self.cross(q);
        let prior = self.kernel.signal_variance;
        let mut mean = DVector::zeros(self.d_x());
        let mut var = DVector::zeros(self.d_x());
        for (i, out) in self.outputs.iter().enumerate() {
            mean[i] = k.dot(&out.weights);
            if self.mode == TargetMode::Delta {
                mean[i] += q[i];
            }
            let v = if k.is_empty() { prior } else { prior - k.dot(&out.chol.solve(&k)) };
            var[i] = if v < 0.0 && v > -1e-12 * prior { 0.0 } else { v.max(0.0) };
        }
        Ok((mean, var))
    }

    /// `D[j, n] = ∂k(q, x_n)/∂q_j`.
    fn cross_gradient(&self, q: &[f64]) -> DMatrix<f64> {
        let k = self.cross(q);
        let ls = &self.kernel.lengthscales;
        DMatrix::from_fn(self.d_q(), self.train.len(), |j, n| {
            -k[n] * (q[j] - self.train[n][j]) / (ls[j] * ls[j])
        })
    }

    /// Law of the Jacobian `∂f/∂q` at `q_star`.
    ///
    /// Row `i` of the Jacobian has mean `D w_i` and covariance
    /// `σ_f² diag(1/ℓ²) − D (K + σ_i² I)⁻¹ Dᵀ`. Rows are independent, so the
    /// covariance of `vec(S)` is block-diagonal across rows; Kronecker
    /// factors are attached when all row blocks are proportional.
    pub fn linearize(&self, q_star: &[f64]) -> Result<GaussianParameterLaw> {
        self.check_input(q_star)?;
        let d_x = self.d_x();
        let d_q = self.d_q();
        let grad = self.cross_gradient(q_star);
        let prior = self.kernel.prior_gradient_covariance();
        let mut mean = DMatrix::zeros(d_x, d_q);
        let mut blocks = Vec::with_capacity(d_x);
        for (i, out) in self.outputs.iter().enumerate() {
            let row = &grad * &out.weights;
            mean.row_mut(i).copy_from(&row.transpose());
            let cov = if self.train.is_empty() {
                prior.clone()
            } else {
                let half = out.chol.l().solve_lower_triangular(&grad.transpose()).ok_or_else(|| {
                    numerical("triangular solve failed in linearization")
                })?;
                clip_psd(&(&prior - half.transpose() * half))?
            };
            blocks.push(cov);
        }
        if self.mode == TargetMode::Delta {
            for i in 0..d_x {
                mean[(i, i)] += 1.0;
            }
        }
        let mut full = DMatrix::zeros(d_x * d_q, d_x * d_q);
        for (i, b) in blocks.iter().enumerate() {
            for j in 0..d_q {
                for l in 0..d_q {
                    full[(j * d_x + i, l * d_x + i)] = b[(j, l)];
                }
            }
        }
        let law = GaussianParameterLaw::new(mean, full)?;
        match proportional_factors(&blocks) {
            Some((row_cov, col_cov)) => Ok(law.clone().with_kronecker_factors(row_cov, col_cov).unwrap_or(law)),
            None => Ok(law),
        }
    }

    /// `diag(σ²_ω,1, …, σ²_ω,d_x)`.
    pub fn process_noise_estimate(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.noise_variances))
    }

    /// Persisted form; the posterior is refitted on load.
    pub fn to_document(&self, dataset_path: Option<&Path>) -> GpDocument {
        GpDocument {
            schema: GP_SCHEMA.into(),
            kernel: self.kernel.clone(),
            noise_variances: self.noise_variances.clone(),
            target_mode: self.mode,
            dataset_path: dataset_path.map(Path::to_path_buf),
            dataset: match dataset_path {
                Some(_) => None,
                None => Some(serde_json::from_str(&self.dataset.to_json()).expect("roundtrip")),
            },
        }
    }

    pub fn from_document(doc: &GpDocument) -> Result<Self> {
        if doc.schema != GP_SCHEMA {
            return Err(Error::Parse(format!("unsupported GP schema '{}'", doc.schema)));
        }
        let dataset = match (&doc.dataset, &doc.dataset_path) {
            (Some(v), _) => TransitionDataset::from_json(&v.to_string())?,
            (None, Some(p)) => TransitionDataset::load(p)?,
            (None, None) => return Err(Error::Parse("GP document names no dataset".into())),
        };
        Self::fit(dataset, doc.kernel.clone(), doc.noise_variances.clone(), doc.target_mode)
    }
}

pub const GP_SCHEMA: &str = "gp-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpDocument {
    pub schema: String,
    pub kernel: SeKernel,
    pub noise_variances: Vec<f64>,
    #[serde(default)]
    pub target_mode: TargetMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<serde_json::Value>,
}

/// Projects a nearly-PSD symmetric matrix onto the PSD cone. Eigenvalues
/// below `-1e-8 · trace` indicate a genuine failure rather than roundoff.
fn clip_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = linalg::sym_eigen(m);
    let tol = 1e-8 * m.trace().abs().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() < -tol {
        return Err(numerical(format!(
            "posterior Jacobian covariance is indefinite (eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    if eig.eigenvalues.min() >= 0.0 {
        return Ok(linalg::symmetrize(m));
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0));
    Ok(linalg::symmetrize(
        &(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()),
    ))
}

/// If every block is a nonnegative multiple of a common matrix, returns
/// `(diag(multiples), common)`.
fn proportional_factors(blocks: &[DMatrix<f64>]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let base = blocks.iter().max_by(|a, b| a.norm().total_cmp(&b.norm()))?.clone();
    let base_norm = base.norm();
    if base_norm == 0.0 {
        return Some((DMatrix::zeros(blocks.len(), blocks.len()), base));
    }
    let mut scales = Vec::with_capacity(blocks.len());
    for b in blocks {
        let s = b.dot(&base) / (base_norm * base_norm);
        if (b - &base * s).norm() > 1e-10 * base_norm {
            return None;
        }
        scales.push(s.max(0.0));
    }
    Some((DMatrix::from_diagonal(&DVector::from_vec(scales)), base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d_x: usize, d_u: usize) -> TransitionDataset {
        let inputs: DMatrix<f64> = DMatrix::from_fn(n, d_x + d_u, |_, _| rng.random_range(-1.0..1.0));
        let targets = DMatrix::from_fn(n, d_x, |i, j| {
            (inputs[(i, j)] * 1.3).sin() + 0.5 * inputs[(i, d_x + d_u - 1)] + 0.05 * rng.random::<f64>()
        });
        TransitionDataset::new(inputs, targets).unwrap()
    }

    #[test]
    fn kernel_basics() {
        let k = SeKernel::new(2.0, vec![0.5, 1.5]).unwrap();
        assert_eq!(k.eval(&[0.3, -1.0], &[0.3, -1.0]), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(15, 2, |_, _| rng.random_range(-2.0..2.0));
        let g = k.gram(&x);
        assert_eq!(g, g.transpose());
        assert!(linalg::min_eigenvalue(&g) >= -1e-10 * g.trace());
        assert!(SeKernel::new(0.0, vec![1.0]).is_err());
        assert!(SeKernel::new(1.0, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn interpolates_single_point() {
        let ds = TransitionDataset::new(
            DMatrix::from_row_slice(1, 2, &[0.2, -0.4]),
            DMatrix::from_row_slice(1, 1, &[1.7]),
        )
        .unwrap();
        let gp = GpPosterior::fit(ds, SeKernel::isotropic(1.0, 1.0, 2).unwrap(), vec![1e-12], TargetMode::Successor).unwrap();
        let (m, v) = gp.predict(&[0.2, -0.4]).unwrap();
        assert!((m[0] - 1.7).abs() < 1e-6);
        assert!(v[0] < 1e-6);
    }

    #[test]
    fn empty_data_is_prior() {
        let gp = GpPosterior::fit(
            TransitionDataset::empty(2, 1),
            SeKernel::new(1.5, vec![0.5, 1.0, 2.0]).unwrap(),
            vec![1e-3, 1e-3],
            TargetMode::Successor,
        )
        .unwrap();
        let (m, v) = gp.predict(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0]);
        assert_eq!(v.as_slice(), &[1.5, 1.5]);
        let law = gp.linearize(&[0.0, 0.0, 0.0]).unwrap();
        assert!(law.mean().iter().all(|&x| x == 0.0));
        let cov = law.covariance();
        let expected = [1.5 / 0.25, 1.5, 1.5 / 4.0];
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(cov[(j * 2 + i, j * 2 + i)], expected[j]);
            }
        }
        // rows independent and prior blocks identical, so Kronecker factors exist
        assert!(law.kronecker_factors().is_some());
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0f64..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin() + 0.1 * rng.random::<f64>()).collect();
        let (sf2, ell, noise) = (1.3, 0.7, 0.01);
        let ds = TransitionDataset::new(
            DMatrix::from_column_slice(20, 1, &x),
            DMatrix::from_column_slice(20, 1, &y),
        )
        .unwrap();
        let gp = GpPosterior::fit(ds, SeKernel::new(sf2, vec![ell]).unwrap(), vec![noise], TargetMode::Successor).unwrap();

        // explicit inverse, written out independently of the kernel type
        let kf = |a: f64, b: f64| sf2 * (-0.5 * ((a - b) / ell).powi(2)).exp();
        let kmat = DMatrix::from_fn(20, 20, |i, j| kf(x[i], x[j]) + if i == j { noise } else { 0.0 });
        let kinv = kmat.try_inverse().unwrap();
        let yv = DVector::from_column_slice(&y);
        for q in [-2.5, -0.3, 0.0, 1.1, 4.0] {
            let ks = DVector::from_iterator(20, x.iter().map(|&xi| kf(q, xi)));
            let mean = ks.dot(&(&kinv * &yv));
            let var = sf2 - ks.dot(&(&kinv * &ks));
            let (m, v) = gp.predict(&[q]).unwrap();
            assert!((m[0] - mean).abs() < 1e-8, "{q}: {} vs {mean}", m[0]);
            assert!((v[0] - var).abs() < 1e-8);
        }
        // variance at data is below variance far away
        let (_, near) = gp.predict(&[x[0]]).unwrap();
        let (_, far) = gp.predict(&[10.0]).unwrap();
        assert!(near[0] <= far[0]);
    }

    #[test]
    fn jacobian_mean_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [TargetMode::Successor, TargetMode::Delta] {
            let ds = random_dataset(&mut rng, 30, 2, 1);
            let kernel = SeKernel::new(1.0, vec![0.8, 1.1, 0.9]).unwrap();
            let gp = GpPosterior::fit(ds, kernel, vec![1e-3, 2e-3], mode).unwrap();
            let q = [0.1, -0.2, 0.3];
            let law = gp.linearize(&q).unwrap();
            let h = 1e-4;
            for j in 0..3 {
                let mut qp = q;
                let mut qm = q;
                qp[j] += h;
                qm[j] -= h;
                let fd = (gp.predict(&qp).unwrap().0 - gp.predict(&qm).unwrap().0) / (2.0 * h);
                for i in 0..2 {
                    assert!((law.mean()[(i, j)] - fd[i]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn jacobian_covariance_contracts_with_nested_data() {
        // trajectories of a known linear system
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut x = DVector::from_vec(vec![0.05, -0.05]);
        for _ in 0..40 {
            let u: f64 = rng.random_range(-0.2..0.2);
            let next = &a * &x + DVector::from_vec(vec![0.0, u]);
            inputs.extend([x[0], x[1], u]);
            targets.extend([next[0], next[1]]);
            x = next;
        }
        let ds = TransitionDataset::new(
            DMatrix::from_row_slice(40, 3, &inputs),
            DMatrix::from_row_slice(40, 2, &targets),
        )
        .unwrap();
        let kernel = SeKernel::isotropic(1.0, 1.0, 3).unwrap();
        let mut prev = f64::INFINITY;
        for n in [0, 5, 10, 20, 40] {
            let gp = GpPosterior::fit(ds.prefix(n), kernel.clone(), vec![1e-4; 2], TargetMode::Successor).unwrap();
            let tr = gp.linearize(&[0.0, 0.0, 0.0]).unwrap().covariance().trace();
            assert!(tr <= prev * (1.0 + 1e-12) + 1e-12, "{n}: {tr} > {prev}");
            prev = tr;
        }
    }

    #[test]
    fn covariance_blocks_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds = random_dataset(&mut rng, 25, 3, 2);
        let gp = GpPosterior::fit(ds, SeKernel::isotropic(1.0, 0.9, 5).unwrap(), vec![1e-3; 3], TargetMode::Successor).unwrap();
        let law = gp.linearize(&[0.0; 5]).unwrap();
        let c = law.covariance();
        assert!(linalg::min_eigenvalue(c) >= -1e-10 * c.trace());
        // different noise levels per output would break proportionality; equal noise keeps it
        assert!(law.kronecker_factors().is_some());
    }

    #[test]
    fn process_noise_is_diagonal() {
        let gp = GpPosterior::fit(
            TransitionDataset::empty(3, 3),
            SeKernel::isotropic(1.0, 1.0, 6).unwrap(),
            vec![1e-3; 3],
            TargetMode::Successor,
        )
        .unwrap();
        assert_eq!(gp.process_noise_estimate(), DMatrix::identity(3, 3) * 1e-3);
        let one = GpPosterior::fit(
            TransitionDataset::empty(1, 0),
            SeKernel::isotropic(1.0, 1.0, 1).unwrap(),
            vec![0.25],
            TargetMode::Successor,
        )
        .unwrap();
        assert_eq!(one.process_noise_estimate(), DMatrix::from_element(1, 1, 0.25));
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = random_dataset(&mut rng, 4, 2, 1);
        let back = TransitionDataset::from_csv_reader(ds.to_csv().as_bytes()).unwrap();
        assert_eq!(back, ds);
        let json = TransitionDataset::from_json(&ds.to_json()).unwrap();
        assert_eq!(json, ds);

        let bad = "q_1,q_2,y_1\n0.1,0.2,0.3\n0.1,oops,0.3\n";
        let err = TransitionDataset::from_csv_reader(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let short = "q_1,q_2,y_1\n0.1,0.2\n";
        let err = TransitionDataset::from_csv_reader(short.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let header = "q_1,x,y_1\n";
        assert!(TransitionDataset::from_csv_reader(header.as_bytes()).is_err());
        let empty = TransitionDataset::from_csv_reader("q_1,q_2,y_1\n".as_bytes()).unwrap();
        assert_eq!((empty.len(), empty.d_x(), empty.d_u()), (0, 1, 1));
    }

    #[test]
    fn document_refits_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&mut rng, 10, 2, 1);
        let gp = GpPosterior::fit(ds, SeKernel::isotropic(1.0, 1.0, 3).unwrap(), vec![1e-3; 2], TargetMode::Delta).unwrap();
        let doc = gp.to_document(None);
        let text = serde_json::to_string(&doc).unwrap();
        let back = GpPosterior::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        let q = [0.1, 0.2, 0.3];
        assert_eq!(gp.predict(&q).unwrap(), back.predict(&q).unwrap());
        assert_eq!(back.target_mode(), TargetMode::Delta);
    }
}
