//! Linear-objective semidefinite programs with affine block-LMI constraints.
//!
//! Problems are assembled with [`SdpProblem`]: declare matrix variables,
//! add [`LmiConstraint`]s built block by block from constant blocks and
//! terms `L · V · R` (or `L · Vᵀ · R`), and set a trace objective. Only the
//! lower block triangle is specified; the upper part is implied by symmetry.
//!
//! The numerical work is delegated to the Clarabel interior-point solver.
//! Every returned solution is re-verified here: a solution is reported
//! [`SdpStatus::Optimal`] only if each LMI evaluated at the returned point
//! has minimum eigenvalue ≥ `-feas_tol · (1 + ‖constant‖)` and the relative
//! duality gap is within `gap_tol`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Symmetric(usize),
    Rectangular(usize, usize),
}

impl Shape {
    fn dims(self) -> (usize, usize) {
        match self {
            Shape::Symmetric(n) => (n, n),
            Shape::Rectangular(m, n) => (m, n),
        }
    }

    fn n_scalars(self) -> usize {
        match self {
            Shape::Symmetric(n) => n * (n + 1) / 2,
            Shape::Rectangular(m, n) => m * n,
        }
    }
}

/// Handle to a declared matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdpVariable {
    id: usize,
    shape: Shape,
    offset: usize,
}

impl SdpVariable {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> (usize, usize) {
        self.shape.dims()
    }

    /// Unit basis matrices of the variable, paired with their scalar index.
    /// Symmetric variables use `E_ij + E_ji` for `i < j`.
    fn basis(&self) -> Vec<(usize, Vec<(usize, usize)>)> {
        let mut out = Vec::with_capacity(self.shape.n_scalars());
        match self.shape {
            Shape::Symmetric(n) => {
                let mut p = self.offset;
                for j in 0..n {
                    for i in 0..=j {
                        let entries = if i == j { vec![(i, i)] } else { vec![(i, j), (j, i)] };
                        out.push((p, entries));
                        p += 1;
                    }
                }
            }
            Shape::Rectangular(m, n) => {
                let mut p = self.offset;
                for j in 0..n {
                    for i in 0..m {
                        out.push((p, vec![(i, j)]));
                        p += 1;
                    }
                }
            }
        }
        out
    }

    fn assemble(&self, x: &[f64]) -> DMatrix<f64> {
        let (m, n) = self.dims();
        let mut v = DMatrix::zeros(m, n);
        for (p, entries) in self.basis() {
            for (i, j) in entries {
                v[(i, j)] = x[p];
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
struct Term {
    row: usize,
    col: usize,
    left: DMatrix<f64>,
    var: SdpVariable,
    transposed: bool,
    right: DMatrix<f64>,
}

/// `F(x) = F₀ + Σ_p x_p F_p ⪰ 0`, given block by block.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    name: String,
    blocks: Vec<usize>,
    constants: Vec<(usize, usize, DMatrix<f64>)>,
    terms: Vec<Term>,
}

impl LmiConstraint {
    pub fn new(name: impl Into<String>, blocks: &[usize]) -> Self {
        Self {
            name: name.into(),
            blocks: blocks.to_vec(),
            constants: Vec::new(),
            terms: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.blocks.iter().sum()
    }

    fn block_offset(&self, b: usize) -> usize {
        self.blocks[..b].iter().sum()
    }

    fn check_block(&self, row: usize, col: usize, shape: (usize, usize)) -> Result<()> {
        if row >= self.blocks.len() || col >= self.blocks.len() {
            return Err(Error::Sdp(format!("{}: block ({row},{col}) out of range", self.name)));
        }
        if col > row {
            return Err(Error::Sdp(format!(
                "{}: only lower-triangular blocks may be given, got ({row},{col})",
                self.name
            )));
        }
        if shape != (self.blocks[row], self.blocks[col]) {
            return Err(Error::Sdp(format!(
                "{}: block ({row},{col}) expects {}×{}, got {}×{}",
                self.name, self.blocks[row], self.blocks[col], shape.0, shape.1
            )));
        }
        Ok(())
    }

    /// Adds a constant to block `(row, col)`, `row ≥ col`.
    pub fn constant(mut self, row: usize, col: usize, m: DMatrix<f64>) -> Result<Self> {
        self.check_block(row, col, m.shape())?;
        self.constants.push((row, col, m));
        Ok(self)
    }

    /// Adds `left · V · right` to block `(row, col)`.
    pub fn term(
        mut self,
        row: usize,
        col: usize,
        left: DMatrix<f64>,
        var: SdpVariable,
        right: DMatrix<f64>,
    ) -> Result<Self> {
        self.push_term(row, col, left, var, false, right)?;
        Ok(self)
    }

    /// Adds `left · Vᵀ · right` to block `(row, col)`.
    pub fn term_transposed(
        mut self,
        row: usize,
        col: usize,
        left: DMatrix<f64>,
        var: SdpVariable,
        right: DMatrix<f64>,
    ) -> Result<Self> {
        self.push_term(row, col, left, var, true, right)?;
        Ok(self)
    }

    /// Adds `V` itself to block `(row, col)`.
    pub fn var(self, row: usize, col: usize, var: SdpVariable) -> Result<Self> {
        let (m, n) = var.dims();
        self.term(row, col, DMatrix::identity(m, m), var, DMatrix::identity(n, n))
    }

    /// Adds `left · V` to block `(row, col)`.
    pub fn left_mul(self, row: usize, col: usize, left: DMatrix<f64>, var: SdpVariable) -> Result<Self> {
        let n = var.dims().1;
        self.term(row, col, left, var, DMatrix::identity(n, n))
    }

    fn push_term(
        &mut self,
        row: usize,
        col: usize,
        left: DMatrix<f64>,
        var: SdpVariable,
        transposed: bool,
        right: DMatrix<f64>,
    ) -> Result<()> {
        let (m, n) = if transposed {
            let (a, b) = var.dims();
            (b, a)
        } else {
            var.dims()
        };
        if left.ncols() != m || right.nrows() != n {
            return Err(Error::Sdp(format!(
                "{}: term coefficients do not conform with variable {}",
                self.name, var.id
            )));
        }
        if left.iter().chain(right.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Sdp(format!("{}: non-finite coefficient", self.name)));
        }
        self.check_block(row, col, (left.nrows(), right.ncols()))?;
        self.terms.push(Term {
            row,
            col,
            left,
            var,
            transposed,
            right,
        });
        Ok(())
    }
}

/// An LMI in expanded form: `constant + Σ x_p · coeffs[p]`.
#[derive(Debug, Clone)]
struct CompiledLmi {
    name: String,
    constant: DMatrix<f64>,
    coeffs: BTreeMap<usize, DMatrix<f64>>,
}

impl CompiledLmi {
    fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (&p, c) in &self.coeffs {
            f += c * x[p];
        }
        f
    }
}

fn compile(lmi: &LmiConstraint) -> Result<CompiledLmi> {
    let n = lmi.size();
    let place = |target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>| {
        let (r0, c0) = (lmi.block_offset(row), lmi.block_offset(col));
        let mut view = target.view_mut((r0, c0), block.shape());
        view += block;
        if row != col {
            let mut mirror = target.view_mut((c0, r0), (block.ncols(), block.nrows()));
            mirror += block.transpose();
        }
    };

    let mut constant = DMatrix::zeros(n, n);
    for (row, col, m) in &lmi.constants {
        place(&mut constant, *row, *col, m);
    }
    let mut coeffs: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    for t in &lmi.terms {
        for (p, entries) in t.var.basis() {
            let mut block = DMatrix::zeros(t.left.nrows(), t.right.ncols());
            for &(i, j) in &entries {
                let (i, j) = if t.transposed { (j, i) } else { (i, j) };
                block += t.left.column(i) * t.right.row(j);
            }
            if block.iter().all(|&v| v == 0.0) {
                continue;
            }
            let c = coeffs.entry(p).or_insert_with(|| DMatrix::zeros(n, n));
            place(c, t.row, t.col, &block);
        }
    }
    let sym_tol = |m: &DMatrix<f64>| 1e-12 * (1.0 + m.amax());
    if (&constant - constant.transpose()).amax() > sym_tol(&constant) {
        return Err(Error::Sdp(format!("{}: constant part is not symmetric", lmi.name)));
    }
    for (p, c) in &coeffs {
        if (c - c.transpose()).amax() > sym_tol(c) {
            return Err(Error::Sdp(format!(
                "{}: diagonal block is not symmetric in scalar {p}",
                lmi.name
            )));
        }
    }
    coeffs.retain(|_, c| c.iter().any(|&v| v != 0.0));
    Ok(CompiledLmi {
        name: lmi.name.clone(),
        constant: linalg::symmetrize(&constant),
        coeffs: coeffs.into_iter().map(|(p, c)| (p, linalg::symmetrize(&c))).collect(),
    })
}

/// Linear objective `Σ trace(W_k V_k) + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinearObjective {
    terms: Vec<(SdpVariable, DMatrix<f64>)>,
    constant: f64,
}

impl LinearObjective {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `trace(weight · V)`; `weight` has the shape of `Vᵀ`.
    pub fn trace(mut self, var: SdpVariable, weight: DMatrix<f64>) -> Self {
        self.terms.push((var, weight));
        self
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            gap_tol: 1e-7,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    IllConditioned,
    IterationLimit,
}

#[derive(Debug, Clone, Default)]
pub struct SolverDiagnostics {
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Relative duality gap `|p − d| / max(|p|, |d|)` (absolute when both vanish).
    pub gap: f64,
    /// Smallest `λ_min(F_j(x)) / (1 + ‖F₀_j‖)` over all LMIs.
    pub min_lmi_margin: f64,
    pub backend_status: String,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub objective: f64,
    values: Vec<DMatrix<f64>>,
    pub diagnostics: SolverDiagnostics,
}

impl SdpSolution {
    pub fn value(&self, var: SdpVariable) -> &DMatrix<f64> {
        &self.values[var.id]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    vars: Vec<(String, SdpVariable)>,
    n_scalars: usize,
    lmis: Vec<CompiledLmi>,
    objective: Vec<f64>,
    objective_constant: f64,
    objective_scale: Option<f64>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare_variable(&mut self, shape: Shape, name: impl Into<String>) -> SdpVariable {
        let var = SdpVariable {
            id: self.vars.len(),
            shape,
            offset: self.n_scalars,
        };
        self.n_scalars += shape.n_scalars();
        self.objective.resize(self.n_scalars, 0.0);
        self.vars.push((name.into(), var));
        var
    }

    fn owns(&self, var: &SdpVariable) -> bool {
        self.vars.get(var.id).is_some_and(|(_, v)| v == var)
    }

    pub fn add_lmi(&mut self, lmi: LmiConstraint) -> Result<()> {
        if let Some(t) = lmi.terms.iter().find(|t| !self.owns(&t.var)) {
            return Err(Error::Sdp(format!(
                "{}: variable {} is not declared in this problem",
                lmi.name, t.var.id
            )));
        }
        self.lmis.push(compile(&lmi)?);
        Ok(())
    }

    pub fn set_objective_min(&mut self, objective: LinearObjective) -> Result<()> {
        let mut c = vec![0.0; self.n_scalars];
        for (var, w) in &objective.terms {
            if !self.owns(var) {
                return Err(Error::Sdp(format!("objective uses undeclared variable {}", var.id)));
            }
            let (m, n) = var.dims();
            if w.shape() != (n, m) {
                return Err(Error::Sdp("objective weight must have the shape of Vᵀ".into()));
            }
            for (p, entries) in var.basis() {
                c[p] += entries.iter().map(|&(i, j)| w[(j, i)]).sum::<f64>();
            }
        }
        self.objective = c;
        self.objective_constant = objective.constant;
        Ok(())
    }

    /// Typical magnitude of the optimal objective. The backend's duality-gap
    /// test is absolute for objectives below one, so the objective is divided
    /// by this scale before solving. Without a hint the problem is solved
    /// once unscaled and, if the optimum is small, again with the scale it
    /// revealed.
    pub fn set_objective_scale(&mut self, scale: f64) {
        if scale.is_finite() && scale > 0.0 {
            self.objective_scale = Some(scale);
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn n_lmis(&self) -> usize {
        self.lmis.len()
    }

    pub fn solve(&self, settings: &SolverSettings) -> SdpSolution {
        if self.lmis.is_empty() {
            return self.solve_unconstrained();
        }
        match self.objective_scale {
            Some(s) => self.solve_scaled(settings, s),
            None => {
                let first = self.solve_scaled(settings, 1.0);
                let f = (first.objective - self.objective_constant).abs();
                if first.is_optimal() && f > 0.0 && f < 0.1 {
                    let mut second = self.solve_scaled(settings, f);
                    second.diagnostics.iterations += first.diagnostics.iterations;
                    if second.is_optimal() {
                        return second;
                    }
                }
                first
            }
        }
    }

    fn solve_unconstrained(&self) -> SdpSolution {
        let zero = self.objective.iter().all(|&c| c == 0.0);
        SdpSolution {
            status: if zero { SdpStatus::Optimal } else { SdpStatus::IllConditioned },
            objective: self.objective_constant,
            values: self.vars.iter().map(|(_, v)| v.assemble(&vec![0.0; self.n_scalars])).collect(),
            diagnostics: SolverDiagnostics {
                backend_status: if zero { "trivial" } else { "unbounded" }.into(),
                min_lmi_margin: f64::INFINITY,
                ..Default::default()
            },
        }
    }

    fn solve_scaled(&self, settings: &SolverSettings, scale: f64) -> SdpSolution {
        let n = self.n_scalars;
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::with_capacity(self.lmis.len());
        let mut offset = 0;
        for lmi in &self.lmis {
            let dim = lmi.constant.nrows();
            cones.push(SupportedConeT::PSDTriangleConeT(dim));
            b.extend(svec(&lmi.constant));
            for (&p, c) in &lmi.coeffs {
                for (r, v) in svec(c).into_iter().enumerate() {
                    if v != 0.0 {
                        rows.push(offset + r);
                        cols.push(p);
                        vals.push(-v);
                    }
                }
            }
            offset += dim * (dim + 1) / 2;
        }
        let a = CscMatrix::new_from_triplets(offset, n, rows, cols, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let q: Vec<f64> = self.objective.iter().map(|c| c / scale).collect();

        let backend = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_feas(settings.feas_tol * 1e-2)
            .tol_gap_abs(settings.gap_tol * 1e-2)
            .tol_gap_rel(settings.gap_tol * 1e-2)
            .max_threads(1)
            .build()
            .expect("valid solver settings");

        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, backend) {
            Ok(s) => s,
            Err(e) => return self.failure(SdpStatus::IllConditioned, format!("setup: {e:?}")),
        };
        solver.solve();
        let sol = &solver.solution;
        let backend_status = format!("{:?}", sol.status);
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SdpStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SdpStatus::Infeasible
            }
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SdpStatus::IterationLimit,
            _ => SdpStatus::IllConditioned,
        };
        if status != SdpStatus::Optimal {
            let mut out = self.failure(status, backend_status);
            out.diagnostics.iterations = sol.iterations;
            return out;
        }

        let x = &sol.x;
        let min_lmi_margin = self
            .lmis
            .iter()
            .map(|l| linalg::min_eigenvalue(&l.evaluate(x)) / (1.0 + l.constant.norm()))
            .fold(f64::INFINITY, f64::min);
        let primal: f64 = self.objective.iter().zip(x).map(|(c, v)| c * v).sum();
        let (pc, dc) = (sol.obj_val, sol.obj_val_dual);
        let gap = {
            let denom = pc.abs().max(dc.abs());
            if denom > 1.0 { (pc - dc).abs() / denom } else { (pc - dc).abs() }
        };
        let verified = min_lmi_margin >= -settings.feas_tol && gap <= settings.gap_tol;
        SdpSolution {
            status: if verified { SdpStatus::Optimal } else { SdpStatus::IllConditioned },
            objective: primal + self.objective_constant,
            values: self.vars.iter().map(|(_, v)| v.assemble(x)).collect(),
            diagnostics: SolverDiagnostics {
                iterations: sol.iterations,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                gap,
                min_lmi_margin,
                backend_status,
            },
        }
    }

    fn failure(&self, status: SdpStatus, backend_status: String) -> SdpSolution {
        SdpSolution {
            status,
            objective: f64::NAN,
            values: self
                .vars
                .iter()
                .map(|(_, v)| {
                    let (m, n) = v.dims();
                    DMatrix::from_element(m, n, f64::NAN)
                })
                .collect(),
            diagnostics: SolverDiagnostics {
                backend_status,
                min_lmi_margin: f64::NAN,
                gap: f64::NAN,
                ..Default::default()
            },
        }
    }

    /// Minimum eigenvalue of every LMI at the given variable values.
    pub fn lmi_min_eigenvalues(&self, solution: &SdpSolution) -> Vec<f64> {
        let mut x = vec![0.0; self.n_scalars];
        for (_, v) in &self.vars {
            let val = solution.value(*v);
            for (p, entries) in v.basis() {
                x[p] = val[entries[0]];
            }
        }
        self.lmis.iter().map(|l| linalg::min_eigenvalue(&l.evaluate(&x))).collect()
    }

    /// Sparse text dump for cross-checking with external SDP tools.
    ///
    /// Header lines start with `#` and list the variables with their scalar
    /// ranges and the objective. Each following line is one nonzero of one
    /// LMI, lower triangle only:
    /// `<constraint id> <row> <col> <scalar id | const> <coefficient>`.
    /// Scalars of a symmetric `n×n` variable enumerate its upper triangle
    /// column by column; rectangular variables are column-major.
    pub fn to_sparse_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# scalars {}", self.n_scalars);
        for (name, v) in &self.vars {
            let (m, n) = v.dims();
            let kind = match v.shape {
                Shape::Symmetric(_) => "sym",
                Shape::Rectangular(..) => "rect",
            };
            let _ = writeln!(
                out,
                "# var {} {} {} {}x{} scalars {}..{}",
                v.id,
                name,
                kind,
                m,
                n,
                v.offset,
                v.offset + v.shape.n_scalars()
            );
        }
        for (p, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = writeln!(out, "# objective {p} {c:e}");
            }
        }
        for (id, lmi) in self.lmis.iter().enumerate() {
            let _ = writeln!(out, "# lmi {} {} size {}", id, lmi.name, lmi.constant.nrows());
            let mut emit = |m: &DMatrix<f64>, tag: &str| {
                for j in 0..m.ncols() {
                    for i in j..m.nrows() {
                        if m[(i, j)] != 0.0 {
                            let _ = writeln!(out, "{id} {i} {j} {tag} {:e}", m[(i, j)]);
                        }
                    }
                }
            };
            emit(&lmi.constant, "const");
            for (p, c) in &lmi.coeffs {
                emit(c, &p.to_string());
            }
        }
        out
    }
}

/// Scaled upper-triangle vectorization, column by column, off-diagonals
/// multiplied by √2 (the solver's PSD cone convention).
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

#[allow(dead_code)]
fn unsvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                m[(j, i)] = m[(i, j)];
            }
            k += 1;
        }
    }
    m
}
