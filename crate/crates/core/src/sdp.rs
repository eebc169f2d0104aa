//! Dense primal-dual interior-point solver for small semidefinite programs.
//!
//! Problems have Hermitian PSD matrix blocks plus nonnegative scalars:
//!
//! ```text
//!   minimize    sum_k <C_k, W_k> + c' p
//!   subject to  sum_k <A_ik, W_k> + a_i' p  (>= | <= | =)  b_i
//!               W_k  PSD,   p >= 0
//! ```
//!
//! Internally each m x m Hermitian block is replaced by its 2m x 2m real
//! symmetric embedding `[[Re, -Im], [Im, Re]]`, inequality rows get a slack,
//! rows are normalized, and an infeasible-start path-following method with
//! the HKM search direction and Mehrotra predictor-corrector steps is run on
//! the resulting real standard form.
//!
//! Infeasibility is detected two ways: an approximate Farkas certificate read
//! off the diverging dual (or primal) iterate, and a stall rule that fires
//! when the primal residual has not improved by 1% over 20 iterations.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{param, Result};
use crate::topology::{CMatrix, Complex64};

/// Sparse linear functional over the problem variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    /// `(block index, Hermitian coefficient matrix)`
    pub blocks: Vec<(usize, CMatrix)>,
    /// `(scalar index, coefficient)`
    pub scalars: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn block(mut self, k: usize, coeff: CMatrix) -> Self {
        self.blocks.push((k, coeff));
        self
    }

    pub fn scalar(mut self, j: usize, coeff: f64) -> Self {
        self.scalars.push((j, coeff));
        self
    }

    /// Evaluates the form at `(blocks, scalars)` with plain complex traces.
    pub fn evaluate(&self, blocks: &[CMatrix], scalars: &[f64]) -> f64 {
        let b: f64 = self
            .blocks
            .iter()
            .map(|(k, c)| hermitian_inner(c, &blocks[*k]))
            .sum();
        let s: f64 = self.scalars.iter().map(|(j, a)| a * scalars[*j]).sum();
        b + s
    }

    fn is_zero(&self) -> bool {
        self.blocks
            .iter()
            .all(|(_, c)| c.iter().all(|z| *z == Complex64::new(0.0, 0.0)))
            && self.scalars.iter().all(|(_, a)| *a == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    Ge,
    Le,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub form: LinearForm,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(form: LinearForm, sense: Sense, rhs: f64) -> Self {
        Self { form, sense, rhs }
    }

    /// Amount by which `(blocks, scalars)` violates this row (0 if satisfied).
    pub fn violation(&self, blocks: &[CMatrix], scalars: &[f64]) -> f64 {
        let lhs = self.form.evaluate(blocks, scalars);
        match self.sense {
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub n_scalars: usize,
    pub objective: LinearForm,
    pub constraints: Vec<Constraint>,
}

/// `Re tr(C W)` for Hermitian `C`, `W`.
pub fn hermitian_inner(c: &CMatrix, w: &CMatrix) -> f64 {
    let n = c.nrows();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            acc += (c[(a, b)] * w[(b, a)]).re;
        }
    }
    acc
}

fn matrix_json(m: &CMatrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|r| {
                Value::Array(
                    (0..m.ncols())
                        .map(|c| json!([m[(r, c)].re, m[(r, c)].im]))
                        .collect(),
                )
            })
            .collect(),
    )
}

fn form_json(f: &LinearForm) -> Value {
    json!({
        "blocks": f.blocks.iter().map(|(k, c)| json!({"block": k, "coeff": matrix_json(c)})).collect::<Vec<_>>(),
        "scalars": f.scalars.iter().map(|(j, a)| json!({"scalar": j, "coeff": a})).collect::<Vec<_>>(),
    })
}

impl SdpProblem {
    pub fn validate(&self) -> Result<()> {
        if self.block_dims.is_empty() && self.n_scalars == 0 {
            return Err(param("problem has no variables"));
        }
        if self.block_dims.contains(&0) {
            return Err(param("zero-sized PSD block"));
        }
        let forms = std::iter::once(&self.objective).chain(self.constraints.iter().map(|c| &c.form));
        for (row, form) in forms.enumerate() {
            for (k, c) in &form.blocks {
                let dim = *self
                    .block_dims
                    .get(*k)
                    .ok_or_else(|| param(format!("row {row}: block index {k} out of range")))?;
                if c.shape() != (dim, dim) {
                    return Err(param(format!("row {row}: block {k} coefficient has wrong shape")));
                }
                if c.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(param(format!("row {row}: non-finite coefficient")));
                }
                let scale = c.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
                if (c - c.adjoint()).iter().any(|z| z.norm() > 1e-10 * scale) {
                    return Err(param(format!("row {row}: block {k} coefficient is not Hermitian")));
                }
            }
            for (j, a) in &form.scalars {
                if *j >= self.n_scalars {
                    return Err(param(format!("row {row}: scalar index {j} out of range")));
                }
                if !a.is_finite() {
                    return Err(param(format!("row {row}: non-finite coefficient")));
                }
            }
        }
        if self.constraints.iter().any(|c| !c.rhs.is_finite()) {
            return Err(param("non-finite right-hand side"));
        }
        Ok(())
    }

    /// Structured dump for cross-checking against external solvers.
    pub fn to_json(&self) -> String {
        let v = json!({
            "block_dims": self.block_dims,
            "n_scalars": self.n_scalars,
            "objective": form_json(&self.objective),
            "constraints": self.constraints.iter().map(|c| json!({
                "form": form_json(&c.form),
                "sense": match c.sense { Sense::Ge => ">=", Sense::Le => "<=", Sense::Eq => "=" },
                "rhs": c.rhs,
            })).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&v).expect("json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub tol_psd: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_psd: 1e-9,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub block_values: Vec<CMatrix>,
    pub scalar_values: Vec<f64>,
    /// Primal objective in the caller's units.
    pub objective_value: f64,
    /// Dual objective; a certified lower bound when `status` is Optimal.
    pub dual_objective: f64,
    /// One multiplier per constraint (zero for trivially-satisfied rows).
    pub dual_values: Vec<f64>,
    pub status: Status,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub diagnostics: String,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

// ---------------------------------------------------------------------------
// real standard form

struct StdForm {
    dims: Vec<usize>,
    /// `a_blk[row][block]`
    a_blk: Vec<Vec<Option<DMatrix<f64>>>>,
    /// m x p, slack columns included
    a_lin: DMatrix<f64>,
    b: DVector<f64>,
    c_blk: Vec<DMatrix<f64>>,
    c_lin: DVector<f64>,
    /// original constraint index of each kept row
    kept: Vec<usize>,
    row_scale: Vec<f64>,
    obj_scale: f64,
}

fn embed(c: &CMatrix) -> DMatrix<f64> {
    let m = c.nrows();
    let mut e = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..m {
        for b in 0..m {
            let z = c[(a, b)];
            e[(a, b)] = 0.5 * z.re;
            e[(a + m, b + m)] = 0.5 * z.re;
            e[(a + m, b)] = 0.5 * z.im;
            e[(a, b + m)] = -0.5 * z.im;
        }
    }
    e
}

// Inverse of the variable embedding; averages the two copies.
fn unembed(x: &DMatrix<f64>) -> CMatrix {
    let m = x.nrows() / 2;
    CMatrix::from_fn(m, m, |a, b| {
        let re = 0.5 * (x[(a, b)] + x[(a + m, b + m)]);
        let im = 0.5 * (x[(a + m, b)] - x[(a, b + m)]);
        Complex64::new(re, im)
    })
}

enum Presolve {
    Ready(StdForm),
    Infeasible(usize),
}

fn to_standard(problem: &SdpProblem) -> Presolve {
    let dims: Vec<usize> = problem.block_dims.iter().map(|d| 2 * d).collect();
    let nb = dims.len();
    let mut kept = Vec::new();
    for (r, con) in problem.constraints.iter().enumerate() {
        if con.form.is_zero() {
            let ok = match con.sense {
                Sense::Ge => con.rhs <= 0.0,
                Sense::Le => con.rhs >= 0.0,
                Sense::Eq => con.rhs == 0.0,
            };
            if !ok {
                return Presolve::Infeasible(r);
            }
        } else {
            kept.push(r);
        }
    }
    let m = kept.len();
    let n_slack = kept
        .iter()
        .filter(|&&r| problem.constraints[r].sense != Sense::Eq)
        .count();
    let p = problem.n_scalars + n_slack;

    let mut a_blk = vec![vec![None; nb]; m];
    let mut a_lin: DMatrix<f64> = DMatrix::zeros(m, p);
    let mut b: DVector<f64> = DVector::zeros(m);
    let mut row_scale = vec![1.0; m];
    let mut slack = problem.n_scalars;
    for (i, &r) in kept.iter().enumerate() {
        let con = &problem.constraints[r];
        for (k, c) in &con.form.blocks {
            let e = embed(c);
            let entry: &mut Option<DMatrix<f64>> = &mut a_blk[i][*k];
            *entry = Some(match entry.take() {
                Some(prev) => prev + e,
                None => e,
            });
        }
        for (j, a) in &con.form.scalars {
            a_lin[(i, *j)] += a;
        }
        let norm_sq: f64 = a_blk[i]
            .iter()
            .flatten()
            .map(|e| e.norm_squared())
            .sum::<f64>()
            + a_lin.row(i).norm_squared();
        let s = norm_sq.sqrt();
        row_scale[i] = s;
        for e in a_blk[i].iter_mut().flatten() {
            *e /= s;
        }
        for j in 0..problem.n_scalars {
            a_lin[(i, j)] /= s;
        }
        b[i] = con.rhs / s;
        match con.sense {
            Sense::Ge => {
                a_lin[(i, slack)] = -1.0;
                slack += 1;
            }
            Sense::Le => {
                a_lin[(i, slack)] = 1.0;
                slack += 1;
            }
            Sense::Eq => {}
        }
    }

    let mut c_blk: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    let mut c_lin: DVector<f64> = DVector::zeros(p);
    for (k, c) in &problem.objective.blocks {
        c_blk[*k] += embed(c);
    }
    for (j, a) in &problem.objective.scalars {
        c_lin[*j] += a;
    }
    let c_norm = (c_blk.iter().map(|c: &DMatrix<f64>| c.norm_squared()).sum::<f64>() + c_lin.norm_squared()).sqrt();
    let obj_scale = if c_norm > 0.0 { c_norm } else { 1.0 };
    for c in &mut c_blk {
        *c /= obj_scale;
    }
    c_lin /= obj_scale;

    Presolve::Ready(StdForm {
        dims,
        a_blk,
        a_lin,
        b,
        c_blk,
        c_lin,
        kept,
        row_scale,
        obj_scale,
    })
}

#[derive(Clone)]
struct Iterate {
    x_blk: Vec<DMatrix<f64>>,
    x_lin: DVector<f64>,
    y: DVector<f64>,
    z_blk: Vec<DMatrix<f64>>,
    z_lin: DVector<f64>,
}

struct Direction {
    dx_blk: Vec<DMatrix<f64>>,
    dx_lin: DVector<f64>,
    dy: DVector<f64>,
    dz_blk: Vec<DMatrix<f64>>,
    dz_lin: DVector<f64>,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest `a` with `X + a dX` PSD (infinity when unbounded).
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(t2) = l.solve_lower_triangular(&t.transpose()) else {
        return 0.0;
    };
    let lam = min_eig(&t2);
    if !lam.is_finite() {
        0.0
    } else if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn max_step_lin(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

impl StdForm {
    fn m(&self) -> usize {
        self.b.len()
    }

    fn nu(&self) -> f64 {
        (self.dims.iter().sum::<usize>() + self.c_lin.len()) as f64
    }

    fn apply_a(&self, x_blk: &[DMatrix<f64>], x_lin: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.m(), |i, _| {
            let blk: f64 = self.a_blk[i]
                .iter()
                .enumerate()
                .filter_map(|(k, a)| a.as_ref().map(|a| a.dot(&x_blk[k])))
                .sum();
            blk + self.a_lin.row(i).transpose().dot(x_lin)
        })
    }

    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let mut blk: Vec<DMatrix<f64>> = self.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        for i in 0..self.m() {
            for (k, a) in self.a_blk[i].iter().enumerate() {
                if let Some(a) = a {
                    blk[k] += a * y[i];
                }
            }
        }
        (blk, self.a_lin.transpose() * y)
    }

    fn objective(&self, it: &Iterate) -> f64 {
        self.c_blk
            .iter()
            .zip(&it.x_blk)
            .map(|(c, x)| c.dot(x))
            .sum::<f64>()
            + self.c_lin.dot(&it.x_lin)
    }

    fn c_norm(&self) -> f64 {
        (self.c_blk.iter().map(|c| c.norm_squared()).sum::<f64>() + self.c_lin.norm_squared()).sqrt()
    }

    fn initial(&self) -> Iterate {
        let n_max = self.dims.iter().copied().max().unwrap_or(1).max(1) as f64;
        let b_max = self.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let xi_p = 10f64.max(n_max.sqrt()).max(1.0 + b_max);
        let xi_d = 10f64.max(n_max.sqrt()).max(10.0 * self.c_norm());
        Iterate {
            x_blk: self.dims.iter().map(|&d| DMatrix::identity(d, d) * xi_p).collect(),
            x_lin: DVector::from_element(self.c_lin.len(), xi_p),
            y: DVector::zeros(self.m()),
            z_blk: self.dims.iter().map(|&d| DMatrix::identity(d, d) * xi_d).collect(),
            z_lin: DVector::from_element(self.c_lin.len(), xi_d),
        }
    }
}

struct Residuals {
    rp: DVector<f64>,
    rd_blk: Vec<DMatrix<f64>>,
    rd_lin: DVector<f64>,
    pinf: f64,
    dinf: f64,
    pobj: f64,
    dobj: f64,
    gap: f64,
    mu: f64,
}

fn residuals(sf: &StdForm, it: &Iterate) -> Residuals {
    let rp = &sf.b - sf.apply_a(&it.x_blk, &it.x_lin);
    let (aty_blk, aty_lin) = sf.apply_at(&it.y);
    let rd_blk: Vec<_> = (0..sf.dims.len())
        .map(|k| &sf.c_blk[k] - &aty_blk[k] - &it.z_blk[k])
        .collect();
    let rd_lin = &sf.c_lin - aty_lin - &it.z_lin;
    let pinf = rp.norm() / (1.0 + sf.b.norm());
    let dinf = (rd_blk.iter().map(|r| r.norm_squared()).sum::<f64>() + rd_lin.norm_squared()).sqrt()
        / (1.0 + sf.c_norm());
    let pobj = sf.objective(it);
    let dobj = sf.b.dot(&it.y);
    let xz: f64 = it
        .x_blk
        .iter()
        .zip(&it.z_blk)
        .map(|(x, z)| x.dot(z))
        .sum::<f64>()
        + it.x_lin.dot(&it.z_lin);
    let denom = 1.0 + pobj.abs() + dobj.abs();
    let gap = ((pobj - dobj).abs() / denom).max(xz.max(0.0) / denom);
    Residuals {
        mu: xz / sf.nu(),
        rp,
        rd_blk,
        rd_lin,
        pinf,
        dinf,
        pobj,
        dobj,
        gap,
    }
}

/// Primal infeasibility certificate quality: `y` with `b'y = 1` and
/// `-A^T y` in the cone. Returns the cone violation of `-A^T y`; with rows
/// normalized, a violation `v` rules out every feasible point of size below
/// `1 / v`.
fn farkas_primal(sf: &StdForm, y: &DVector<f64>) -> Option<f64> {
    let by = sf.b.dot(y);
    if by <= 0.0 || !by.is_finite() {
        return None;
    }
    let yh = y / by;
    let (blk, lin) = sf.apply_at(&yh);
    let viol = blk
        .iter()
        .map(|m| (-min_eig(&-m)).max(0.0))
        .fold(0.0, f64::max)
        .max(lin.iter().fold(0.0, |acc, v| acc.max(*v)));
    Some(viol)
}

/// Dual infeasibility certificate: `X` in the cone, `A(X) = 0`, `<C, X> < 0`.
fn farkas_dual(sf: &StdForm, it: &Iterate) -> Option<f64> {
    let cx = sf.objective(it);
    if cx >= 0.0 || !cx.is_finite() {
        return None;
    }
    let scale = -cx;
    let ax = sf.apply_a(&it.x_blk, &it.x_lin) / scale;
    Some(ax.norm())
}

struct Schur {
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    z_inv: Vec<DMatrix<f64>>,
}

impl Schur {
    fn build(sf: &StdForm, it: &Iterate) -> Self {
        let m = sf.m();
        let z_inv: Vec<DMatrix<f64>> = it
            .z_blk
            .iter()
            .map(|z| match Cholesky::new(z.clone()) {
                Some(c) => sym(&c.inverse()),
                None => z.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(z.nrows(), z.ncols())),
            })
            .collect();
        let mut mat = DMatrix::zeros(m, m);
        for k in 0..sf.dims.len() {
            let rows: Vec<usize> = (0..m).filter(|&i| sf.a_blk[i][k].is_some()).collect();
            let g: Vec<DMatrix<f64>> = rows
                .iter()
                .map(|&i| &it.x_blk[k] * sf.a_blk[i][k].as_ref().unwrap() * &z_inv[k])
                .collect();
            for (gi, &i) in rows.iter().enumerate() {
                for &j in &rows {
                    if j < i {
                        continue;
                    }
                    let v = sf.a_blk[j][k].as_ref().unwrap().dot(&g[gi]);
                    mat[(i, j)] += v;
                    if i != j {
                        mat[(j, i)] += v;
                    }
                }
            }
        }
        let ratio = it.x_lin.component_div(&it.z_lin);
        let scaled = &sf.a_lin * DMatrix::from_diagonal(&ratio);
        mat += &scaled * sf.a_lin.transpose();
        let mat = sym(&mat);
        let chol = Cholesky::new(mat.clone());
        let lu = if chol.is_none() { Some(mat.lu()) } else { None };
        Schur { chol, lu, z_inv }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        if let Some(c) = &self.chol {
            return Some(c.solve(rhs));
        }
        self.lu.as_ref().and_then(|lu| lu.solve(rhs))
    }
}

/// Solves the Newton system for complementarity targets `X dZ + dX Z = R`.
fn direction(
    sf: &StdForm,
    it: &Iterate,
    res: &Residuals,
    schur: &Schur,
    r_blk: &[DMatrix<f64>],
    r_lin: &DVector<f64>,
) -> Option<Direction> {
    let nb = sf.dims.len();
    // E_k = (R_k - X_k Rd_k) Z_k^{-1}
    let e_blk: Vec<DMatrix<f64>> = (0..nb)
        .map(|k| (&r_blk[k] - &it.x_blk[k] * &res.rd_blk[k]) * &schur.z_inv[k])
        .collect();
    let e_lin = DVector::from_fn(it.x_lin.len(), |l, _| {
        (r_lin[l] - it.x_lin[l] * res.rd_lin[l]) / it.z_lin[l]
    });
    let rhs = &res.rp - sf.apply_a(&e_blk, &e_lin);
    let dy = schur.solve(&rhs)?;
    let (aty_blk, aty_lin) = sf.apply_at(&dy);
    let dz_blk: Vec<DMatrix<f64>> = (0..nb).map(|k| &res.rd_blk[k] - &aty_blk[k]).collect();
    let dz_lin = &res.rd_lin - aty_lin;
    let dx_blk: Vec<DMatrix<f64>> = (0..nb)
        .map(|k| sym(&((&r_blk[k] - &it.x_blk[k] * &dz_blk[k]) * &schur.z_inv[k])))
        .collect();
    let dx_lin = DVector::from_fn(it.x_lin.len(), |l, _| {
        (r_lin[l] - it.x_lin[l] * dz_lin[l]) / it.z_lin[l]
    });
    let finite = dy.iter().all(|v| v.is_finite())
        && dx_blk.iter().all(|m| m.iter().all(|v| v.is_finite()))
        && dz_blk.iter().all(|m| m.iter().all(|v| v.is_finite()))
        && dx_lin.iter().chain(dz_lin.iter()).all(|v| v.is_finite());
    finite.then_some(Direction {
        dx_blk,
        dx_lin,
        dy,
        dz_blk,
        dz_lin,
    })
}

fn step_lengths(it: &Iterate, d: &Direction) -> (f64, f64) {
    let ap = it
        .x_blk
        .iter()
        .zip(&d.dx_blk)
        .map(|(x, dx)| max_step_psd(x, dx))
        .fold(max_step_lin(&it.x_lin, &d.dx_lin), f64::min);
    let ad = it
        .z_blk
        .iter()
        .zip(&d.dz_blk)
        .map(|(z, dz)| max_step_psd(z, dz))
        .fold(max_step_lin(&it.z_lin, &d.dz_lin), f64::min);
    (ap, ad)
}

const STALL_WINDOW: usize = 20;
const FARKAS_TOL: f64 = 1e-9;

pub fn solve(problem: &SdpProblem, options: &SolverOptions) -> Result<SdpSolution> {
    problem.validate()?;
    let zero_solution = |status: Status, diagnostics: String| SdpSolution {
        block_values: problem
            .block_dims
            .iter()
            .map(|&d| CMatrix::zeros(d, d))
            .collect(),
        scalar_values: vec![0.0; problem.n_scalars],
        objective_value: f64::NAN,
        dual_objective: f64::NAN,
        dual_values: vec![0.0; problem.constraints.len()],
        status,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        duality_gap: f64::NAN,
        iterations: 0,
        diagnostics,
    };
    let sf = match to_standard(problem) {
        Presolve::Ready(sf) => sf,
        Presolve::Infeasible(row) => {
            return Ok(zero_solution(
                Status::Infeasible,
                format!("constraint {row} has no coefficients and an unsatisfiable rhs"),
            ))
        }
    };

    let mut it = sf.initial();
    let mut pinf_hist: Vec<f64> = Vec::new();
    let mut dinf_hist: Vec<f64> = Vec::new();
    let mut pobj_hist: Vec<f64> = Vec::new();
    let mut status = Status::MaxIterations;
    let mut diagnostics = String::new();
    let mut iterations = 0;
    let mut res = residuals(&sf, &it);

    for iter in 0..=options.max_iters {
        iterations = iter;
        res = residuals(&sf, &it);
        if !(res.pobj.is_finite() && res.dobj.is_finite() && res.mu.is_finite()) {
            diagnostics = format!("numerical breakdown at iteration {iter}: non-finite iterate");
            break;
        }
        if res.pinf <= options.tol_feas && res.dinf <= options.tol_feas && res.gap <= options.tol_gap {
            status = Status::Optimal;
            break;
        }
        if res.pinf > options.tol_feas {
            if let Some(v) = farkas_primal(&sf, &it.y) {
                if v < FARKAS_TOL {
                    status = Status::Infeasible;
                    diagnostics = format!("dual ray certificate (violation {v:.2e}) at iteration {iter}");
                    break;
                }
            }
        }
        if res.dinf > options.tol_feas {
            if let Some(v) = farkas_dual(&sf, &it) {
                if v < FARKAS_TOL {
                    status = Status::Unbounded;
                    diagnostics = format!("primal ray certificate (residual {v:.2e}) at iteration {iter}");
                    break;
                }
            }
        }
        pinf_hist.push(res.pinf);
        dinf_hist.push(res.dinf);
        pobj_hist.push(res.pobj);
        if iter >= STALL_WINDOW {
            let p_old = pinf_hist[iter - STALL_WINDOW];
            let d_old = dinf_hist[iter - STALL_WINDOW];
            if res.pinf > options.tol_feas && res.pinf > 0.99 * p_old {
                status = Status::Infeasible;
                diagnostics = format!(
                    "primal residual stalled at {:.2e} for {STALL_WINDOW} iterations (dual objective {:.3e})",
                    res.pinf, res.dobj
                );
                break;
            }
            if res.dinf > options.tol_feas && res.dinf > 0.99 * d_old {
                let descending = res.pobj < 0.0 && res.pobj < pobj_hist[iter - STALL_WINDOW];
                status = if descending { Status::Unbounded } else { Status::MaxIterations };
                diagnostics = format!(
                    "dual residual stalled at {:.2e} for {STALL_WINDOW} iterations (primal objective {:.3e})",
                    res.dinf, res.pobj
                );
                break;
            }
        }
        if iter == options.max_iters {
            diagnostics = format!(
                "iteration cap: pinf {:.2e}, dinf {:.2e}, gap {:.2e}",
                res.pinf, res.dinf, res.gap
            );
            break;
        }

        let schur = Schur::build(&sf, &it);
        let nb = sf.dims.len();
        // predictor
        let r_aff: Vec<DMatrix<f64>> = (0..nb).map(|k| -(&it.x_blk[k] * &it.z_blk[k])).collect();
        let r_aff_lin = -it.x_lin.component_mul(&it.z_lin);
        let Some(aff) = direction(&sf, &it, &res, &schur, &r_aff, &r_aff_lin) else {
            diagnostics = format!("numerical breakdown at iteration {iter}: singular Newton system");
            break;
        };
        let (ap, ad) = step_lengths(&it, &aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut xz_aff = 0.0;
        for k in 0..nb {
            let x = &it.x_blk[k] + &aff.dx_blk[k] * ap;
            let z = &it.z_blk[k] + &aff.dz_blk[k] * ad;
            xz_aff += x.dot(&z);
        }
        xz_aff += (&it.x_lin + &aff.dx_lin * ap).dot(&(&it.z_lin + &aff.dz_lin * ad));
        let mu_aff = xz_aff / sf.nu();
        let sigma = if res.mu > 0.0 {
            (mu_aff / res.mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };
        // corrector
        let target = sigma * res.mu;
        let r_cor: Vec<DMatrix<f64>> = (0..nb)
            .map(|k| {
                let d = sf.dims[k];
                DMatrix::identity(d, d) * target
                    - &it.x_blk[k] * &it.z_blk[k]
                    - &aff.dx_blk[k] * &aff.dz_blk[k]
            })
            .collect();
        let r_cor_lin = DVector::from_fn(it.x_lin.len(), |l, _| {
            target - it.x_lin[l] * it.z_lin[l] - aff.dx_lin[l] * aff.dz_lin[l]
        });
        let Some(dir) = direction(&sf, &it, &res, &schur, &r_cor, &r_cor_lin) else {
            diagnostics = format!("numerical breakdown at iteration {iter}: singular Newton system");
            break;
        };
        let (ap, ad) = step_lengths(&it, &dir);
        let tau = 0.98;
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        for k in 0..nb {
            it.x_blk[k] += &dir.dx_blk[k] * ap;
            it.z_blk[k] += &dir.dz_blk[k] * ad;
            it.x_blk[k] = sym(&it.x_blk[k]);
            it.z_blk[k] = sym(&it.z_blk[k]);
        }
        it.x_lin += &dir.dx_lin * ap;
        it.y += &dir.dy * ad;
        it.z_lin += &dir.dz_lin * ad;
    }

    let block_values: Vec<CMatrix> = it.x_blk.iter().map(unembed).collect();
    let scalar_values: Vec<f64> = (0..problem.n_scalars).map(|j| it.x_lin[j]).collect();
    let mut dual_values = vec![0.0; problem.constraints.len()];
    for (i, &r) in sf.kept.iter().enumerate() {
        dual_values[r] = it.y[i] * sf.obj_scale / sf.row_scale[i];
    }
    Ok(SdpSolution {
        block_values,
        scalar_values,
        objective_value: res.pobj * sf.obj_scale,
        dual_objective: res.dobj * sf.obj_scale,
        dual_values,
        status,
        primal_residual: res.pinf,
        dual_residual: res.dinf,
        duality_gap: res.gap,
        iterations,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// independent verification

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    /// Largest absolute constraint violation.
    pub max_violation: f64,
    /// Index of the worst row, if any row is violated.
    pub worst_constraint: Option<usize>,
    /// Smallest eigenvalue over all blocks (infinity with no blocks).
    pub min_block_eigenvalue: f64,
    /// `max(0, -min_block_eigenvalue)`
    pub psd_violation: f64,
    /// Largest negativity of a scalar variable.
    pub scalar_violation: f64,
    pub objective_recomputed: f64,
    pub objective_error: f64,
    pub passed: bool,
}

fn hermitian_min_eig(w: &CMatrix) -> f64 {
    let h = (w + w.adjoint()) * Complex64::new(0.5, 0.0);
    SymmetricEigen::new(h)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Recomputes feasibility and the objective from the raw solution values.
pub fn verify(problem: &SdpProblem, solution: &SdpSolution, tol: f64) -> Result<VerifyReport> {
    if solution.block_values.len() != problem.block_dims.len()
        || solution.scalar_values.len() != problem.n_scalars
        || solution
            .block_values
            .iter()
            .zip(&problem.block_dims)
            .any(|(w, &d)| w.shape() != (d, d))
    {
        return Err(param("solution dimensions do not match problem"));
    }
    let w = &solution.block_values;
    let s = &solution.scalar_values;
    let mut max_violation = 0.0;
    let mut worst_constraint = None;
    for (r, con) in problem.constraints.iter().enumerate() {
        let v = con.violation(w, s);
        if v > max_violation {
            max_violation = v;
            worst_constraint = Some(r);
        }
    }
    let min_block_eigenvalue = w.iter().map(hermitian_min_eig).fold(f64::INFINITY, f64::min);
    let psd_violation = (-min_block_eigenvalue).max(0.0);
    let scalar_violation = s.iter().fold(0.0f64, |acc, v| acc.max(-v));
    let objective_recomputed = problem.objective.evaluate(w, s);
    let objective_error = if solution.objective_value.is_finite() {
        (objective_recomputed - solution.objective_value).abs()
    } else {
        0.0
    };
    let passed = max_violation <= tol
        && psd_violation <= tol
        && scalar_violation <= tol
        && objective_error <= tol * (1.0 + objective_recomputed.abs());
    Ok(VerifyReport {
        max_violation,
        worst_constraint,
        min_block_eigenvalue,
        psd_violation,
        scalar_violation,
        objective_recomputed,
        objective_error,
        passed,
    })
}
