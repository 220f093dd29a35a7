//! A small convex modeling layer and its interior-point engine.
//!
//! Problems are built from registered variables (scalars, vectors and
//! symmetric matrices) and affine expressions over them. Supported pieces:
//!
//! - objective: linear terms, weighted squares of affine expressions, and
//!   weighted `-log det` of affine symmetric expressions;
//! - constraints: affine `= 0`, affine `>= 0`, second-order cones, and
//!   positive-semidefinite affine symmetric expressions.
//!
//! Symmetric matrix variables are stored as the scaled upper triangle
//! (off-diagonals multiplied by `sqrt 2`), so `<A, X> = svec(A) . svec(X)`.
//!
//! The engine is a primal log-barrier path-following method with a phase-I
//! feasibility search, solving each Newton system with a sparse LDL^T
//! factorization on a minimum-degree ordering. Every subproblem this crate
//! generates is small, so a dense-block barrier method is sufficient.

mod barrier;
mod cbf;
mod ldl;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use cbf::write_cbf;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Sparse affine scalar expression `sum_i c_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(idx: usize) -> Self {
        Self { terms: vec![(idx, 1.0)], constant: 0.0 }
    }

    pub fn add_term(&mut self, idx: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((idx, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) -> &mut Self {
        if s != 0.0 {
            for &(i, c) in &other.terms {
                self.terms.push((i, c * s));
            }
            self.constant += other.constant * s;
        }
        self
    }

    pub fn scaled(&self, s: f64) -> Affine {
        let mut out = Affine::default();
        out.add_scaled(self, s);
        out
    }

    pub fn plus(&self, other: &Affine) -> Affine {
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        out
    }

    pub fn minus(&self, other: &Affine) -> Affine {
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        out
    }

    /// Merges duplicate indices and drops exact zeros; terms end up sorted.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(i, c)| acc + c * x[i])
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0.0)
    }
}

/// Dense matrix of affine expressions, used to assemble block LMIs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    data: Vec<Affine>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Affine::default(); rows * cols] }
    }

    pub fn from_constant(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j].constant = m[(i, j)];
            }
        }
        out
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Affine) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &Affine {
        &self.data[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Affine {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn plus(&self, other: &MatExpr) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!("adding {:?} and {:?}", self.shape(), other.shape())));
        }
        Ok(Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).plus(other.get(i, j))))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j).scaled(s))
    }

    /// `self * m` for a constant matrix `m`.
    pub fn mul_const_right(&self, m: &DMatrix<f64>) -> Result<Self> {
        if self.cols != m.nrows() {
            return Err(Error::ShapeMismatch(format!("product {:?} x {:?}", self.shape(), m.shape())));
        }
        Ok(Self::from_fn(self.rows, m.ncols(), |i, j| {
            let mut acc = Affine::default();
            for k in 0..self.cols {
                acc.add_scaled(self.get(i, k), m[(k, j)]);
            }
            acc.compact();
            acc
        }))
    }

    /// `m * self` for a constant matrix `m`.
    pub fn mul_const_left(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.rows {
            return Err(Error::ShapeMismatch(format!("product {:?} x {:?}", m.shape(), self.shape())));
        }
        Ok(Self::from_fn(m.nrows(), self.cols, |i, j| {
            let mut acc = Affine::default();
            for k in 0..self.rows {
                acc.add_scaled(self.get(k, j), m[(i, k)]);
            }
            acc.compact();
            acc
        }))
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }
}

/// Affine symmetric-matrix expression; only the upper triangle is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymExpr {
    n: usize,
    upper: Vec<Affine>,
}

impl SymExpr {
    pub fn zeros(n: usize) -> Self {
        Self { n, upper: vec![Affine::default(); n * (n + 1) / 2] }
    }

    pub fn from_constant(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!("constant {:?} is not square", m.shape())));
        }
        let mut out = Self::zeros(m.nrows());
        for i in 0..m.nrows() {
            for j in i..m.nrows() {
                out.get_mut(i, j).constant = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        Ok(out)
    }

    /// Converts a square matrix expression, requiring exact symmetry.
    pub fn from_mat(m: &MatExpr) -> Result<Self> {
        let (r, c) = m.shape();
        if r != c {
            return Err(Error::ShapeMismatch(format!("matrix expression {r}x{c} is not square")));
        }
        let mut out = Self::zeros(r);
        for i in 0..r {
            for j in i..r {
                let mut a = m.get(i, j).clone();
                let mut b = m.get(j, i).clone();
                a.compact();
                b.compact();
                let same = a.terms.len() == b.terms.len()
                    && a.terms.iter().zip(&b.terms).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-12 * x.1.abs().max(1.0))
                    && (a.constant - b.constant).abs() <= 1e-12 * a.constant.abs().max(1.0);
                if !same {
                    return Err(Error::ShapeMismatch(format!("expression is not symmetric at ({i}, {j})")));
                }
                *out.get_mut(i, j) = a;
            }
        }
        Ok(out)
    }

    /// Assembles a symmetric expression from a square grid of blocks.
    pub fn from_blocks(blocks: &[Vec<MatExpr>]) -> Result<Self> {
        let nb = blocks.len();
        if nb == 0 || blocks.iter().any(|row| row.len() != nb) {
            return Err(Error::ShapeMismatch("block grid must be square and nonempty".into()));
        }
        let heights: Vec<usize> = blocks.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = (0..nb).map(|j| blocks[0][j].cols).collect();
        for (bi, row) in blocks.iter().enumerate() {
            for (bj, blk) in row.iter().enumerate() {
                if blk.rows != heights[bi] || blk.cols != widths[bj] {
                    return Err(Error::ShapeMismatch(format!(
                        "block ({bi}, {bj}) is {:?}, expected {}x{}",
                        blk.shape(),
                        heights[bi],
                        widths[bj]
                    )));
                }
            }
        }
        if heights != widths {
            return Err(Error::ShapeMismatch("diagonal blocks must be square".into()));
        }
        let n: usize = heights.iter().sum();
        let mut offs = vec![0usize; nb + 1];
        for b in 0..nb {
            offs[b + 1] = offs[b] + heights[b];
        }
        let full = MatExpr::from_fn(n, n, |i, j| {
            let bi = offs.partition_point(|&o| o <= i) - 1;
            let bj = offs.partition_point(|&o| o <= j) - 1;
            blocks[bi][bj].get(i - offs[bi], j - offs[bj]).clone()
        });
        Self::from_mat(&full)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn pos(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> &Affine {
        &self.upper[self.pos(i, j)]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Affine {
        let p = self.pos(i, j);
        &mut self.upper[p]
    }

    pub fn plus(&self, other: &SymExpr) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::ShapeMismatch(format!("adding {0}x{0} and {1}x{1}", self.n, other.n)));
        }
        Ok(Self { n: self.n, upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.plus(b)).collect() })
    }

    pub fn to_mat(&self) -> MatExpr {
        MatExpr::from_fn(self.n, self.n, |i, j| self.get(i, j).clone())
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j).eval(x))
    }
}

/// Handle to a registered variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

/// Handle to a registered PSD constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Vector(usize),
    Symmetric(usize),
}

#[derive(Debug, Clone)]
struct VarInfo {
    name: String,
    kind: VarKind,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Constraint {
    Zero(Affine),
    NonNeg(Affine),
    /// `(t, u)` with `t >= ||u||`; first entry is `t`.
    Soc(Vec<Affine>),
    Psd(SymExpr),
}

/// Convex problem: minimize `c^T x + c0 + sum w (a^T x + a0)^2 - sum w log det G(x)`
/// subject to the registered cone constraints.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    vars: Vec<VarInfo>,
    n: usize,
    objective: Affine,
    squares: Vec<(f64, Affine)>,
    neg_logdets: Vec<(f64, SymExpr)>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Stalled,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Stalled => "stalled",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Target bound on the duality gap, relative to `max(1, |objective|)`.
    pub gap_tol: f64,
    /// Maximum constraint violation accepted for equality rows.
    pub feas_tol: f64,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    /// Newton-step budget across both phases.
    pub max_newton: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { gap_tol: 1e-9, feas_tol: 1e-8, mu: 20.0, max_newton: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub newton_steps: usize,
    vars: Vec<VarInfo>,
}

impl ConicSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.x[self.vars[v.0].offset]
    }

    pub fn vector(&self, v: VarId) -> DVector<f64> {
        let info = &self.vars[v.0];
        DVector::from_column_slice(&self.x[info.offset..info.offset + info.len])
    }

    pub fn matrix(&self, v: VarId) -> DMatrix<f64> {
        let info = &self.vars[v.0];
        match info.kind {
            VarKind::Symmetric(n) => unsvec(&self.x[info.offset..info.offset + info.len], n),
            _ => panic!("variable {} is not a symmetric matrix", info.name),
        }
    }
}

fn svec_pos(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

/// Scaled upper-triangle vectorization.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * (n + 1) / 2];
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[svec_pos(n, i, j)] = if i == j { v } else { v * SQRT2 };
        }
    }
    out
}

pub fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let x = v[svec_pos(n, i, j)];
        if i == j {
            x
        } else {
            x / SQRT2
        }
    })
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: &str, kind: VarKind, len: usize) -> VarId {
        let id = VarId(self.vars.len());
        self.vars.push(VarInfo { name: name.to_string(), kind, offset: self.n, len });
        self.n += len;
        id
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.register(name, VarKind::Scalar, 1)
    }

    pub fn vector(&mut self, name: &str, n: usize) -> VarId {
        self.register(name, VarKind::Vector(n), n)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.register(name, VarKind::Symmetric(n), n * (n + 1) / 2)
    }

    /// Total number of scalar unknowns.
    pub fn num_scalars(&self) -> usize {
        self.n
    }

    pub fn num_variables(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Counts of (zero, nonneg, soc, psd) constraints.
    pub fn constraint_census(&self) -> (usize, usize, usize, usize) {
        let mut c = (0, 0, 0, 0);
        for k in &self.constraints {
            match k {
                Constraint::Zero(_) => c.0 += 1,
                Constraint::NonNeg(_) => c.1 += 1,
                Constraint::Soc(_) => c.2 += 1,
                Constraint::Psd(_) => c.3 += 1,
            }
        }
        c
    }

    pub fn kind(&self, v: VarId) -> VarKind {
        self.vars[v.0].kind
    }

    /// Global index of component `i` of a scalar or vector variable.
    pub fn index(&self, v: VarId, i: usize) -> usize {
        let info = &self.vars[v.0];
        assert!(i < info.len, "component {i} out of range for {}", info.name);
        info.offset + i
    }

    pub fn constant(&self, c: f64) -> Affine {
        Affine::constant(c)
    }

    pub fn var(&self, v: VarId) -> Affine {
        Affine::var(self.index(v, 0))
    }

    pub fn entry(&self, v: VarId, i: usize) -> Affine {
        Affine::var(self.index(v, i))
    }

    /// Column expression of a vector variable.
    pub fn vec_expr(&self, v: VarId) -> MatExpr {
        let info = &self.vars[v.0];
        MatExpr::from_fn(info.len, 1, |i, _| Affine::var(info.offset + i))
    }

    /// Entry `X_ij` of a symmetric matrix variable as an affine expression.
    pub fn sym_entry(&self, v: VarId, i: usize, j: usize) -> Affine {
        let info = &self.vars[v.0];
        let VarKind::Symmetric(n) = info.kind else {
            panic!("variable {} is not symmetric", info.name)
        };
        let mut a = Affine::default();
        a.add_term(info.offset + svec_pos(n, i, j), if i == j { 1.0 } else { 1.0 / SQRT2 });
        a
    }

    pub fn sym_expr(&self, v: VarId) -> SymExpr {
        let VarKind::Symmetric(n) = self.vars[v.0].kind else {
            panic!("variable {} is not symmetric", self.vars[v.0].name)
        };
        let mut out = SymExpr::zeros(n);
        for i in 0..n {
            for j in i..n {
                *out.get_mut(i, j) = self.sym_entry(v, i, j);
            }
        }
        out
    }

    /// `<C, X>` for a constant symmetric `C` and symmetric variable `X`.
    pub fn inner(&self, c: &DMatrix<f64>, v: VarId) -> Affine {
        let info = &self.vars[v.0];
        let coeffs = svec(c);
        let mut a = Affine::default();
        for (k, &cv) in coeffs.iter().enumerate() {
            a.add_term(info.offset + k, cv);
        }
        a
    }

    /// Adds `e` to the linear objective.
    pub fn minimize(&mut self, e: Affine) {
        self.objective.add_scaled(&e, 1.0);
    }

    pub fn add_objective_square(&mut self, weight: f64, e: Affine) {
        assert!(weight >= 0.0, "square weights must be nonnegative");
        self.squares.push((weight, e));
    }

    /// Adds `-weight * log det(e)` to the objective; `e` must stay positive definite.
    pub fn add_objective_neg_logdet(&mut self, weight: f64, e: SymExpr) {
        assert!(weight >= 0.0, "logdet weights must be nonnegative");
        self.neg_logdets.push((weight, e));
    }

    pub fn add_zero(&mut self, e: Affine) {
        self.constraints.push(Constraint::Zero(e));
    }

    pub fn add_nonneg(&mut self, e: Affine) {
        self.constraints.push(Constraint::NonNeg(e));
    }

    /// `t >= ||u||`.
    pub fn add_soc(&mut self, t: Affine, u: Vec<Affine>) {
        let mut v = Vec::with_capacity(u.len() + 1);
        v.push(t);
        v.extend(u);
        self.constraints.push(Constraint::Soc(v));
    }

    /// `||u||^2 <= rhs`, as the cone `((rhs + 1) / 2, (rhs - 1) / 2, u)`.
    pub fn add_quad_le(&mut self, u: Vec<Affine>, rhs: Affine) {
        let mut t = rhs.scaled(0.5);
        t.add_constant(0.5);
        let mut s = rhs.scaled(0.5);
        s.add_constant(-0.5);
        let mut rest = vec![s];
        rest.extend(u);
        self.add_soc(t, rest);
    }

    pub fn add_psd_constraint(&mut self, e: SymExpr) -> Result<ConstraintId> {
        if e.dim() == 0 {
            return Err(Error::ShapeMismatch("empty PSD expression".into()));
        }
        if e.upper.len() != e.n * (e.n + 1) / 2 {
            return Err(Error::ShapeMismatch("malformed symmetric expression".into()));
        }
        self.check_indices(e.upper.iter())?;
        self.constraints.push(Constraint::Psd(e));
        Ok(ConstraintId(self.constraints.len() - 1))
    }

    fn check_indices<'a>(&self, mut it: impl Iterator<Item = &'a Affine>) -> Result<()> {
        if it.any(|a| a.terms.iter().any(|t| t.0 >= self.n)) {
            return Err(Error::ShapeMismatch("expression references an unregistered variable".into()));
        }
        Ok(())
    }

    /// Zero point of the right length, to be filled with `set_*`.
    pub fn point(&self) -> Vec<f64> {
        vec![0.0; self.n]
    }

    pub fn set_scalar(&self, x: &mut [f64], v: VarId, val: f64) {
        x[self.index(v, 0)] = val;
    }

    pub fn set_vector(&self, x: &mut [f64], v: VarId, val: &DVector<f64>) {
        let info = &self.vars[v.0];
        assert_eq!(info.len, val.len(), "length mismatch for {}", info.name);
        x[info.offset..info.offset + info.len].copy_from_slice(val.as_slice());
    }

    pub fn set_matrix(&self, x: &mut [f64], v: VarId, val: &DMatrix<f64>) {
        let info = &self.vars[v.0];
        let s = svec(val);
        assert_eq!(info.len, s.len(), "shape mismatch for {}", info.name);
        x[info.offset..info.offset + info.len].copy_from_slice(&s);
    }

    /// Objective value at `x`; `+inf` outside the domain of the logdet terms.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut v = self.objective.eval(x);
        for (w, e) in &self.squares {
            let r = e.eval(x);
            v += w * r * r;
        }
        for (w, e) in &self.neg_logdets {
            match crate::linalg::logdet_pd(&e.eval(x), "logdet term") {
                Ok(ld) => v -= w * ld,
                Err(_) => return f64::INFINITY,
            }
        }
        v
    }

    /// Largest violation over all constraints at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let v = match c {
                Constraint::Zero(a) => a.eval(x).abs(),
                Constraint::NonNeg(a) => (-a.eval(x)).max(0.0),
                Constraint::Soc(v) => {
                    let t = v[0].eval(x);
                    let n = v[1..].iter().map(|a| a.eval(x).powi(2)).sum::<f64>().sqrt();
                    (n - t).max(0.0)
                }
                Constraint::Psd(e) => (-crate::linalg::min_eigenvalue(&e.eval(x))).max(0.0),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Smallest interior margin over the cone constraints at `x`; positive
    /// exactly when `x` is strictly feasible for all of them.
    pub fn min_margin(&self, x: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for c in &self.constraints {
            let v = match c {
                Constraint::Zero(_) => continue,
                Constraint::NonNeg(a) => a.eval(x),
                Constraint::Soc(v) => {
                    let t = v[0].eval(x);
                    t - v[1..].iter().map(|a| a.eval(x).powi(2)).sum::<f64>().sqrt()
                }
                Constraint::Psd(e) => crate::linalg::min_eigenvalue(&e.eval(x)),
            };
            best = best.min(v);
        }
        best
    }

    pub fn solve(&self, settings: &SolverSettings) -> ConicSolution {
        self.solve_from(&self.point(), settings)
    }

    /// Solves starting from `x0`; a strictly feasible `x0` skips phase I.
    pub fn solve_from(&self, x0: &[f64], settings: &SolverSettings) -> ConicSolution {
        assert_eq!(x0.len(), self.n, "initial point has wrong length");
        let out = barrier::solve(self, x0, settings);
        let objective = self.objective_at(&out.x);
        let max_violation = self.max_violation(&out.x);
        ConicSolution {
            status: out.status,
            x: out.x,
            objective,
            max_violation,
            newton_steps: out.newton_steps,
            vars: self.vars.clone(),
        }
    }

    pub(crate) fn parts(&self) -> (&Affine, &[(f64, Affine)], &[(f64, SymExpr)], &[Constraint]) {
        (&self.objective, &self.squares, &self.neg_logdets, &self.constraints)
    }
}
