//! Convex-concave smoothing of a feasible belief path.
//!
//! Every transition `k` and obstacle `j` carries a multiplier `lambda_{k,j}`
//! (one entry per face) and slacks `R_{k,j}` (start of the transition, posterior
//! information `Q_{k-1} + S_{k-1}`) and `R^_{k,j}` (end, prior information `Q_k`).
//! The LMI `h1` bounds each slack from below by `lambda^T A P A^T lambda`; the
//! DOC constraint `h2` bounds it from above by `2 lambda^T (A x - b) - chi2`.
//! The concave parts of `h2` and of the objective's `logdet(Q + S)` are
//! linearized at the current iterate, giving a convex conic subproblem whose
//! solution can only lower the true cost.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::belief::{self, BeliefPath, BeliefState, ProcessModel};
use crate::collision::{self, DualCertificate, SafetyConfig, TransitionQuery};
use crate::conic::{ConicProblem, MatExpr, SolveStatus, SolverSettings, SymExpr, VarId};
use crate::error::{Error, Result};
use crate::geometry::{Environment, Polytope};
use crate::io::TraceRow;
use crate::linalg;

#[derive(Debug, Clone)]
pub struct SmootherConfig {
    pub max_iters: usize,
    /// Stop once the true cost drops by less than this.
    pub tol: f64,
    pub alpha: f64,
    pub safety: SafetyConfig,
    pub solver: SolverSettings,
    /// Convex combination weight on the new solution; `None` takes it whole.
    pub damping: Option<f64>,
    /// Re-certify every iterate with the collision module.
    pub recertify: bool,
    /// PD floor `Q >= eps I`.
    pub q_floor: f64,
    /// Bound on `tr S_k`, keeping the subproblem's feasible set bounded.
    pub s_trace_cap: f64,
}

impl SmootherConfig {
    pub fn new(alpha: f64, safety: SafetyConfig) -> Self {
        Self {
            max_iters: 15,
            tol: 1e-6,
            alpha,
            safety,
            solver: SolverSettings { max_newton: 20_000, ..SolverSettings::default() },
            damping: None,
            recertify: false,
            q_floor: 1e-9,
            s_trace_cap: 1e7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Domain("alpha must be nonnegative".into()));
        }
        if let Some(w) = self.damping {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Domain("damping weight must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Current CCP iterate. Per-step vectors are indexed by `k = 0..=K`; entries
/// that do not exist (`lambda[0]`, `r[0]`, `r[1]`, `r_hat[0]`) are empty.
#[derive(Debug, Clone)]
pub struct CcpState {
    pub iter: usize,
    pub alpha: f64,
    pub x: Vec<DVector<f64>>,
    pub q: Vec<DMatrix<f64>>,
    pub s: Vec<DMatrix<f64>>,
    pub lambda: Vec<Vec<DVector<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub r_hat: Vec<Vec<f64>>,
    /// Target multipliers, one per target face.
    pub c: Vec<f64>,
    pub history: Vec<f64>,
}

impl CcpState {
    pub fn k(&self) -> usize {
        self.x.len() - 1
    }

    pub fn to_path(&self) -> Result<BeliefPath> {
        let steps = (0..self.x.len())
            .map(|k| BeliefState::new(self.x[k].clone(), self.q[k].clone(), self.s[k].clone()))
            .collect::<Result<Vec<_>>>()?;
        BeliefPath::new(self.alpha, steps)
    }

    /// Information `Q_k + S_k`.
    pub fn info(&self, k: usize) -> DMatrix<f64> {
        &self.q[k] + &self.s[k]
    }

    /// Builds a state from a path and multipliers, with the smallest slacks
    /// allowed by `h1` and the target multipliers at the geometric mean of
    /// their admissible range.
    pub fn from_path(path: &BeliefPath, lambda: Vec<Vec<DVector<f64>>>, env: &Environment, safety: &SafetyConfig) -> Result<Self> {
        let k_count = path.k();
        let j_count = env.j();
        if lambda.len() != k_count + 1 || lambda.iter().skip(1).any(|l| l.len() != j_count) {
            return Err(Error::ShapeMismatch("multiplier table does not match K x J".into()));
        }
        let mut st = CcpState {
            iter: 0,
            alpha: path.alpha,
            x: path.steps.iter().map(|s| s.x.clone()).collect(),
            q: path.steps.iter().map(|s| s.q.clone()).collect(),
            s: path.steps.iter().map(|s| s.s.clone()).collect(),
            lambda,
            r: vec![vec![]; k_count + 1],
            r_hat: vec![vec![]; k_count + 1],
            c: vec![],
            history: vec![],
        };
        for k in 1..=k_count {
            let p_end = linalg::inverse_pd(&st.q[k], "Q_k")?;
            st.r_hat[k] = (0..j_count).map(|j| quad_form(&env.unified[j], &st.lambda[k][j], &p_end)).collect();
            if k >= 2 {
                let p_start = linalg::inverse_pd(&st.info(k - 1), "Q + S")?;
                st.r[k] = (0..j_count).map(|j| quad_form(&env.unified[j], &st.lambda[k][j], &p_start)).collect();
            }
        }
        st.c = init_target_c(&st.x[k_count], &st.info(k_count), &env.target, safety.gamma)?;
        Ok(st)
    }
}

/// `lambda^T A P A^T lambda`.
fn quad_form(o: &Polytope, lam: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    let v = o.a().transpose() * lam;
    v.dot(&(p * &v))
}

fn init_target_c(x: &DVector<f64>, info: &DMatrix<f64>, target: &Polytope, gamma: f64) -> Result<Vec<f64>> {
    let p = linalg::inverse_pd(info, "Q_K + S_K")?;
    (0..target.faces())
        .map(|n| {
            let (a, b) = target.face(n);
            let slack = b - a.dot(x);
            let lo = 1.0 / (gamma * slack);
            let hi = 1.0 / a.dot(&(&p * &a)).sqrt();
            if !(slack > 0.0) || lo > hi * (1.0 + 1e-9) {
                return Err(Error::InitInfeasible { k: 0, j: n });
            }
            Ok((lo * hi.max(lo)).sqrt())
        })
        .collect()
}

/// Prior covariance `Q_k^-1` and preceding posterior `(Q_{k-1} + S_{k-1})^-1`.
fn transition_covariances(path: &BeliefPath, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p_prev = path.steps[k - 1].covariance()?;
    let p_hat = linalg::inverse_pd(&path.steps[k].q, "Q_k")?;
    Ok((p_prev, p_hat))
}

/// Scalar form of the two initialization LMIs: `(g1, g2)` at `lambda`.
pub fn init_lmi_values(
    o: &Polytope,
    lam: &DVector<f64>,
    x_prev: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    x_next: &DVector<f64>,
    p_hat: &DMatrix<f64>,
) -> (f64, f64) {
    let u1 = o.a() * x_prev - o.b();
    let u2 = o.a() * x_next - o.b();
    (2.0 * lam.dot(&u1) - quad_form(o, lam, p_prev), 2.0 * lam.dot(&u2) - quad_form(o, lam, p_hat))
}

/// The initialization LMI `[[2 lambda^T (A x - b) - chi2, lambda^T A], [A^T lambda, info]]`.
pub fn init_lmi_matrix(o: &Polytope, lam: &DVector<f64>, x: &DVector<f64>, info: &DMatrix<f64>, chi2: f64) -> DMatrix<f64> {
    let d = x.len();
    let u = o.a() * x - o.b();
    let v = o.a().transpose() * lam;
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m[(0, 0)] = 2.0 * lam.dot(&u) - chi2;
    for i in 0..d {
        m[(0, i + 1)] = v[i];
        m[(i + 1, 0)] = v[i];
    }
    m.view_mut((1, 1), (d, d)).copy_from(info);
    m
}

/// Finds multipliers satisfying both initialization LMIs for every `(k, j)`,
/// warm-started from the transition certificate.
pub fn init_lambda(path: &BeliefPath, env: &Environment, safety: &SafetyConfig) -> Result<Vec<Vec<DVector<f64>>>> {
    let chi2 = safety.chi2;
    let tol = collision::CERT_TOL * chi2.max(1.0);
    let mut out = vec![vec![]; path.k() + 1];
    for k in 1..=path.k() {
        let (p_prev, p_hat) = transition_covariances(path, k)?;
        let w_eff = linalg::symmetrize(&(&p_hat - &p_prev));
        let x_prev = &path.steps[k - 1].x;
        let x_next = &path.steps[k].x;
        for (j, o) in env.unified.iter().enumerate() {
            let qry = TransitionQuery { x_prev, x_next, p_prev: &p_prev, w: &w_eff, obstacle: o, chi2 };
            let cert = match collision::single_face_certificate(&qry) {
                Some(c) if c.margin > 0.0 => Some(c),
                _ => collision::continuous_certificate_fast(&qry)?,
            };
            let Some(cert) = cert else { return Err(Error::InitInfeasible { k, j }) };
            let (g1, g2) = init_lmi_values(o, &cert.lambda, x_prev, &p_prev, x_next, &p_hat);
            if g1 < chi2 - tol || g2 < chi2 - tol {
                return Err(Error::InitInfeasible { k, j });
            }
            out[k].push(cert.lambda);
        }
    }
    Ok(out)
}

/// `h3(Q, S) = logdet(Q + S) - logdet Q`.
pub fn h3(q: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    Ok(linalg::logdet_pd(&(q + s), "Q + S")? - linalg::logdet_pd(q, "Q")?)
}

/// Majorant of `h3` obtained by linearizing `logdet(Q + S)` at `(Q~, S~)`.
#[derive(Debug, Clone)]
pub struct H3Linearization {
    /// `(Q~ + S~)^-1`, the gradient of `logdet(Q + S)` at the expansion point.
    pub gradient: DMatrix<f64>,
    pub logdet_tilde: f64,
    pub info_tilde: DMatrix<f64>,
}

impl H3Linearization {
    pub fn eval(&self, q: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
        let delta = q + s - &self.info_tilde;
        Ok(self.logdet_tilde - linalg::logdet_pd(q, "Q")? + (&self.gradient * delta).trace())
    }
}

pub fn linearize_h3(q_tilde: &DMatrix<f64>, s_tilde: &DMatrix<f64>) -> Result<H3Linearization> {
    let info_tilde = q_tilde + s_tilde;
    let gradient = linalg::inverse_pd(&info_tilde, "Q~ + S~")?;
    let logdet_tilde = linalg::logdet_pd(&info_tilde, "Q~ + S~")?;
    Ok(H3Linearization { gradient: linalg::symmetrize(&gradient), logdet_tilde, info_tilde })
}

/// `h2(R, x, lambda) = R + chi2 + |A x - b|^2 + |lambda|^2 - |A x - b + lambda|^2`.
pub fn h2(r: f64, x: &DVector<f64>, lam: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, chi2: f64) -> f64 {
    let u = a * x - b;
    r + chi2 + u.norm_squared() + lam.norm_squared() - (u + lam).norm_squared()
}

/// Majorant of `h2` obtained by linearizing `-|A x - b + lambda|^2` at `(x~, lambda~)`.
#[derive(Debug, Clone)]
pub struct H2Linearization {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub x_tilde: DVector<f64>,
    pub lambda_tilde: DVector<f64>,
    /// `A x~ - b + lambda~`.
    pub z_tilde: DVector<f64>,
    pub chi2: f64,
}

impl H2Linearization {
    pub fn eval(&self, r: f64, x: &DVector<f64>, lam: &DVector<f64>) -> f64 {
        let u = &self.a * x - &self.b;
        let shift = &self.a * (x - &self.x_tilde) + lam - &self.lambda_tilde;
        r + self.chi2 + u.norm_squared() + lam.norm_squared()
            - self.z_tilde.norm_squared()
            - 2.0 * self.z_tilde.dot(&shift)
    }
}

pub fn linearize_h2(
    x_tilde: &DVector<f64>,
    lambda_tilde: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    chi2: f64,
) -> Result<H2Linearization> {
    if a.ncols() != x_tilde.len() || a.nrows() != b.len() || lambda_tilde.len() != b.len() {
        return Err(Error::ShapeMismatch("h2 linearization shapes".into()));
    }
    let z_tilde = a * x_tilde - b + lambda_tilde;
    Ok(H2Linearization { a: a.clone(), b: b.clone(), x_tilde: x_tilde.clone(), lambda_tilde: lambda_tilde.clone(), z_tilde, chi2 })
}

/// Variable handles of one assembled subproblem.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub prob: ConicProblem,
    /// Indexed by `k = 1..=K` (entry 0 unused).
    pub x: Vec<Option<VarId>>,
    pub q: Vec<Option<VarId>>,
    pub s: Vec<Option<VarId>>,
    pub lambda: Vec<Vec<VarId>>,
    pub r: Vec<Vec<VarId>>,
    pub r_hat: Vec<Vec<VarId>>,
    pub c: Vec<VarId>,
}

impl Subproblem {
    /// Solver vector holding `state`.
    pub fn point_from_state(&self, state: &CcpState) -> Vec<f64> {
        let p = &self.prob;
        let mut x0 = p.point();
        for k in 1..=state.k() {
            p.set_vector(&mut x0, self.x[k].expect("x var"), &state.x[k]);
            p.set_matrix(&mut x0, self.q[k].expect("q var"), &state.q[k]);
            p.set_matrix(&mut x0, self.s[k].expect("s var"), &state.s[k]);
            for (j, &v) in self.lambda[k].iter().enumerate() {
                p.set_vector(&mut x0, v, &state.lambda[k][j]);
            }
            for (j, &v) in self.r[k].iter().enumerate() {
                p.set_scalar(&mut x0, v, state.r[k][j]);
            }
            for (j, &v) in self.r_hat[k].iter().enumerate() {
                p.set_scalar(&mut x0, v, state.r_hat[k][j]);
            }
        }
        for (n, &v) in self.c.iter().enumerate() {
            p.set_scalar(&mut x0, v, state.c[n]);
        }
        x0
    }

    /// Reads a solution back into a state skeleton shaped like `like`.
    pub fn state_from_point(&self, sol: &crate::conic::ConicSolution, like: &CcpState) -> CcpState {
        let mut st = like.clone();
        for k in 1..=like.k() {
            st.x[k] = sol.vector(self.x[k].expect("x var"));
            st.q[k] = linalg::symmetrize(&sol.matrix(self.q[k].expect("q var")));
            st.s[k] = linalg::symmetrize(&sol.matrix(self.s[k].expect("s var")));
            st.lambda[k] = self.lambda[k].iter().map(|&v| sol.vector(v).map(|l| l.max(0.0))).collect();
            st.r[k] = self.r[k].iter().map(|&v| sol.value(v)).collect();
            st.r_hat[k] = self.r_hat[k].iter().map(|&v| sol.value(v)).collect();
        }
        st.c = self.c.iter().map(|&v| sol.value(v)).collect();
        st
    }
}

/// `[[r, lambda^T A], [A^T lambda, info]]` as a symmetric expression.
fn h1_expr(r: Affine1, lam: &MatExpr, a: &DMatrix<f64>, info: &SymExpr) -> Result<SymExpr> {
    // lambda is f x 1; A^T lambda is d x 1
    let atl = lam.mul_const_left(&a.transpose())?;
    let corner = MatExpr::from_fn(1, 1, |_, _| r.clone());
    SymExpr::from_blocks(&[vec![corner, atl.transpose()], vec![atl, info.to_mat()]])
}

type Affine1 = crate::conic::Affine;

/// Assembles the convex subproblem linearized at `state`.
pub fn build_subproblem(state: &CcpState, env: &Environment, model: &ProcessModel, config: &SmootherConfig) -> Result<Subproblem> {
    let k_count = state.k();
    if k_count == 0 {
        return Err(Error::ShapeMismatch("state needs at least one transition".into()));
    }
    let d = env.dim();
    let j_count = env.j();
    if state.x.iter().any(|x| x.len() != d)
        || state.q.len() != k_count + 1
        || state.s.len() != k_count + 1
        || state.lambda.len() != k_count + 1
        || state.r.len() != k_count + 1
        || state.r_hat.len() != k_count + 1
        || state.c.len() != env.target.faces()
    {
        return Err(Error::ShapeMismatch("CCP state does not match the environment".into()));
    }
    for k in 1..=k_count {
        if state.lambda[k].len() != j_count
            || state.r_hat[k].len() != j_count
            || (k >= 2 && state.r[k].len() != j_count)
            || state.lambda[k].iter().zip(&env.unified).any(|(l, o)| l.len() != o.faces())
        {
            return Err(Error::ShapeMismatch(format!("multipliers or slacks at step {k}")));
        }
    }
    let chi2 = config.safety.chi2;
    let gamma = config.safety.gamma;
    let alpha = config.alpha;
    let w = &model.w;

    let mut prob = ConicProblem::new();
    let mut sp = Subproblem {
        prob: ConicProblem::new(),
        x: vec![None; k_count + 1],
        q: vec![None; k_count + 1],
        s: vec![None; k_count + 1],
        lambda: vec![vec![]; k_count + 1],
        r: vec![vec![]; k_count + 1],
        r_hat: vec![vec![]; k_count + 1],
        c: vec![],
    };
    for k in 1..=k_count {
        sp.x[k] = Some(prob.vector(&format!("x{k}"), d));
        sp.q[k] = Some(prob.symmetric(&format!("Q{k}"), d));
        sp.s[k] = Some(prob.symmetric(&format!("S{k}"), d));
    }
    for k in 1..=k_count {
        for (j, o) in env.unified.iter().enumerate() {
            sp.lambda[k].push(prob.vector(&format!("lambda{k}_{j}"), o.faces()));
            sp.r_hat[k].push(prob.scalar(&format!("Rhat{k}_{j}")));
            if k >= 2 {
                sp.r[k].push(prob.scalar(&format!("R{k}_{j}")));
            }
        }
    }
    for n in 0..env.target.faces() {
        sp.c.push(prob.scalar(&format!("C{n}")));
    }

    let xvec = |prob: &ConicProblem, k: usize| -> MatExpr {
        match sp.x[k] {
            Some(v) => prob.vec_expr(v),
            None => MatExpr::from_constant(&DMatrix::from_column_slice(d, 1, state.x[0].as_slice())),
        }
    };
    let info_expr = |prob: &ConicProblem, k: usize| -> Result<SymExpr> {
        match (sp.q[k], sp.s[k]) {
            (Some(q), Some(s)) => prob.sym_expr(q).plus(&prob.sym_expr(s)),
            _ => SymExpr::from_constant(&state.info(0)),
        }
    };

    // objective
    for k in 1..=k_count {
        let cur = xvec(&prob, k);
        let prev = xvec(&prob, k - 1);
        for i in 0..d {
            prob.add_objective_square(1.0, cur.get(i, 0).minus(prev.get(i, 0)));
        }
        let lin = linearize_h3(&state.q[k], &state.s[k])?;
        let qv = sp.q[k].expect("q var");
        let sv = sp.s[k].expect("s var");
        let mut e = prob.inner(&lin.gradient, qv).plus(&prob.inner(&lin.gradient, sv));
        e.add_constant(lin.logdet_tilde - d as f64);
        prob.minimize(e.scaled(0.5 * alpha));
        prob.add_objective_neg_logdet(0.5 * alpha, prob.sym_expr(qv));
    }

    // variable domains
    for k in 1..=k_count {
        let qv = sp.q[k].expect("q var");
        let sv = sp.s[k].expect("s var");
        let floor = SymExpr::from_constant(&(DMatrix::identity(d, d) * -config.q_floor))?;
        prob.add_psd_constraint(prob.sym_expr(qv).plus(&floor)?)?;
        prob.add_psd_constraint(prob.sym_expr(sv))?;
        let mut cap = prob.inner(&DMatrix::identity(d, d), sv).scaled(-1.0);
        cap.add_constant(config.s_trace_cap);
        prob.add_nonneg(cap);
        for j in 0..j_count {
            for i in 0..env.unified[j].faces() {
                prob.add_nonneg(prob.entry(sp.lambda[k][j], i));
            }
            prob.add_nonneg(prob.var(sp.r_hat[k][j]));
            if k >= 2 {
                prob.add_nonneg(prob.var(sp.r[k][j]));
            }
        }
    }
    for &c in &sp.c {
        prob.add_nonneg(prob.var(c));
    }

    // Kalman filter relaxation. With W > 0 the congruence diag(I, I, W^-1)
    // gives [[Q, Q, Q], [Q, M, 0], [Q, 0, W^-1]], whose blocks share one scale.
    let w_inv = nalgebra::Cholesky::new(w.clone()).map(|c| linalg::symmetrize(&c.inverse()));
    for k in 1..=k_count {
        let qm = prob.sym_expr(sp.q[k].expect("q var")).to_mat();
        let prev = info_expr(&prob, k - 1)?.to_mat();
        let z = MatExpr::zeros(d, d);
        let blocks = match &w_inv {
            Some(wi) => [
                vec![qm.clone(), qm.clone(), qm.clone()],
                vec![qm.clone(), prev, z.clone()],
                vec![qm.clone(), z, MatExpr::from_constant(wi)],
            ],
            None => {
                let qw = qm.mul_const_right(w)?;
                [
                    vec![qm.clone(), qm.clone(), qw.clone()],
                    vec![qm.clone(), prev, z.clone()],
                    vec![qw.transpose(), z, MatExpr::from_constant(w)],
                ]
            }
        };
        prob.add_psd_constraint(SymExpr::from_blocks(&blocks)?)?;
    }

    // target: ellipse of the final posterior inside every target face
    let x_k = xvec(&prob, k_count);
    let info_k = info_expr(&prob, k_count)?;
    for (n, &cv) in sp.c.iter().enumerate() {
        let (a, b) = env.target.face(n);
        let mut slack = Affine1::constant(b);
        for i in 0..d {
            slack.add_scaled(x_k.get(i, 0), -a[i]);
        }
        let one = Affine1::constant(1.0);
        let first = MatExpr::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => slack.clone(),
            (1, 1) => prob.var(cv).scaled(gamma),
            _ => one.clone(),
        });
        prob.add_psd_constraint(SymExpr::from_mat(&first)?)?;
        let ca = MatExpr::from_fn(d, 1, |i, _| prob.var(cv).scaled(a[i]));
        let blocks = [vec![MatExpr::from_fn(1, 1, |_, _| one.clone()), ca.transpose()], vec![ca, info_k.to_mat()]];
        prob.add_psd_constraint(SymExpr::from_blocks(&blocks)?)?;
    }

    for (j, o) in env.unified.iter().enumerate() {
        let a = o.a();
        let b = o.b();
        // initial transition against the fixed starting belief
        {
            let lam = prob.vec_expr(sp.lambda[1][j]);
            let u0 = a * &state.x[0] - b;
            let mut corner = Affine1::constant(-chi2);
            for i in 0..o.faces() {
                corner.add_term(prob.index(sp.lambda[1][j], i), 2.0 * u0[i]);
            }
            prob.add_psd_constraint(h1_expr(corner, &lam, a, &info_expr(&prob, 0)?)?)?;
        }
        for k in 1..=k_count {
            let lam = prob.vec_expr(sp.lambda[k][j]);
            // end of transition k: prior information Q_k at x_k
            let qk = prob.sym_expr(sp.q[k].expect("q var"));
            prob.add_psd_constraint(h1_expr(prob.var(sp.r_hat[k][j]), &lam, a, &qk)?)?;
            add_h2_bar(&mut prob, &sp, state, o, k, j, k, sp.r_hat[k][j], chi2)?;
            if k >= 2 {
                // start of transition k: posterior information at x_{k-1}
                let info = info_expr(&prob, k - 1)?;
                prob.add_psd_constraint(h1_expr(prob.var(sp.r[k][j]), &lam, a, &info)?)?;
                add_h2_bar(&mut prob, &sp, state, o, k, j, k - 1, sp.r[k][j], chi2)?;
            }
        }
    }
    sp.prob = prob;
    Ok(sp)
}

/// `h2_bar(R, x_at, lambda_{k,j}) <= 0` as a scaled quadratic cone constraint.
#[allow(clippy::too_many_arguments)]
fn add_h2_bar(
    prob: &mut ConicProblem,
    sp: &Subproblem,
    state: &CcpState,
    o: &Polytope,
    k: usize,
    j: usize,
    at: usize,
    r: VarId,
    chi2: f64,
) -> Result<()> {
    let a = o.a();
    let b = o.b();
    let f = o.faces();
    let d = a.ncols();
    let lin = linearize_h2(&state.x[at], &state.lambda[k][j], a, b, chi2)?;
    let xv = sp.x[at].expect("x var");
    let lv = sp.lambda[k][j];
    // scale so that the cone data stays O(1)
    let sigma = 1.0 / lin.z_tilde.norm().max(1.0);
    let mut u = Vec::with_capacity(2 * f);
    for i in 0..f {
        let mut e = Affine1::constant(-b[i] * sigma);
        for c in 0..d {
            e.add_term(prob.index(xv, c), a[(i, c)] * sigma);
        }
        u.push(e);
    }
    for i in 0..f {
        u.push(prob.entry(lv, i).scaled(sigma));
    }
    // rhs = -R - chi2 + |z~|^2 + 2 z~^T (A (x - x~) + lambda - lambda~)
    let z = &lin.z_tilde;
    let mut rhs = prob.var(r).scaled(-1.0);
    let mut constant = -chi2 + z.norm_squared();
    let az = a.transpose() * z;
    for c in 0..d {
        rhs.add_term(prob.index(xv, c), 2.0 * az[c]);
    }
    constant -= 2.0 * az.dot(&lin.x_tilde);
    for i in 0..f {
        rhs.add_term(prob.index(lv, i), 2.0 * z[i]);
    }
    constant -= 2.0 * z.dot(&lin.lambda_tilde);
    rhs.add_constant(constant);
    prob.add_quad_le(u, rhs.scaled(sigma * sigma));
    Ok(())
}

/// `max_k |Q_k^-1 - (Q_{k-1} + S_{k-1})^-1 - W|_F`.
pub fn check_kf_tightness(path: &BeliefPath, model: &ProcessModel) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 1..path.steps.len() {
        let lhs = linalg::inverse_pd(&path.steps[k].q, "Q_k")?;
        let rhs = path.steps[k - 1].covariance()? + &model.w;
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(worst)
}

/// Largest violation of the un-linearized constraints at `state`: KF
/// relaxation, initial LMI, both `h1` families, both `h2` families, the
/// target LMIs and the variable domains.
pub fn constraint_violation(state: &CcpState, env: &Environment, model: &ProcessModel, safety: &SafetyConfig) -> Result<f64> {
    let chi2 = safety.chi2;
    let k_count = state.k();
    let mut worst = 0.0f64;
    let neg = |m: &DMatrix<f64>| (-linalg::min_eigenvalue(m)).max(0.0);
    for k in 1..=k_count {
        let p_prev = linalg::inverse_pd(&state.info(k - 1), "Q + S")?;
        let q_inv = linalg::inverse_pd(&state.q[k], "Q_k")?;
        worst = worst.max(neg(&linalg::symmetrize(&(q_inv - p_prev - &model.w))));
        worst = worst.max(neg(&state.s[k]));
        for (j, o) in env.unified.iter().enumerate() {
            let lam = &state.lambda[k][j];
            worst = worst.max((-lam.min()).max(0.0));
            if k == 1 {
                worst = worst.max(neg(&init_lmi_matrix(o, lam, &state.x[0], &state.info(0), chi2)));
            } else {
                let r = state.r[k][j];
                worst = worst.max((-r).max(0.0));
                worst = worst.max(neg(&h1_matrix(r, lam, o.a(), &state.info(k - 1))));
                worst = worst.max(h2(r, &state.x[k - 1], lam, o.a(), o.b(), chi2).max(0.0));
            }
            let rh = state.r_hat[k][j];
            worst = worst.max((-rh).max(0.0));
            worst = worst.max(neg(&h1_matrix(rh, lam, o.a(), &state.q[k])));
            worst = worst.max(h2(rh, &state.x[k], lam, o.a(), o.b(), chi2).max(0.0));
        }
    }
    let (xk, info) = (&state.x[k_count], state.info(k_count));
    for (n, &c) in state.c.iter().enumerate() {
        let (a, b) = env.target.face(n);
        worst = worst.max((-c).max(0.0));
        let (b1, b2) = collision::halfspace_lmi_blocks(&a, b, xk, &info, safety.gamma, c);
        worst = worst.max(neg(&b1)).max(neg(&b2));
    }
    Ok(worst)
}

/// Largest `h2` over both families at `state` (nonpositive when feasible).
pub fn max_h2(state: &CcpState, env: &Environment, safety: &SafetyConfig) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=state.k() {
        for (j, o) in env.unified.iter().enumerate() {
            let lam = &state.lambda[k][j];
            worst = worst.max(h2(state.r_hat[k][j], &state.x[k], lam, o.a(), o.b(), safety.chi2));
            if k >= 2 {
                worst = worst.max(h2(state.r[k][j], &state.x[k - 1], lam, o.a(), o.b(), safety.chi2));
            }
        }
    }
    worst
}

pub fn h1_matrix(r: f64, lam: &DVector<f64>, a: &DMatrix<f64>, info: &DMatrix<f64>) -> DMatrix<f64> {
    let d = info.nrows();
    let v = a.transpose() * lam;
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m[(0, 0)] = r;
    for i in 0..d {
        m[(0, i + 1)] = v[i];
        m[(i + 1, 0)] = v[i];
    }
    m.view_mut((1, 1), (d, d)).copy_from(info);
    m
}

/// Rebuilds `Q_k` by the exact filter recursion, keeping everything else.
fn tighten(state: &mut CcpState, model: &ProcessModel) -> Result<()> {
    for k in 1..=state.k() {
        let p = linalg::inverse_pd(&state.info(k - 1), "Q + S")?;
        state.q[k] = linalg::symmetrize(&linalg::inverse_pd(&(p + &model.w), "propagated prior")?);
    }
    Ok(())
}

/// A copy of `state` pushed off the boundary of the subproblem's feasible set
/// by a relative amount `delta`: every `Q_k` shrinks below its filter value,
/// `S_k` and the multipliers gain a small floor, and the slacks move to the
/// middle of their admissible intervals.
pub fn interior_state(state: &CcpState, env: &Environment, model: &ProcessModel, config: &SmootherConfig, delta: f64) -> Result<CcpState> {
    let chi2 = config.safety.chi2;
    let k_count = state.k();
    let d = env.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    let mut st = state.clone();
    for k in 1..=k_count {
        let p = linalg::inverse_pd(&st.info(k - 1), "Q + S")?;
        let q = linalg::symmetrize(&linalg::inverse_pd(&(p + &model.w), "propagated prior")?);
        let scale = q.trace() / d as f64;
        st.q[k] = &q * (1.0 - delta);
        st.s[k] = &state.s[k] + &eye * (delta * scale);
        if k == k_count {
            st.s[k] += &q * (2.0 * delta);
        }
        for lam in st.lambda[k].iter_mut() {
            let floor = delta * 1e-3 * lam.amax().max(1.0);
            lam.apply(|l| *l = l.max(0.0) + floor);
        }
    }
    let mid = |lo: f64, hi: f64| if lo < hi { Some(0.5 * (lo + hi)) } else { None };
    for k in 1..=k_count {
        let p_end = linalg::inverse_pd(&st.q[k], "Q_k")?;
        let p_start = if k >= 2 { Some(linalg::inverse_pd(&st.info(k - 1), "Q + S")?) } else { None };
        for (j, o) in env.unified.iter().enumerate() {
            let lam = &st.lambda[k][j];
            let hi_end = 2.0 * lam.dot(&(o.a() * &st.x[k] - o.b())) - chi2;
            st.r_hat[k][j] = mid(quad_form(o, lam, &p_end), hi_end)
                .ok_or_else(|| Error::NumericalFailure(format!("no interior slack at step {k}, obstacle {j}")))?;
            if let Some(p_start) = &p_start {
                let hi_start = 2.0 * lam.dot(&(o.a() * &st.x[k - 1] - o.b())) - chi2;
                st.r[k][j] = mid(quad_form(o, lam, p_start), hi_start)
                    .ok_or_else(|| Error::NumericalFailure(format!("no interior slack at step {k}, obstacle {j}")))?;
            }
        }
    }
    st.c = init_target_c(&st.x[k_count], &st.info(k_count), &env.target, config.safety.gamma)?;
    Ok(st)
}

/// Outcome of one CCP iteration.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Advanced(CcpState),
    /// The conic solver stalled; the previous state stands.
    Stalled,
}

/// One linearize-and-solve round.
pub fn ccp_step(state: &CcpState, env: &Environment, model: &ProcessModel, config: &SmootherConfig) -> Result<StepOutcome> {
    let iter = state.iter + 1;
    let sp = build_subproblem(state, env, model, config)?;
    let mut x0 = sp.point_from_state(state);
    for delta in [1e-6, 1e-4, 1e-8] {
        if let Ok(inner) = interior_state(state, env, model, config, delta) {
            let cand = sp.point_from_state(&inner);
            if sp.prob.min_margin(&cand) > 0.0 {
                x0 = cand;
                break;
            }
        }
    }
    let sol = sp.prob.solve_from(&x0, &config.solver);
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::SubproblemInfeasible(iter)),
        SolveStatus::Unbounded => return Err(Error::NumericalFailure(format!("subproblem {iter} reported unbounded"))),
        SolveStatus::Stalled => return Ok(StepOutcome::Stalled),
    }
    let mut next = sp.state_from_point(&sol, state);
    if let Some(wt) = config.damping {
        blend(&mut next, state, wt);
    }
    tighten(&mut next, model)?;
    next.iter = iter;
    let cost = belief::path_cost(&next.to_path()?)?;
    next.history.push(cost);
    Ok(StepOutcome::Advanced(next))
}

fn blend(next: &mut CcpState, prev: &CcpState, wt: f64) {
    let mix = |a: f64, b: f64| wt * a + (1.0 - wt) * b;
    for k in 1..=next.k() {
        next.x[k] = &next.x[k] * wt + &prev.x[k] * (1.0 - wt);
        next.q[k] = &next.q[k] * wt + &prev.q[k] * (1.0 - wt);
        next.s[k] = &next.s[k] * wt + &prev.s[k] * (1.0 - wt);
        for j in 0..next.lambda[k].len() {
            next.lambda[k][j] = &next.lambda[k][j] * wt + &prev.lambda[k][j] * (1.0 - wt);
            next.r_hat[k][j] = mix(next.r_hat[k][j], prev.r_hat[k][j]);
            if k >= 2 {
                next.r[k][j] = mix(next.r[k][j], prev.r[k][j]);
            }
        }
    }
    for n in 0..next.c.len() {
        next.c[n] = mix(next.c[n], prev.c[n]);
    }
}

#[derive(Debug, Clone)]
pub struct SmoothOutput {
    pub path: BeliefPath,
    pub state: CcpState,
    pub trace: Vec<TraceRow>,
    /// Certificate per transition `k = 1..=K` (index `k - 1`) and obstacle.
    pub certificates: Vec<Vec<DualCertificate>>,
    pub kf_residual: f64,
    /// The conic solver stalled before the budget ran out.
    pub stalled: bool,
    /// Every iterate (after the seed) for callers that re-check them.
    pub iterates: Vec<CcpState>,
}

/// Certificates of the final state, with margins recomputed from its beliefs.
fn certificates(state: &CcpState, env: &Environment, safety: &SafetyConfig) -> Result<Vec<Vec<DualCertificate>>> {
    let path = state.to_path()?;
    let mut out = Vec::with_capacity(state.k());
    for k in 1..=state.k() {
        let (p_prev, p_hat) = transition_covariances(&path, k)?;
        let row = env
            .unified
            .iter()
            .enumerate()
            .map(|(j, o)| {
                let lam = state.lambda[k][j].clone();
                let (g1, g2) = init_lmi_values(o, &lam, &state.x[k - 1], &p_prev, &state.x[k], &p_hat);
                DualCertificate { lambda: lam, margin: g1.min(g2) - safety.chi2 }
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Re-certifies every transition and the final state with the collision module.
pub fn recertify(path: &BeliefPath, env: &Environment, model: &ProcessModel, safety: &SafetyConfig) -> Result<bool> {
    for k in 1..path.steps.len() {
        let prev = &path.steps[k - 1];
        let p = prev.covariance()?;
        if !collision::transition_is_safe(&prev.x, &path.steps[k].x, &p, &model.w, env, safety.chi2)? {
            return Ok(false);
        }
    }
    let last = path.steps.last().expect("path has steps");
    collision::admissible_final(&last.x, &last.q, &last.s, env, safety.chi2)
}

/// Runs the CCP from a feasible seed path.
pub fn smooth(seed: &BeliefPath, env: &Environment, model: &ProcessModel, config: &SmootherConfig) -> Result<SmoothOutput> {
    config.validate()?;
    let mut path = seed.clone();
    path.alpha = config.alpha;
    path.repropagate(model)?;
    let lambda = init_lambda(&path, env, &config.safety)?;
    let mut state = CcpState::from_path(&path, lambda, env, &config.safety)?;
    let cost0 = belief::path_cost(&path)?;
    state.history.push(cost0);
    let (c0, i0) = belief::path_cost_parts(&path)?;
    let mut trace = vec![TraceRow {
        iter: 0,
        cost: cost0,
        cost_control: c0,
        cost_info: i0,
        viol: constraint_violation(&state, env, model, &config.safety)?,
        ms: 0.0,
    }];
    let mut stalled = false;
    let mut iterates = Vec::new();
    for _ in 0..config.max_iters {
        let t0 = Instant::now();
        let next = match ccp_step(&state, env, model, config)? {
            StepOutcome::Advanced(s) => s,
            StepOutcome::Stalled => {
                stalled = true;
                break;
            }
        };
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        let prev_cost = *state.history.last().expect("history");
        let cost = *next.history.last().expect("history");
        if cost > prev_cost {
            // An inexact subproblem solve; the majorization guarantees the
            // previous iterate is at least as good.
            log::debug!("ccp iter {} raised the cost to {cost:.9}; keeping the previous iterate", next.iter);
            stalled = true;
            break;
        }
        let p = next.to_path()?;
        if config.recertify && !recertify(&p, env, model, &config.safety)? {
            return Err(Error::NumericalFailure(format!("iterate {} failed re-certification", next.iter)));
        }
        let (cc, ci) = belief::path_cost_parts(&p)?;
        trace.push(TraceRow {
            iter: next.iter,
            cost,
            cost_control: cc,
            cost_info: ci,
            viol: constraint_violation(&next, env, model, &config.safety)?,
            ms,
        });
        log::debug!("ccp iter {} cost {cost:.9} ({ms:.0} ms)", next.iter);
        let decrease = prev_cost - cost;
        iterates.push(next.clone());
        state = next;
        if decrease < config.tol {
            break;
        }
    }
    let path = state.to_path()?;
    let kf_residual = check_kf_tightness(&path, model)?;
    let certs = certificates(&state, env, &config.safety)?;
    Ok(SmoothOutput { path, state, trace, certificates: certs, kf_residual, stalled, iterates })
}
