//! Duality-based collision certificates for Gaussian beliefs against
//! polyhedral obstacles, and brute-force oracles used to validate them.
//!
//! Throughout, an obstacle is `{x : A x <= b}` and the dual function is
//! `g(lambda) = -lambda^T A P A^T lambda + 2 lambda^T (A x - b)` for a belief
//! with mean `x` and covariance `P`. The ellipse at level `chi2` misses the
//! obstacle iff `max_{lambda >= 0} g >= chi2`.

use nalgebra::{DMatrix, DVector};

use crate::conic::{ConicProblem, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::geometry::{chi2_quantile, Environment, Polytope};
use crate::linalg;

/// Absolute slack on certificate verdicts, scaled by `max(1, chi2)`.
pub const CERT_TOL: f64 = 1e-9;

fn cert_tol(chi2: f64) -> f64 {
    CERT_TOL * chi2.max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConfig {
    pub pr: f64,
    pub chi2: f64,
    pub gamma: f64,
    pub d: usize,
}

impl SafetyConfig {
    pub fn new(pr: f64, d: usize) -> Result<Self> {
        let chi2 = chi2_quantile(pr, d)?;
        Ok(Self { pr, chi2, gamma: 1.0 / chi2.sqrt(), d })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub lambda: DVector<f64>,
    /// Certified value minus `chi2`.
    pub margin: f64,
}

/// One transition `x_prev -> x_next` starting from posterior covariance `p_prev`.
#[derive(Debug, Clone, Copy)]
pub struct TransitionQuery<'a> {
    pub x_prev: &'a DVector<f64>,
    pub x_next: &'a DVector<f64>,
    pub p_prev: &'a DMatrix<f64>,
    pub w: &'a DMatrix<f64>,
    pub obstacle: &'a Polytope,
    pub chi2: f64,
}

fn dual_value(g: &DMatrix<f64>, u: &DVector<f64>, lam: &DVector<f64>) -> f64 {
    -lam.dot(&(g * lam)) + 2.0 * lam.dot(u)
}

/// Calls `f` on every subset of `0..f` with at most `max` elements.
fn for_each_subset(f: usize, max: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = Vec::with_capacity(max);
    visit(&idx);
    fn rec(start: usize, f: usize, max: usize, idx: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        for i in start..f {
            idx.push(i);
            visit(idx);
            if idx.len() < max {
                rec(i + 1, f, max, idx, visit);
            }
            idx.pop();
        }
    }
    rec(0, f, max, &mut idx, &mut visit);
}

/// `max_{lambda >= 0} -lambda^T G lambda + 2 lambda^T u` with `G = A P A^T`.
///
/// Enumerates supports of size at most `d` (some optimal multiplier has
/// linearly independent active faces) and keeps the best KKT point; falls
/// back to accelerated projected gradient when no support passes.
fn max_dual(g: &DMatrix<f64>, u: &DVector<f64>, d: usize) -> Result<(f64, DVector<f64>)> {
    let f = u.len();
    let scale = u.amax().max(g.amax()).max(1e-300);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for_each_subset(f, d.min(f), |t| {
        let mut lam = DVector::zeros(f);
        if !t.is_empty() {
            let gt = DMatrix::from_fn(t.len(), t.len(), |r, c| g[(t[r], t[c])]);
            let ut = DVector::from_fn(t.len(), |r, _| u[t[r]]);
            let Some(ch) = nalgebra::Cholesky::new(gt.clone()) else { return };
            // reject near-singular supports
            let diag_min = (0..t.len()).map(|i| ch.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
            if !(diag_min * diag_min > 1e-13 * gt.amax()) {
                return;
            }
            let lt = ch.solve(&ut);
            if lt.iter().any(|v| *v < -1e-12 * lt.amax().max(1e-300)) {
                return;
            }
            for (r, &i) in t.iter().enumerate() {
                lam[i] = lt[r].max(0.0);
            }
        }
        let grad = u - g * &lam;
        let tol = 1e-9 * (u.amax() + (g * &lam).amax()).max(1e-300);
        let kkt = (0..f).filter(|i| !t.contains(i)).all(|i| grad[i] <= tol);
        if kkt {
            let val = dual_value(g, u, &lam);
            if best.as_ref().map_or(true, |(b, _)| val > *b) {
                best = Some((val, lam));
            }
        }
    });
    if let Some(b) = best {
        return Ok(b);
    }
    projected_gradient(g, u, scale)
}

fn projected_gradient(g: &DMatrix<f64>, u: &DVector<f64>, scale: f64) -> Result<(f64, DVector<f64>)> {
    let f = u.len();
    let lmax = linalg::max_eigenvalue(g).max(1e-300);
    let step = 1.0 / (2.0 * lmax);
    let mut lam = DVector::zeros(f);
    let mut y = lam.clone();
    let mut tk = 1.0f64;
    for _ in 0..200_000 {
        let grad = (u - g * &y) * 2.0;
        let next = (&y + &grad * step).map(|v| v.max(0.0));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = &next + (&next - &lam) * ((tk - 1.0) / tn);
        lam = next;
        tk = tn;
        let gl = (u - g * &lam) * 2.0;
        let res = (0..f).map(|i| if lam[i] > 0.0 { gl[i].abs() } else { gl[i].max(0.0) }).fold(0.0, f64::max);
        if res <= 1e-9 * scale {
            return Ok((dual_value(g, u, &lam), lam));
        }
    }
    Err(Error::NumericalFailure("dual ascent did not reach the KKT tolerance".into()))
}

/// Best dual value and multiplier for a belief with covariance `p`.
fn discrete_dual(x: &DVector<f64>, p: &DMatrix<f64>, obstacle: &Polytope) -> Result<(f64, DVector<f64>)> {
    let a = obstacle.a();
    let u = a * x - obstacle.b();
    let g = linalg::symmetrize(&(a * p * a.transpose()));
    max_dual(&g, &u, obstacle.dim())
}

/// Dual discrete certificate for the ellipse `(x, Q^-1)` at level `chi2`.
pub fn discrete_certificate(
    x: &DVector<f64>,
    q: &DMatrix<f64>,
    obstacle: &Polytope,
    chi2: f64,
) -> Result<Option<DualCertificate>> {
    linalg::check_square(q, obstacle.dim(), "Q")?;
    linalg::check_len(x, obstacle.dim(), "x")?;
    let p = linalg::inverse_pd(q, "Q")?;
    discrete_certificate_cov(x, &p, obstacle, chi2)
}

/// Same as [`discrete_certificate`] with the covariance given directly.
pub fn discrete_certificate_cov(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    obstacle: &Polytope,
    chi2: f64,
) -> Result<Option<DualCertificate>> {
    let (val, lam) = discrete_dual(x, p, obstacle)?;
    Ok((val >= chi2 - cert_tol(chi2)).then(|| DualCertificate { lambda: lam, margin: val - chi2 }))
}

/// `2 V*` where `V* = min_{A y <= b} (1/2)(y - x)^T Q (y - x)`, by primal enumeration.
///
/// For `f <= 8`, every projection of `x` onto the affine hull of at most `d`
/// faces is formed and the cheapest feasible one is kept (the optimum is one
/// of them). Larger obstacles go through the conic solver.
pub fn discrete_oracle_value(x: &DVector<f64>, q: &DMatrix<f64>, obstacle: &Polytope) -> Result<f64> {
    let a = obstacle.a();
    let b = obstacle.b();
    let f = obstacle.faces();
    let d = obstacle.dim();
    let p = linalg::inverse_pd(q, "Q")?;
    if f > 8 {
        return conic_projection(x, q, obstacle);
    }
    let feas_tol = 1e-10 * (b.amax() + (a * x).amax()).max(1.0);
    let mut best = f64::INFINITY;
    for_each_subset(f, d.min(f), |t| {
        let y = if t.is_empty() {
            x.clone()
        } else {
            let at = DMatrix::from_fn(t.len(), d, |r, c| a[(t[r], c)]);
            let bt = DVector::from_fn(t.len(), |r, _| b[t[r]]);
            let m = &at * &p * at.transpose();
            let Some(mu) = m.clone().lu().solve(&(&at * x - &bt)) else { return };
            if (&m * &mu - (&at * x - &bt)).amax() > 1e-9 * m.amax().max(1.0) * mu.amax().max(1.0) {
                return;
            }
            x - &p * at.transpose() * mu
        };
        if (a * &y - b).max() <= feas_tol {
            let r = &y - x;
            best = best.min(r.dot(&(q * &r)));
        }
    });
    if best.is_finite() {
        Ok(best)
    } else {
        conic_projection(x, q, obstacle)
    }
}

fn conic_projection(x: &DVector<f64>, q: &DMatrix<f64>, obstacle: &Polytope) -> Result<f64> {
    let d = obstacle.dim();
    let l = linalg::cholesky(q, "Q")?.l();
    let mut prob = ConicProblem::new();
    let y = prob.vector("y", d);
    for i in 0..obstacle.faces() {
        let mut e = prob.constant(obstacle.b()[i]);
        for c in 0..d {
            e.add_term(prob.index(y, c), -obstacle.a()[(i, c)]);
        }
        prob.add_nonneg(e);
    }
    // (y - x)^T Q (y - x) = ||L^T (y - x)||^2
    for r in 0..d {
        let mut e = prob.constant(0.0);
        for c in 0..d {
            e.add_term(prob.index(y, c), l[(c, r)]);
            e.add_constant(-l[(c, r)] * x[c]);
        }
        prob.add_objective_square(1.0, e);
    }
    let sol = prob.solve(&SolverSettings::default());
    match sol.status {
        SolveStatus::Optimal => Ok(sol.objective),
        s => Err(Error::NumericalFailure(format!("projection QP ended {s}"))),
    }
}

/// Brute-force verdict: `V* >= chi2 / 2`.
pub fn discrete_oracle(x: &DVector<f64>, q: &DMatrix<f64>, obstacle: &Polytope, chi2: f64) -> Result<bool> {
    Ok(discrete_oracle_value(x, q, obstacle)? >= chi2)
}

/// `a^T x + sqrt(chi2 a^T Q^-1 a) <= b`: the ellipse lies in `{a^T y <= b}`.
pub fn halfspace_check(a: &DVector<f64>, b: f64, x: &DVector<f64>, q: &DMatrix<f64>, chi2: f64) -> Result<bool> {
    let qa = linalg::cholesky(q, "Q")?.solve(a);
    Ok(a.dot(x) + (chi2 * a.dot(&qa)).sqrt() <= b)
}

/// Smallest `C` satisfying both blocks of the half-space LMI pair, or `None`
/// when the half-space condition fails.
pub fn halfspace_lmi_witness(a: &DVector<f64>, b: f64, x: &DVector<f64>, q: &DMatrix<f64>, gamma: f64) -> Result<Option<f64>> {
    let aqa = a.dot(&linalg::cholesky(q, "Q")?.solve(a));
    let slack = b - a.dot(x);
    if !(slack > 0.0) {
        return Ok(None);
    }
    let c = 1.0 / (gamma * slack);
    let cmax = 1.0 / aqa.sqrt();
    if c <= cmax * (1.0 + 1e-12) {
        Ok(Some(c.min(cmax)))
    } else {
        Ok(None)
    }
}

/// The two half-space LMI matrices `[[b - a^T x, 1], [1, gamma C]]` and `[[1, C a^T], [a C, Q]]`.
pub fn halfspace_lmi_blocks(
    a: &DVector<f64>,
    b: f64,
    x: &DVector<f64>,
    q: &DMatrix<f64>,
    gamma: f64,
    c: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let first = DMatrix::from_row_slice(2, 2, &[b - a.dot(x), 1.0, 1.0, gamma * c]);
    let d = a.len();
    let mut second = DMatrix::zeros(d + 1, d + 1);
    second[(0, 0)] = 1.0;
    for i in 0..d {
        second[(0, i + 1)] = c * a[i];
        second[(i + 1, 0)] = c * a[i];
    }
    second.view_mut((1, 1), (d, d)).copy_from(q);
    (first, second)
}

/// `(g1, g2)` of a multiplier on a transition.
pub fn transition_duals(qry: &TransitionQuery<'_>, lam: &DVector<f64>) -> (f64, f64) {
    let a = qry.obstacle.a();
    let at_l = a.transpose() * lam;
    let u1 = a * qry.x_prev - qry.obstacle.b();
    let u2 = a * qry.x_next - qry.obstacle.b();
    let p2 = qry.p_prev + qry.w;
    let g1 = -at_l.dot(&(qry.p_prev * &at_l)) + 2.0 * lam.dot(&u1);
    let g2 = -at_l.dot(&(&p2 * &at_l)) + 2.0 * lam.dot(&u2);
    (g1, g2)
}

/// Common-multiplier certificate for a transition, solved as one conic program:
/// maximize `t` s.t. `g1(lambda) >= t`, `g2(lambda) >= t`, `lambda >= 0`.
pub fn continuous_certificate(qry: &TransitionQuery<'_>) -> Result<Option<DualCertificate>> {
    let a = qry.obstacle.a();
    let f = qry.obstacle.faces();
    let d = qry.obstacle.dim();
    linalg::check_square(qry.p_prev, d, "P_prev")?;
    linalg::check_square(qry.w, d, "W")?;
    let p2 = qry.p_prev + qry.w;
    let l1 = linalg::cholesky(qry.p_prev, "P_prev")?.l();
    let l2 = match nalgebra::Cholesky::new(linalg::symmetrize(&p2)) {
        Some(c) => c.l(),
        None => return Err(Error::SingularMatrix("P_prev + W".into())),
    };
    let u1 = a * qry.x_prev - qry.obstacle.b();
    let u2 = a * qry.x_next - qry.obstacle.b();

    // warm start from the best discrete dual along the segment, then scale
    // lambda = kappa * lambda_hat and t = tau * t_hat so both are O(1)
    let mut warm = DVector::zeros(f);
    let mut warm_val = f64::NEG_INFINITY;
    for s in [0.0, 0.5, 1.0] {
        let (_, l) = dual_at(qry, s)?;
        let (g1, g2) = transition_duals(qry, &l);
        if g1.min(g2) > warm_val {
            warm_val = g1.min(g2);
            warm = l;
        }
    }
    let kappa = if warm.amax() > 0.0 { warm.amax() } else { 1.0 / a.amax().max(1e-300) };
    let tau = warm_val.abs().max(1.0);

    let mut prob = ConicProblem::new();
    let lam = prob.vector("lambda", f);
    let t = prob.scalar("t");
    for i in 0..f {
        prob.add_nonneg(prob.entry(lam, i));
    }
    let qscale = kappa / tau.sqrt();
    let lscale = 2.0 * kappa / tau;
    for (l, u) in [(&l1, &u1), (&l2, &u2)] {
        // ||L^T A^T lambda||^2 <= 2 u^T lambda - t, divided by tau
        let m = l.transpose() * a.transpose() * qscale;
        let rows: Vec<_> = (0..d)
            .map(|r| {
                let mut e = prob.constant(0.0);
                for i in 0..f {
                    e.add_term(prob.index(lam, i), m[(r, i)]);
                }
                e
            })
            .collect();
        let mut rhs = prob.constant(0.0);
        for i in 0..f {
            rhs.add_term(prob.index(lam, i), lscale * u[i]);
        }
        rhs.add_term(prob.index(t, 0), -1.0);
        prob.add_quad_le(rows, rhs);
    }
    let mut obj = prob.constant(0.0);
    obj.add_term(prob.index(t, 0), -1.0);
    prob.minimize(obj);

    // strictly feasible start: positive multipliers, t below both duals
    let lam0 = warm.map(|v| v.max(0.0) / kappa + 1e-3);
    let (g1, g2) = transition_duals(qry, &(&lam0 * kappa));
    let mut x0 = prob.point();
    prob.set_vector(&mut x0, lam, &lam0);
    prob.set_scalar(&mut x0, t, g1.min(g2) / tau - 1.0);
    let sol = prob.solve_from(&x0, &SolverSettings::default());
    if sol.status != SolveStatus::Optimal {
        return Err(Error::NumericalFailure(format!("continuous certificate program ended {}", sol.status)));
    }
    let lam_v = sol.vector(lam).map(|v| v.max(0.0) * kappa);
    let (g1, g2) = transition_duals(qry, &lam_v);
    let val = g1.min(g2);
    Ok((val >= qry.chi2 - cert_tol(qry.chi2)).then(|| DualCertificate { lambda: lam_v, margin: val - qry.chi2 }))
}

/// Discrete dual optimum at interpolation parameter `s`.
fn dual_at(qry: &TransitionQuery<'_>, s: f64) -> Result<(f64, DVector<f64>)> {
    let x = qry.x_prev + (qry.x_next - qry.x_prev) * s;
    let p = qry.p_prev + qry.w * s;
    discrete_dual(&x, &p, qry.obstacle)
}

/// Same verdict as [`continuous_certificate`], computed faster.
///
/// The max-min value equals `min_s D(s)` where `D(s)` is the discrete dual
/// optimum of the interpolated belief (a convex function of `s`), so a golden
/// section search over `s` with the enumeration solver decides most cases;
/// ambiguous ones near the threshold fall back to the conic program.
pub fn continuous_certificate_fast(qry: &TransitionQuery<'_>) -> Result<Option<DualCertificate>> {
    let tol = cert_tol(qry.chi2);
    let (d0, _) = dual_at(qry, 0.0)?;
    if d0 < qry.chi2 - tol {
        return Ok(None);
    }
    let (d1, _) = dual_at(qry, 1.0)?;
    if d1 < qry.chi2 - tol {
        return Ok(None);
    }
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let mut f1 = dual_at(qry, m1)?.0;
    let mut f2 = dual_at(qry, m2)?.0;
    while hi - lo > 1e-9 {
        if f1.min(f2) < qry.chi2 - tol {
            return Ok(None);
        }
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = dual_at(qry, m1)?.0;
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = dual_at(qry, m2)?.0;
        }
    }
    let mut cands = vec![(d0, 0.0), (d1, 1.0), (f1, m1), (f2, m2)];
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (dmin, smin) = cands[0];
    if dmin < qry.chi2 - tol {
        return Ok(None);
    }
    let (_, lam) = dual_at(qry, smin)?;
    let (g1, g2) = transition_duals(qry, &lam);
    let val = g1.min(g2);
    if val >= qry.chi2 - tol {
        return Ok(Some(DualCertificate { lambda: lam, margin: val - qry.chi2 }));
    }
    continuous_certificate(qry)
}

/// Grid oracle: the interpolated ellipse misses the obstacle at every grid `s`.
pub fn continuous_oracle(qry: &TransitionQuery<'_>, s_grid: usize) -> Result<bool> {
    if s_grid < 2 {
        return Err(Error::Domain("s_grid needs at least two points".into()));
    }
    for i in 0..s_grid {
        let s = i as f64 / (s_grid - 1) as f64;
        let x = qry.x_prev + (qry.x_next - qry.x_prev) * s;
        let q = linalg::inverse_pd(&(qry.p_prev + qry.w * s), "interpolated covariance")?;
        if !discrete_oracle(&x, &q, qry.obstacle, qry.chi2)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest `2 V*(s)` over the grid, for boundary-band filtering.
pub fn continuous_oracle_value(qry: &TransitionQuery<'_>, s_grid: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..s_grid.max(2) {
        let s = i as f64 / (s_grid.max(2) - 1) as f64;
        let x = qry.x_prev + (qry.x_next - qry.x_prev) * s;
        let q = linalg::inverse_pd(&(qry.p_prev + qry.w * s), "interpolated covariance")?;
        best = best.min(discrete_oracle_value(&x, &q, qry.obstacle)?);
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct TransitionReport {
    pub safe: bool,
    /// One entry per unified obstacle.
    pub certificates: Vec<Option<DualCertificate>>,
}

/// Certifies one transition against every unified obstacle of `env`.
pub fn transition_safe(
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    w: &DMatrix<f64>,
    env: &Environment,
    chi2: f64,
) -> Result<TransitionReport> {
    let mut certificates = Vec::with_capacity(env.j());
    for (j, obstacle) in env.unified.iter().enumerate() {
        let qry = TransitionQuery { x_prev, x_next, p_prev, w, obstacle, chi2 };
        let c = continuous_certificate_fast(&qry).map_err(|e| match e {
            Error::NumericalFailure(m) => Error::NumericalFailure(format!("obstacle {j}: {m}")),
            other => other,
        })?;
        certificates.push(c);
    }
    Ok(TransitionReport { safe: certificates.iter().all(Option::is_some), certificates })
}

/// Closed-form `(lambda, value)` maximizing `min(g1, g2)` over `lambda >= 0`
/// for two scalar concave parabolas `g_i = -c_i l^2 + 2 u_i l`.
fn single_face_transition(u1: f64, c1: f64, u2: f64, c2: f64) -> (f64, f64) {
    let g = |l: f64| (-c1 * l * l + 2.0 * u1 * l).min(-c2 * l * l + 2.0 * u2 * l);
    let mut best = (0.0f64, 0.0f64);
    for l in [u1 / c1, u2 / c2, 2.0 * (u2 - u1) / (c2 - c1)] {
        if l.is_finite() && l > 0.0 && g(l) > best.1 {
            best = (l, g(l));
        }
    }
    best
}

/// Best certificate whose multiplier is supported on one face (lowest face
/// index on ties), if it reaches `chi2`. Exact for single-faced obstacles.
pub fn single_face_certificate(qry: &TransitionQuery<'_>) -> Option<DualCertificate> {
    let o = qry.obstacle;
    let p2 = qry.p_prev + qry.w;
    let mut best: Option<(usize, f64, f64)> = None;
    for i in 0..o.faces() {
        let (a, b) = o.face(i);
        let u1 = a.dot(qry.x_prev) - b;
        let u2 = a.dot(qry.x_next) - b;
        if u1 <= 0.0 || u2 <= 0.0 {
            continue;
        }
        let c1 = a.dot(&(qry.p_prev * &a));
        let c2 = a.dot(&(&p2 * &a));
        let (l, v) = single_face_transition(u1, c1, u2, c2);
        if v >= qry.chi2 && best.map_or(true, |b| v > b.2) {
            best = Some((i, l, v));
        }
    }
    best.map(|(i, l, v)| {
        let mut lambda = DVector::zeros(o.faces());
        lambda[i] = l;
        DualCertificate { lambda, margin: v - qry.chi2 }
    })
}

/// Cheap sufficient test: some single face certifies the transition.
pub fn screen_transition(qry: &TransitionQuery<'_>) -> bool {
    let o = qry.obstacle;
    let p2 = qry.p_prev + qry.w;
    (0..o.faces()).any(|i| {
        let (a, b) = o.face(i);
        let u1 = a.dot(qry.x_prev) - b;
        let u2 = a.dot(qry.x_next) - b;
        if u1 <= 0.0 || u2 <= 0.0 {
            return false;
        }
        let c1 = a.dot(&(qry.p_prev * &a));
        let c2 = a.dot(&(&p2 * &a));
        single_face_transition(u1, c1, u2, c2).1 >= qry.chi2
    })
}

/// Cheap sufficient test: some single face separates the ellipse `(x, P)`.
pub fn screen_state(x: &DVector<f64>, p: &DMatrix<f64>, o: &Polytope, chi2: f64) -> bool {
    (0..o.faces()).any(|i| {
        let (a, b) = o.face(i);
        let u = a.dot(x) - b;
        u > 0.0 && u * u >= chi2 * a.dot(&(p * &a))
    })
}

/// Like [`transition_safe`] but stops at the first uncertified obstacle.
pub fn transition_is_safe(
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    w: &DMatrix<f64>,
    env: &Environment,
    chi2: f64,
) -> Result<bool> {
    for obstacle in &env.unified {
        let qry = TransitionQuery { x_prev, x_next, p_prev, w, obstacle, chi2 };
        if screen_transition(&qry) {
            continue;
        }
        if continuous_certificate_fast(&qry)?.is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Final-state check: the posterior ellipse misses every target-complement half-space.
pub fn admissible_final(
    x: &DVector<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    env: &Environment,
    chi2: f64,
) -> Result<bool> {
    let info = q + s;
    let p = linalg::inverse_pd(&info, "Q_K + S_K")?;
    for h in &env.target_out {
        if discrete_certificate_cov(x, &p, h, chi2)?.is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Discrete check of a posterior belief against every unified obstacle.
pub fn state_safe(x: &DVector<f64>, p: &DMatrix<f64>, env: &Environment, chi2: f64) -> Result<bool> {
    for o in &env.unified {
        if screen_state(x, p, o, chi2) {
            continue;
        }
        if discrete_certificate_cov(x, p, o, chi2)?.is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_environment;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn halfspace_obstacle_closed_form() {
        // {x1 <= -2}
        let o = Polytope::halfspace(v(&[1.0, 0.0]), -2.0).unwrap();
        let c = discrete_certificate(&v(&[0.0, 0.0]), &eye(2), &o, 1.0).unwrap().unwrap();
        assert!((c.lambda[0] - 2.0).abs() < 1e-12);
        assert!((c.margin - 3.0).abs() < 1e-12);
    }

    #[test]
    fn point_inside_obstacle_has_no_certificate() {
        let o = Polytope::axis_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(discrete_certificate(&v(&[0.2, 0.1]), &eye(2), &o, 0.01).unwrap().is_none());
        assert!(!discrete_oracle(&v(&[0.2, 0.1]), &eye(2), &o, 0.01).unwrap());
        assert_eq!(discrete_oracle_value(&v(&[0.2, 0.1]), &eye(2), &o).unwrap(), 0.0);
    }

    #[test]
    fn unit_box_distance() {
        let o = Polytope::axis_box(&[1.0, -0.5], &[2.0, 0.5]).unwrap();
        let x = v(&[0.0, 0.0]);
        assert!(discrete_certificate(&x, &eye(2), &o, 0.25).unwrap().is_some());
        let val = discrete_oracle_value(&x, &eye(2), &o).unwrap();
        assert!((val - 1.0).abs() < 1e-12);
        assert!(discrete_certificate(&x, &eye(2), &o, 1.5).unwrap().is_none());
    }

    #[test]
    fn oracle_matches_halfspace_closed_form() {
        let o = Polytope::halfspace(v(&[1.0, 2.0]), -1.0).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let x = v(&[0.5, 0.2]);
        let a = v(&[1.0, 2.0]);
        let aqa = a.dot(&(q.clone().try_inverse().unwrap() * &a));
        let expect = (a.dot(&x) + 1.0).powi(2) / aqa;
        assert!((discrete_oracle_value(&x, &q, &o).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn conic_projection_agrees_with_enumeration() {
        // 10-gon, forcing the conic path
        let n = 10;
        let a = DMatrix::from_fn(n, 2, |i, c| {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            if c == 0 {
                th.cos()
            } else {
                th.sin()
            }
        });
        let o = Polytope::new(a.clone(), DVector::from_element(n, 0.5)).unwrap();
        let x = v(&[1.3, 0.4]);
        let q = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]);
        let big = discrete_oracle_value(&x, &q, &o).unwrap();
        let (dual, _) = discrete_dual(&x, &q.clone().try_inverse().unwrap(), &o).unwrap();
        assert!((big - dual).abs() < 1e-6 * dual, "{big} vs {dual}");
    }

    #[test]
    fn halfspace_check_examples() {
        let a = v(&[1.0, 0.0]);
        let x = v(&[0.0, 0.0]);
        assert!(halfspace_check(&a, 1.0, &x, &eye(2), 1.0).unwrap());
        assert!(!halfspace_check(&a, 1.0, &x, &eye(2), 4.0).unwrap());
        let q = DMatrix::from_diagonal(&v(&[4.0, 0.25]));
        assert!(halfspace_check(&a, 1.0, &x, &q, 1.0).unwrap());
    }

    #[test]
    fn halfspace_lmi_witness_blocks_are_psd() {
        let a = v(&[1.0, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 2.0]);
        let x = v(&[-0.5, 0.1]);
        let gamma = 1.0 / 4.605f64.sqrt();
        let c = halfspace_lmi_witness(&a, 1.0, &x, &q, gamma).unwrap().unwrap();
        let (b1, b2) = halfspace_lmi_blocks(&a, 1.0, &x, &q, gamma, c);
        assert!(linalg::min_eigenvalue(&b1) >= -1e-12);
        assert!(linalg::min_eigenvalue(&b2) >= -1e-12);
        assert!(halfspace_lmi_witness(&a, -1.0, &x, &q, gamma).unwrap().is_none());
    }

    #[test]
    fn halfspace_lmi_boundary_case_is_singular() {
        // a^T x + sqrt(chi2 a^T Q^-1 a) = 0 + 1 = b
        let a = v(&[1.0, 0.0]);
        let x = v(&[0.0, 0.0]);
        let c = halfspace_lmi_witness(&a, 1.0, &x, &eye(2), 1.0).unwrap().unwrap();
        let (b1, b2) = halfspace_lmi_blocks(&a, 1.0, &x, &eye(2), 1.0, c);
        assert!(linalg::min_eigenvalue(&b1).abs() < 1e-8);
        assert!(linalg::min_eigenvalue(&b2).abs() < 1e-8);
    }

    fn query<'a>(
        x0: &'a DVector<f64>,
        x1: &'a DVector<f64>,
        p: &'a DMatrix<f64>,
        w: &'a DMatrix<f64>,
        o: &'a Polytope,
        chi2: f64,
    ) -> TransitionQuery<'a> {
        TransitionQuery { x_prev: x0, x_next: x1, p_prev: p, w, obstacle: o, chi2 }
    }

    #[test]
    fn static_transition_reduces_to_discrete() {
        let o = Polytope::axis_box(&[1.0, -0.5], &[2.0, 0.5]).unwrap();
        let x = v(&[0.0, 0.1]);
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
        let w = DMatrix::zeros(2, 2);
        let q = query(&x, &x, &p, &w, &o, 2.0);
        let (dv, _) = discrete_dual(&x, &p, &o).unwrap();
        let c = continuous_certificate(&q).unwrap().unwrap();
        assert!((c.margin + 2.0 - dv).abs() < 1e-6 * dv);
        let f = continuous_certificate_fast(&q).unwrap().unwrap();
        assert!((f.margin + 2.0 - dv).abs() < 1e-9 * dv);
    }

    #[test]
    fn overlapping_start_is_rejected() {
        let o = Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let x0 = v(&[-0.05, 0.5]);
        let x1 = v(&[-1.0, 0.5]);
        let p = eye(2) * 0.01;
        let w = eye(2) * 1e-4;
        let q = query(&x0, &x1, &p, &w, &o, 4.6);
        assert!(continuous_certificate(&q).unwrap().is_none());
        assert!(continuous_certificate_fast(&q).unwrap().is_none());
        assert!(!continuous_oracle(&q, 101).unwrap());
    }

    /// Thin wall between two safe endpoints: each endpoint ellipse misses the
    /// strip, the swept tube does not.
    #[test]
    fn thin_wall_regression() {
        let chi2 = 4.605170185988091;
        let wall = Polytope::axis_box(&[-0.1, 0.2], &[0.1, 1.0]).unwrap();
        let x0 = v(&[-1.0, 0.0]);
        let x1 = v(&[1.0, 0.0]);
        let p = eye(2) * (0.09 / chi2);
        let w = DMatrix::zeros(2, 2);
        let q0 = linalg::inverse_pd(&p, "").unwrap();
        assert!(discrete_certificate(&x0, &q0, &wall, chi2).unwrap().is_some());
        assert!(discrete_certificate(&x1, &q0, &wall, chi2).unwrap().is_some());
        let q = query(&x0, &x1, &p, &w, &wall, chi2);
        assert!(continuous_certificate(&q).unwrap().is_none());
        assert!(continuous_certificate_fast(&q).unwrap().is_none());
        assert!(!continuous_oracle(&q, 1001).unwrap());
    }

    /// Far obstacle with a tight covariance: dual values in the hundreds.
    #[test]
    fn far_obstacle_program_is_well_scaled() {
        let chi2 = 4.605170185988091;
        let o = Polytope::axis_box(&[-0.19, -0.18], &[0.08, 0.63]).unwrap();
        let x0 = v(&[1.497, -1.067]);
        let x1 = v(&[0.565, -1.164]);
        let p = DMatrix::from_row_slice(2, 2, &[3.26e-4, 2.9e-5, 2.9e-5, 2.85e-4]);
        let w = DMatrix::from_row_slice(2, 2, &[1.43e-3, 1.35e-4, 1.35e-4, 1.68e-3]);
        let q = query(&x0, &x1, &p, &w, &o, chi2);
        let exact = continuous_certificate(&q).unwrap().unwrap();
        let fast = continuous_certificate_fast(&q).unwrap().unwrap();
        assert!(exact.margin > 100.0);
        assert!((exact.margin - fast.margin).abs() <= 1e-6 * (exact.margin + chi2));
        let grid = continuous_oracle_value(&q, 1001).unwrap();
        assert!(exact.margin + chi2 <= grid * (1.0 + 1e-9));
    }

    #[test]
    fn transition_checks_against_environment() {
        let env = build_environment(
            Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            vec![Polytope::axis_box(&[0.4, 0.4], &[0.6, 0.6]).unwrap()],
            Polytope::axis_box(&[0.8, 0.8], &[0.95, 0.95]).unwrap(),
        )
        .unwrap();
        let p = eye(2) * 1e-4;
        let w = eye(2) * 2e-4;
        let chi2 = 4.605170185988091;
        let r = transition_safe(&v(&[0.1, 0.1]), &v(&[0.2, 0.15]), &p, &w, &env, chi2).unwrap();
        assert!(r.safe);
        assert_eq!(r.certificates.len(), 5);
        let r = transition_safe(&v(&[0.9, 0.5]), &v(&[1.05, 0.5]), &p, &w, &env, chi2).unwrap();
        assert!(!r.safe);
        assert_eq!(r.certificates.iter().filter(|c| c.is_none()).count(), 1);
        assert!(!transition_is_safe(&v(&[0.9, 0.5]), &v(&[1.05, 0.5]), &p, &w, &env, chi2).unwrap());
    }

    #[test]
    fn final_admissibility() {
        let env = build_environment(
            Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            vec![],
            Polytope::axis_box(&[0.8, 0.8], &[0.95, 0.95]).unwrap(),
        )
        .unwrap();
        let chi2 = 4.605170185988091;
        let q = eye(2) * 1e4;
        let z = DMatrix::zeros(2, 2);
        assert!(admissible_final(&v(&[0.875, 0.875]), &q, &z, &env, chi2).unwrap());
        assert!(!admissible_final(&v(&[0.5, 0.875]), &q, &z, &env, chi2).unwrap());
        // radius sqrt(chi2 / 1e4) ~ 0.0215 crosses the face x1 = 0.8
        assert!(!admissible_final(&v(&[0.81, 0.875]), &q, &z, &env, chi2).unwrap());
    }

    #[test]
    fn final_admissibility_matches_boundary_sampling() {
        let env = build_environment(
            Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            vec![],
            Polytope::axis_box(&[0.8, 0.8], &[0.95, 0.95]).unwrap(),
        )
        .unwrap();
        let chi2 = 4.605170185988091;
        let q = DMatrix::from_row_slice(2, 2, &[2e4, 3e3, 3e3, 1e4]);
        let x = v(&[0.87, 0.88]);
        let e = crate::geometry::Ellipse::new(x.clone(), q.clone().try_inverse().unwrap(), chi2).unwrap();
        let inside = e.boundary_polygon(720).iter().all(|&(a, b)| env.target.contains(&v(&[a, b]), 0.0));
        assert!(inside);
        assert!(admissible_final(&x, &q, &DMatrix::zeros(2, 2), &env, chi2).unwrap());
    }

    #[test]
    fn single_face_screen_matches_exact_for_halfspaces() {
        let o = Polytope::halfspace(v(&[0.6, 0.8]), -0.5).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[0.02, 0.004, 0.004, 0.01]);
        let w = eye(2) * 0.01;
        for (x0, x1) in [([0.3, 0.1], [0.1, 0.0]), ([0.0, 0.0], [0.9, -0.2]), ([-0.2, -0.1], [0.5, 0.5])] {
            let (a, b) = (v(&x0), v(&x1));
            let q = query(&a, &b, &p, &w, &o, 1.0);
            let exact = continuous_certificate(&q).unwrap().is_some();
            assert_eq!(screen_transition(&q), exact);
        }
    }

    fn random_spd(seed: &[f64]) -> DMatrix<f64> {
        let l = DMatrix::from_row_slice(2, 2, &seed[..4]);
        &l * l.transpose() + eye(2) * 0.05
    }

    proptest! {
        #[test]
        fn certificate_verdict_matches_oracle(
            lo in proptest::collection::vec(-1.0f64..1.0, 2),
            size in proptest::collection::vec(0.05f64..1.0, 2),
            x in proptest::collection::vec(-2.0f64..2.0, 2),
            qs in proptest::collection::vec(-1.0f64..1.0, 4),
            chi2 in 0.01f64..5.0,
        ) {
            let o = Polytope::axis_box(&lo, &[lo[0] + size[0], lo[1] + size[1]]).unwrap();
            let q = random_spd(&qs);
            let xv = v(&x);
            let val = discrete_oracle_value(&xv, &q, &o).unwrap();
            prop_assume!((val - chi2).abs() > 1e-6);
            let cert = discrete_certificate(&xv, &q, &o, chi2).unwrap();
            prop_assert_eq!(cert.is_some(), val >= chi2);
            if let Some(c) = cert {
                prop_assert!(c.lambda.iter().all(|l| *l >= 0.0));
            }
        }

        #[test]
        fn scale_covariance(
            x in proptest::collection::vec(-2.0f64..2.0, 2),
            qs in proptest::collection::vec(-1.0f64..1.0, 4),
            c in 0.01f64..100.0,
        ) {
            let o = Polytope::axis_box(&[0.2, -0.3], &[0.9, 0.4]).unwrap();
            let o2 = Polytope::new(o.a() * c, o.b() * c).unwrap();
            let q = random_spd(&qs);
            let xv = v(&x);
            let (v1, l1) = discrete_dual(&xv, &q.clone().try_inverse().unwrap(), &o).unwrap();
            let (v2, l2) = discrete_dual(&xv, &q.clone().try_inverse().unwrap(), &o2).unwrap();
            prop_assert!((v1 - v2).abs() <= 1e-8 * v1.abs().max(1.0));
            prop_assert!((&l1 - l2 * c).amax() <= 1e-6 * l1.amax().max(1.0));
        }

        #[test]
        fn monotone_in_chi2(
            x in proptest::collection::vec(-2.0f64..2.0, 2),
            c1 in 0.01f64..5.0,
            c2 in 0.01f64..5.0,
        ) {
            let o = Polytope::axis_box(&[0.2, -0.3], &[0.9, 0.4]).unwrap();
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let xv = v(&x);
            if discrete_certificate(&xv, &eye(2), &o, hi).unwrap().is_some() {
                prop_assert!(discrete_certificate(&xv, &eye(2), &o, lo).unwrap().is_some());
            }
        }

        #[test]
        fn fast_and_conic_continuous_agree(
            x0 in proptest::collection::vec(-1.5f64..1.5, 2),
            x1 in proptest::collection::vec(-1.5f64..1.5, 2),
            ps in proptest::collection::vec(-0.3f64..0.3, 4),
            ws in 0.0f64..0.05,
        ) {
            let o = Polytope::axis_box(&[-0.3, -0.2], &[0.3, 0.4]).unwrap();
            let l = DMatrix::from_row_slice(2, 2, &ps);
            let p = &l * l.transpose() + eye(2) * 0.01;
            let w = eye(2) * ws;
            let (a, b) = (v(&x0), v(&x1));
            let q = query(&a, &b, &p, &w, &o, 1.0);
            let exact = continuous_certificate(&q).unwrap();
            let fast = continuous_certificate_fast(&q).unwrap();
            let band = continuous_oracle_value(&q, 201).unwrap();
            prop_assume!((band - 1.0).abs() > 1e-3);
            prop_assert_eq!(exact.is_some(), fast.is_some());
        }
    }
}
