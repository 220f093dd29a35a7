//! Polyhedral sets in H-representation, confidence ellipses and the reduction
//! of domain walls, obstacles and the target complement into one obstacle list.
//!
//! Every set here is `{x : A x <= b}`. Rows of `A` are used as given: the
//! collision certificates are covariant under `(A, b) -> (cA, cb)`, so nothing
//! is normalized. Rows whose norm falls outside `[1e-6, 1e6]` only trigger a
//! warning.

use log::warn;
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::conic::{ConicProblem, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::linalg;

/// Membership slack used for point-in-polytope predicates.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Convex polyhedron `{x : A x <= b}` with `f >= 1` faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::ShapeMismatch("polytope needs at least one face and one dimension".into()));
        }
        if a.nrows() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("polytope data must be finite".into()));
        }
        for (i, row) in a.row_iter().enumerate() {
            let n = row.norm();
            if n == 0.0 {
                return Err(Error::Invalid(format!("row {i} of A is zero")));
            }
            if !(1e-6..=1e6).contains(&n) {
                warn!("polytope row {i} has norm {n:e}; certificates stay valid but conditioning may suffer");
            }
        }
        Ok(Self { a, b })
    }

    /// Single face `{x : a^T x <= b}`.
    pub fn halfspace(a: DVector<f64>, b: f64) -> Result<Self> {
        let d = a.len();
        Self::new(DMatrix::from_row_slice(1, d, a.as_slice()), DVector::from_element(1, b))
    }

    /// Axis-aligned box `lo <= x <= hi`.
    pub fn axis_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::ShapeMismatch("box bounds differ in length".into()));
        }
        let d = lo.len();
        let mut a = DMatrix::zeros(2 * d, d);
        let mut b = DVector::zeros(2 * d);
        for i in 0..d {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Self::new(a, b)
    }

    /// Convex polygon from its vertices in either orbit direction; one face
    /// per edge, with unit outward normals.
    pub fn convex_polygon(vertices: &[[f64; 2]]) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::Invalid("a polygon needs at least three vertices".into()));
        }
        let signed: f64 = (0..n)
            .map(|i| {
                let (p, q) = (vertices[i], vertices[(i + 1) % n]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum();
        if !(signed.abs() > 1e-14) {
            return Err(Error::Invalid("polygon vertices are collinear".into()));
        }
        let orient = signed.signum();
        let mut a = DMatrix::zeros(n, 2);
        let mut b = DVector::zeros(n);
        for i in 0..n {
            let (p, q) = (vertices[i], vertices[(i + 1) % n]);
            let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
            let len = ex.hypot(ey);
            if !(len > 0.0) {
                return Err(Error::Invalid("polygon has a repeated vertex".into()));
            }
            // right-hand normal of a counter-clockwise edge points outward
            let (nx, ny) = (orient * ey / len, -orient * ex / len);
            a[(i, 0)] = nx;
            a[(i, 1)] = ny;
            b[i] = nx * p[0] + ny * p[1];
        }
        Self::new(a, b)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn faces(&self) -> usize {
        self.a.nrows()
    }

    pub fn face(&self, i: usize) -> (DVector<f64>, f64) {
        (self.a.row(i).transpose(), self.b[i])
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.a * x - &self.b).iter().all(|&r| r <= tol)
    }

    /// Largest signed constraint value `max_i (a_i^T x - b_i)`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).max()
    }

    /// Feasibility test: maximizes the inscribed-ball radius `r` (capped at 1)
    /// subject to `a_i^T x + r ||a_i|| <= b_i` inside a large box; nonempty iff
    /// `r >= -tol`.
    pub fn is_nonempty(&self) -> Result<bool> {
        let d = self.dim();
        let mut prob = ConicProblem::new();
        let x = prob.vector("x", d);
        let r = prob.scalar("r");
        for i in 0..self.faces() {
            let norm = self.a.row(i).norm();
            let mut e = prob.constant(self.b[i]);
            for c in 0..d {
                e.add_term(prob.index(x, c), -self.a[(i, c)]);
            }
            e.add_term(prob.index(r, 0), -norm);
            prob.add_nonneg(e);
        }
        let mut cap = prob.constant(1.0);
        cap.add_term(prob.index(r, 0), -1.0);
        prob.add_nonneg(cap);
        // A barrier needs a bounded feasible set; any nonempty polytope meets this box.
        let reach = (0..self.faces())
            .map(|i| self.b[i].abs() / self.a.row(i).norm())
            .fold(0.0f64, f64::max);
        let bound = 1e4 * (1.0 + reach);
        for c in 0..d {
            for sgn in [1.0, -1.0] {
                let mut e = prob.constant(bound);
                e.add_term(prob.index(x, c), -sgn);
                prob.add_nonneg(e);
            }
        }
        let mut obj = prob.constant(0.0);
        obj.add_term(prob.index(r, 0), -1.0);
        prob.minimize(obj);

        // x = 0 with a radius far below every slack is strictly feasible.
        let slack0 = self.b.min().min(0.0);
        let mut x0 = vec![0.0; d + 1];
        x0[d] = slack0 / self.a.row_iter().map(|r| r.norm()).fold(f64::INFINITY, f64::min) - 1.0;
        let sol = prob.solve_from(&x0, &SolverSettings::default());
        match sol.status {
            SolveStatus::Optimal => Ok(sol.value(r) >= -1e-9),
            SolveStatus::Infeasible => Ok(false),
            other => Err(Error::NumericalFailure(format!("polytope feasibility test ended with {other:?}"))),
        }
    }

    /// Vertices by enumerating `d`-subsets of faces. Exact for small `f`; intended
    /// for planar sets and small boxes.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        let f = self.faces();
        let mut out: Vec<DVector<f64>> = Vec::new();
        if f < d {
            return out;
        }
        let mut idx: Vec<usize> = (0..d).collect();
        loop {
            let m = DMatrix::from_fn(d, d, |r, c| self.a[(idx[r], c)]);
            let rhs = DVector::from_fn(d, |r, _| self.b[idx[r]]);
            if let Some(v) = m.clone().lu().solve(&rhs) {
                let scale = self.b.amax().max(1.0);
                if (&m * &v - &rhs).amax() <= 1e-9 * scale
                    && self.contains(&v, 1e-9 * scale)
                    && !out.iter().any(|w| (w - &v).amax() <= 1e-9 * scale)
                {
                    out.push(v);
                }
            }
            // next combination
            let mut i = d;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if idx[i] != i + f - d {
                    break;
                }
                if i == 0 && idx[0] == f - d {
                    return out;
                }
            }
            idx[i] += 1;
            for k in (i + 1)..d {
                idx[k] = idx[k - 1] + 1;
            }
        }
    }

    /// Maximizes `c^T x` over the polytope; `None` when unbounded or empty.
    pub fn support(&self, c: &DVector<f64>) -> Option<f64> {
        let d = self.dim();
        let mut prob = ConicProblem::new();
        let x = prob.vector("x", d);
        for i in 0..self.faces() {
            let mut e = prob.constant(self.b[i]);
            for k in 0..d {
                e.add_term(prob.index(x, k), -self.a[(i, k)]);
            }
            prob.add_nonneg(e);
        }
        let mut obj = prob.constant(0.0);
        for k in 0..d {
            obj.add_term(prob.index(x, k), -c[k]);
        }
        prob.minimize(obj);
        let sol = prob.solve(&SolverSettings::default());
        match sol.status {
            SolveStatus::Optimal => Some(-sol.objective),
            _ => None,
        }
    }

    /// Axis-aligned bounding box from the vertex set.
    pub fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let v = self.vertices();
        if v.len() < self.dim() + 1 {
            return None;
        }
        let d = self.dim();
        let mut lo = DVector::from_element(d, f64::INFINITY);
        let mut hi = DVector::from_element(d, f64::NEG_INFINITY);
        for p in &v {
            for i in 0..d {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Some((lo, hi))
    }
}

/// Splits `R^d \ interior(p)` into `f` single-faced polytopes `{x : -a_l^T x <= -b_l}`.
pub fn complement_halfspaces(p: &Polytope) -> Vec<Polytope> {
    (0..p.faces())
        .map(|i| {
            let (a, b) = p.face(i);
            Polytope::halfspace(-a, -b).expect("negated face of a valid polytope is valid")
        })
        .collect()
}

/// Domain, obstacles and target, plus the unified obstacle list derived from them.
#[derive(Debug, Clone)]
pub struct Environment {
    pub domain: Polytope,
    pub obstacles: Vec<Polytope>,
    pub target: Polytope,
    /// `obstacles ++ complement_halfspaces(domain)`; `J = M + L` entries.
    pub unified: Vec<Polytope>,
    /// `complement_halfspaces(target)`.
    pub target_out: Vec<Polytope>,
}

impl Environment {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Number of unified obstacles `J`.
    pub fn j(&self) -> usize {
        self.unified.len()
    }

    /// True when `x` lies in some unified obstacle (boundary counts as inside).
    pub fn in_collision(&self, x: &DVector<f64>) -> bool {
        self.unified.iter().any(|o| o.contains(x, 0.0))
    }
}

pub fn build_environment(domain: Polytope, obstacles: Vec<Polytope>, target: Polytope) -> Result<Environment> {
    let d = domain.dim();
    if target.dim() != d || obstacles.iter().any(|o| o.dim() != d) {
        return Err(Error::ShapeMismatch("domain, obstacles and target must share one dimension".into()));
    }
    for (m, o) in obstacles.iter().enumerate() {
        if !o.is_nonempty()? {
            return Err(Error::EmptyPolytope(format!("obstacle {m}")));
        }
    }
    if !domain.is_nonempty()? {
        return Err(Error::EmptyPolytope("domain".into()));
    }
    if !target.is_nonempty()? {
        return Err(Error::EmptyPolytope("target".into()));
    }
    check_target_inside(&domain, &target)?;

    let mut unified = obstacles.clone();
    unified.extend(complement_halfspaces(&domain));
    let target_out = complement_halfspaces(&target);
    Ok(Environment { domain, obstacles, target, unified, target_out })
}

fn check_target_inside(domain: &Polytope, target: &Polytope) -> Result<()> {
    let scale = domain.b().amax().max(1.0);
    if target.dim() == 2 {
        let verts = target.vertices();
        if verts.len() >= 3 {
            if let Some(v) = verts.iter().find(|v| !domain.contains(v, 1e-9 * scale)) {
                return Err(Error::TargetOutsideDomain(format!(
                    "target vertex ({:.6}, {:.6}) violates the domain",
                    v[0], v[1]
                )));
            }
            return Ok(());
        }
    }
    for l in 0..domain.faces() {
        let (a, b) = domain.face(l);
        match target.support(&a) {
            Some(v) if v <= b + 1e-8 * scale => {}
            Some(v) => {
                return Err(Error::TargetOutsideDomain(format!(
                    "target reaches {v:.6} on domain face {l} (bound {b:.6})"
                )))
            }
            None => return Err(Error::TargetOutsideDomain(format!("target is unbounded along domain face {l}"))),
        }
    }
    Ok(())
}

/// Confidence ellipse `{x : (x - c)^T P^-1 (x - c) <= level}`.
#[derive(Debug, Clone)]
pub struct Ellipse {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
}

impl Ellipse {
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>, level: f64) -> Result<Self> {
        linalg::check_square(&shape, center.len(), "ellipse shape")?;
        if !linalg::is_symmetric(&shape, linalg::SYMMETRY_TOL) {
            return Err(Error::Invalid("ellipse shape is not symmetric".into()));
        }
        if linalg::min_eigenvalue(&shape) <= 0.0 {
            return Err(Error::SingularMatrix("ellipse shape is not positive definite".into()));
        }
        if !(level >= 0.0) {
            return Err(Error::Domain(format!("ellipse level {level} must be nonnegative")));
        }
        Ok(Self { center, shape, level })
    }

    pub fn mahalanobis2(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.center;
        let chol = linalg::cholesky(&self.shape, "ellipse shape").expect("validated on construction");
        r.dot(&chol.solve(&r))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.mahalanobis2(x) <= self.level
    }

    /// Closed polygon approximating the boundary with `segments` vertices (planar only).
    pub fn boundary_polygon(&self, segments: usize) -> Vec<(f64, f64)> {
        let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(&self.shape));
        let (u, ev) = (eig.eigenvectors, eig.eigenvalues);
        let r0 = (self.level * ev[0].max(0.0)).sqrt();
        let r1 = (self.level * ev[1].max(0.0)).sqrt();
        (0..segments)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
                let (c, s) = (th.cos() * r0, th.sin() * r1);
                (
                    self.center[0] + u[(0, 0)] * c + u[(0, 1)] * s,
                    self.center[1] + u[(1, 0)] * c + u[(1, 1)] * s,
                )
            })
            .collect()
    }
}

/// Quantile of the chi-squared distribution with `d` degrees of freedom.
///
/// `d = 2` uses `-2 ln(1 - pr)`; other even `d` bisect the closed-form series CDF;
/// odd `d` bisect the regularized incomplete gamma function.
pub fn chi2_quantile(pr: f64, d: usize) -> Result<f64> {
    if !(pr > 0.0 && pr < 1.0) {
        return Err(Error::Domain(format!("probability {pr} outside (0, 1)")));
    }
    if d == 0 {
        return Err(Error::Domain("chi-squared needs d >= 1".into()));
    }
    if d == 2 {
        return Ok(-2.0 * (-pr).ln_1p());
    }
    // Compare in whichever tail keeps precision.
    let upper = pr > 0.5;
    let target = if upper { 1.0 - pr } else { pr };
    let tail = |x: f64| -> f64 {
        if d % 2 == 0 {
            let m = d / 2;
            let h = 0.5 * x;
            let mut term = 1.0;
            let mut sum = 1.0;
            for i in 1..m {
                term *= h / i as f64;
                sum += term;
            }
            let sf = (-h).exp() * sum;
            if upper {
                sf
            } else {
                1.0 - sf
            }
        } else if upper {
            gamma_ur(0.5 * d as f64, 0.5 * x)
        } else {
            gamma_lr(0.5 * d as f64, 0.5 * x)
        }
    };
    // `below(x)` is true while x is left of the quantile.
    let below = |x: f64| if upper { tail(x) > target } else { tail(x) < target };
    let mut lo = 0.0;
    let mut hi = d as f64 + 10.0;
    while below(hi) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
