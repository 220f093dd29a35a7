//! Primal log-barrier path following with a shifted phase I.

use nalgebra::{DMatrix, DVector};

use super::ldl::SparseLdl;
use super::{Affine, ConicProblem, Constraint, SolveStatus, SolverSettings, SymExpr};

const ARMIJO: f64 = 0.01;
const NEWTON_TOL: f64 = 1e-10;
const MAX_CENTERING: usize = 300;
const REG: f64 = 1e-13;
const BIG: f64 = 1e13;

pub(super) struct Outcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub newton_steps: usize,
}

#[derive(Clone)]
enum Kind {
    /// `-log(a . x + c)`
    Lin { a: Vec<f64>, c: f64 },
    /// `-log(y0^2 - |y_r|^2)`, `y = J x + c`
    Soc { j: DMatrix<f64>, c: DVector<f64> },
    /// `-log det(F0 + sum x_a F_a)`
    Psd { f0: DMatrix<f64>, fa: Vec<DMatrix<f64>> },
    /// `(a . x + c)^2`
    Square { a: Vec<f64>, c: f64 },
}

#[derive(Clone)]
struct Block {
    vars: Vec<usize>,
    kind: Kind,
    weight: f64,
    /// Objective blocks scale with `t`; barrier blocks do not.
    objective: bool,
    slots: Vec<usize>,
}

impl Block {
    fn local(&self, x: &[f64]) -> Vec<f64> {
        self.vars.iter().map(|&i| x[i]).collect()
    }

    /// Function value, `+inf` outside the domain.
    fn value(&self, xl: &[f64]) -> f64 {
        match &self.kind {
            Kind::Lin { a, c } => {
                let s = dot(a, xl) + c;
                if s > 0.0 {
                    -s.ln()
                } else {
                    f64::INFINITY
                }
            }
            Kind::Square { a, c } => {
                let s = dot(a, xl) + c;
                s * s
            }
            Kind::Soc { j, c } => {
                let y = soc_y(j, c, xl);
                let u = soc_u(&y);
                if y[0] > 0.0 && u > 0.0 {
                    -u.ln()
                } else {
                    f64::INFINITY
                }
            }
            Kind::Psd { f0, fa } => {
                let f = psd_f(f0, fa, xl);
                match nalgebra::Cholesky::new(f) {
                    Some(ch) => {
                        let l = ch.l_dirty();
                        let mut acc = 0.0;
                        for i in 0..l.nrows() {
                            acc += l[(i, i)].ln();
                        }
                        -2.0 * acc
                    }
                    None => f64::INFINITY,
                }
            }
        }
    }

    /// Value, gradient and Hessian in local coordinates.
    fn derivs(&self, xl: &[f64]) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let p = xl.len();
        match &self.kind {
            Kind::Lin { a, c } => {
                let s = dot(a, xl) + c;
                if !(s > 0.0) {
                    return None;
                }
                let av = DVector::from_column_slice(a);
                let g = &av * (-1.0 / s);
                let h = &av * av.transpose() / (s * s);
                Some((-s.ln(), g, h))
            }
            Kind::Square { a, c } => {
                let s = dot(a, xl) + c;
                let av = DVector::from_column_slice(a);
                Some((s * s, &av * (2.0 * s), &av * av.transpose() * 2.0))
            }
            Kind::Soc { j, c } => {
                let y = soc_y(j, c, xl);
                let u = soc_u(&y);
                if !(y[0] > 0.0 && u > 0.0) {
                    return None;
                }
                let k = y.len();
                let mut yb = y.clone();
                for i in 1..k {
                    yb[i] = -yb[i];
                }
                let gy = &yb * (-2.0 / u);
                let mut hy = &yb * yb.transpose() * (4.0 / (u * u));
                hy[(0, 0)] -= 2.0 / u;
                for i in 1..k {
                    hy[(i, i)] += 2.0 / u;
                }
                let g = j.transpose() * gy;
                let h = j.transpose() * hy * j;
                Some((-u.ln(), g, h))
            }
            Kind::Psd { f0, fa } => {
                let f = psd_f(f0, fa, xl);
                let ch = nalgebra::Cholesky::new(f)?;
                let l = ch.l_dirty();
                let mut ld = 0.0;
                for i in 0..l.nrows() {
                    ld += l[(i, i)].ln();
                }
                let finv = ch.inverse();
                let ga: Vec<DMatrix<f64>> = fa.iter().map(|m| &finv * m).collect();
                let mut g = DVector::zeros(p);
                let mut h = DMatrix::zeros(p, p);
                let m = finv.nrows();
                for a in 0..p {
                    g[a] = -ga[a].trace();
                    for b in 0..=a {
                        let mut acc = 0.0;
                        for i in 0..m {
                            for jj in 0..m {
                                acc += ga[a][(i, jj)] * ga[b][(jj, i)];
                            }
                        }
                        h[(a, b)] = acc;
                        h[(b, a)] = acc;
                    }
                }
                Some((-2.0 * ld, g, h))
            }
        }
    }

    /// Largest `alpha` keeping the block strictly inside its domain.
    fn max_step(&self, xl: &[f64], dl: &[f64]) -> f64 {
        match &self.kind {
            Kind::Square { .. } => f64::INFINITY,
            Kind::Lin { a, c } => {
                let s = dot(a, xl) + c;
                let ds = dot(a, dl);
                if ds < 0.0 {
                    -s / ds
                } else {
                    f64::INFINITY
                }
            }
            Kind::Soc { j, c } => {
                let y = soc_y(j, c, xl);
                let dy = j * DVector::from_column_slice(dl);
                let qa = dy[0] * dy[0] - dy.rows(1, dy.len() - 1).norm_squared();
                let qb = 2.0 * (y[0] * dy[0] - y.rows(1, y.len() - 1).dot(&dy.rows(1, dy.len() - 1)));
                let qc = soc_u(&y);
                let mut best = f64::INFINITY;
                if dy[0] < 0.0 {
                    best = best.min(-y[0] / dy[0]);
                }
                smallest_positive_root(qa, qb, qc).map_or(best, |r| best.min(r))
            }
            Kind::Psd { f0, fa } => {
                let f = psd_f(f0, fa, xl);
                let Some(ch) = nalgebra::Cholesky::new(f) else { return 0.0 };
                let mut df = DMatrix::zeros(f0.nrows(), f0.ncols());
                for (m, &d) in fa.iter().zip(dl) {
                    if d != 0.0 {
                        df += m * d;
                    }
                }
                let l = ch.l();
                let Some(tmp) = l.solve_lower_triangular(&df) else { return 0.0 };
                let Some(m) = l.solve_lower_triangular(&tmp.transpose()) else { return 0.0 };
                let lmin = nalgebra::SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.min();
                if lmin < 0.0 {
                    -1.0 / lmin
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Barrier degree contributed by a constraint block.
    fn degree(&self) -> f64 {
        if self.objective {
            return 0.0;
        }
        match &self.kind {
            Kind::Lin { .. } => 1.0,
            Kind::Soc { .. } => 2.0,
            Kind::Psd { f0, .. } => f0.nrows() as f64,
            Kind::Square { .. } => 0.0,
        }
    }

    /// Shift needed to make the block strictly feasible (negative when it already is).
    fn infeasibility(&self, xl: &[f64]) -> f64 {
        match &self.kind {
            Kind::Lin { a, c } => -(dot(a, xl) + c),
            Kind::Soc { j, c } => {
                let y = soc_y(j, c, xl);
                y.rows(1, y.len() - 1).norm() - y[0]
            }
            Kind::Psd { f0, fa } => {
                let f = psd_f(f0, fa, xl);
                -nalgebra::SymmetricEigen::new(f).eigenvalues.min()
            }
            Kind::Square { .. } => f64::NEG_INFINITY,
        }
    }

    /// Copy of the block with an extra unknown `s` that shifts it toward its interior.
    fn shifted(&self, s_index: usize) -> Block {
        let mut vars = self.vars.clone();
        vars.push(s_index);
        let kind = match &self.kind {
            Kind::Lin { a, c } => {
                let mut a = a.clone();
                a.push(1.0);
                Kind::Lin { a, c: *c }
            }
            Kind::Soc { j, c } => {
                let mut jj = j.clone().insert_column(j.ncols(), 0.0);
                jj[(0, j.ncols())] = 1.0;
                Kind::Soc { j: jj, c: c.clone() }
            }
            Kind::Psd { f0, fa } => {
                let mut fa = fa.clone();
                fa.push(DMatrix::identity(f0.nrows(), f0.ncols()));
                Kind::Psd { f0: f0.clone(), fa }
            }
            Kind::Square { .. } => unreachable!("objective squares are not shifted"),
        };
        Block { vars, kind, weight: 1.0, objective: false, slots: Vec::new() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soc_y(j: &DMatrix<f64>, c: &DVector<f64>, xl: &[f64]) -> DVector<f64> {
    j * DVector::from_column_slice(xl) + c
}

fn soc_u(y: &DVector<f64>) -> f64 {
    let r = y.rows(1, y.len() - 1).norm();
    (y[0] - r) * (y[0] + r)
}

fn psd_f(f0: &DMatrix<f64>, fa: &[DMatrix<f64>], xl: &[f64]) -> DMatrix<f64> {
    let mut f = f0.clone();
    for (m, &x) in fa.iter().zip(xl) {
        if x != 0.0 {
            f += m * x;
        }
    }
    f
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        return if b < 0.0 { Some(-c / b) } else { None };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = Vec::with_capacity(2);
    if q != 0.0 {
        roots.push(c / q);
        roots.push(q / a);
    } else {
        roots.push(0.0);
    }
    roots.into_iter().filter(|r| *r > 0.0).fold(None, |m: Option<f64>, r| Some(m.map_or(r, |v| v.min(r))))
}

/// Sorted union of the indices appearing in `exprs`, and a local row per expression.
fn localize(exprs: &[&Affine]) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let mut vars: Vec<usize> = exprs.iter().flat_map(|e| e.terms.iter().map(|t| t.0)).collect();
    vars.sort_unstable();
    vars.dedup();
    let rows = exprs
        .iter()
        .map(|e| {
            let mut r = vec![0.0; vars.len()];
            for &(i, c) in &e.terms {
                r[vars.binary_search(&i).unwrap()] += c;
            }
            r
        })
        .collect();
    (vars, rows, exprs.iter().map(|e| e.constant).collect())
}

fn psd_block(e: &SymExpr, weight: f64, objective: bool) -> Block {
    let n = e.dim();
    let entries: Vec<&Affine> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| e.get(i, j)).collect();
    let (vars, rows, consts) = localize(&entries);
    let mut f0 = DMatrix::zeros(n, n);
    let mut fa = vec![DMatrix::zeros(n, n); vars.len()];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            f0[(i, j)] = consts[k];
            f0[(j, i)] = consts[k];
            for (a, &c) in rows[k].iter().enumerate() {
                if c != 0.0 {
                    fa[a][(i, j)] = c;
                    fa[a][(j, i)] = c;
                }
            }
            k += 1;
        }
    }
    Block { vars, kind: Kind::Psd { f0, fa }, weight, objective, slots: Vec::new() }
}

struct Compiled {
    n: usize,
    c: Vec<f64>,
    blocks: Vec<Block>,
    /// Equality rows `e . x + c = 0`.
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    degree: f64,
    ldl: SparseLdl,
}

impl Compiled {
    fn new(n: usize, c: Vec<f64>, mut blocks: Vec<Block>, eq: Vec<(Vec<(usize, f64)>, f64)>) -> Self {
        let m = eq.len();
        let mut cliques: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for b in &blocks {
            cliques.push(b.vars.clone());
        }
        for (r, (row, _)) in eq.iter().enumerate() {
            for &(i, _) in row {
                cliques.push(vec![i, n + r]);
            }
            cliques.push(vec![n + r]);
        }
        let mut sign = vec![1.0; n];
        sign.extend(std::iter::repeat(-1.0).take(m));
        let ldl = SparseLdl::new(n + m, &cliques, sign);
        for b in &mut blocks {
            let p = b.vars.len();
            let mut slots = Vec::with_capacity(p * (p + 1) / 2);
            for a in 0..p {
                for bb in 0..=a {
                    slots.push(ldl.slot(b.vars[a], b.vars[bb]));
                }
            }
            b.slots = slots;
        }
        let degree = blocks.iter().map(Block::degree).sum();
        Self { n, c, blocks, eq, degree, ldl }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut v = dot(&self.c, x);
        for b in self.blocks.iter().filter(|b| b.objective) {
            v += b.weight * b.value(&b.local(x));
        }
        v
    }

    fn merit(&self, x: &[f64], t: f64) -> f64 {
        let mut v = t * dot(&self.c, x);
        for b in &self.blocks {
            let s = if b.objective { t * b.weight } else { b.weight };
            let f = b.value(&b.local(x));
            if !f.is_finite() {
                return f64::INFINITY;
            }
            v += s * f;
        }
        v
    }

    fn eq_residual(&self, x: &[f64]) -> Vec<f64> {
        self.eq.iter().map(|(row, c)| row.iter().fold(*c, |acc, &(i, v)| acc + v * x[i])).collect()
    }

    fn max_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut a = f64::INFINITY;
        for b in &self.blocks {
            let dl: Vec<f64> = b.vars.iter().map(|&i| dx[i]).collect();
            if dl.iter().all(|v| *v == 0.0) {
                continue;
            }
            a = a.min(b.max_step(&b.local(x), &dl));
        }
        a
    }

    /// Newton direction at barrier weight `t`; returns (dx, gradient . dx).
    fn newton_direction(&mut self, x: &[f64], t: f64) -> Option<(Vec<f64>, f64)> {
        let n = self.n;
        let m = self.eq.len();
        let mut g = vec![0.0; n];
        for i in 0..n {
            g[i] = t * self.c[i];
        }
        self.ldl.clear();
        for b in &self.blocks {
            let s = if b.objective { t * b.weight } else { b.weight };
            let (_, gl, hl) = b.derivs(&b.local(x))?;
            let p = b.vars.len();
            let mut k = 0;
            for a in 0..p {
                g[b.vars[a]] += s * gl[a];
                for bb in 0..=a {
                    self.ldl.add(b.slots[k], s * hl[(a, bb)]);
                    k += 1;
                }
            }
        }
        for (r, (row, _)) in self.eq.iter().enumerate() {
            for &(i, v) in row {
                let slot = self.ldl.slot(i, n + r);
                self.ldl.add(slot, v);
            }
        }
        self.ldl.factor(REG);
        let res = self.eq_residual(x);
        let mut rhs = vec![0.0; n + m];
        for i in 0..n {
            rhs[i] = -g[i];
        }
        for r in 0..m {
            rhs[n + r] = -res[r];
        }
        let sol = self.ldl.solve(&rhs, 10);
        let dx = sol[..n].to_vec();
        if dx.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let gd = dot(&g, &dx);
        Some((dx, gd))
    }
}

enum Centering {
    Done,
    Stop,
    Unbounded,
    Failed,
}

/// Minimizes the barrier merit at fixed `t`. `stop` is checked after each step.
fn center(
    cp: &mut Compiled,
    x: &mut Vec<f64>,
    t: f64,
    budget: &mut usize,
    stop: &dyn Fn(&[f64]) -> bool,
) -> Centering {
    let mut dec = f64::INFINITY;
    for _ in 0..MAX_CENTERING {
        if *budget == 0 {
            return Centering::Failed;
        }
        *budget -= 1;
        let Some((dx, gd)) = cp.newton_direction(x, t) else { return Centering::Failed };
        dec = -gd;
        if dec.is_nan() {
            return Centering::Failed;
        }
        let f0 = cp.merit(x, t);
        // Below this the merit cannot resolve further progress.
        let tol = NEWTON_TOL.max(1e-15 * f0.abs());
        if dec.abs() * 0.5 <= tol {
            return Centering::Done;
        }
        let amax = cp.max_step(x, &dx);
        let xnorm = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let dnorm = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if amax.is_infinite() && dot(&cp.c, &dx) < 0.0 && dnorm > 1e8 * xnorm {
            return Centering::Unbounded;
        }
        let mut alpha = if amax.is_finite() { (0.99 * amax).min(1.0) } else { 1.0 };
        let mut trial = x.clone();
        let mut accepted = false;
        while alpha > 1e-16 {
            for i in 0..x.len() {
                trial[i] = x[i] + alpha * dx[i];
            }
            let f1 = cp.merit(&trial, t);
            if f1 <= f0 + ARMIJO * alpha * gd.min(0.0) + 1e-13 * f0.abs() {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Rounding floor: a decrement this small means we are centered.
            return if dec < 1e-6 { Centering::Done } else { Centering::Failed };
        }
        std::mem::swap(x, &mut trial);
        if x.iter().any(|v| v.abs() > BIG) || cp.objective(x) < -BIG {
            return Centering::Unbounded;
        }
        if stop(x) {
            return Centering::Stop;
        }
        if alpha == 1.0 && dec * 0.5 <= tol * 10.0 {
            return Centering::Done;
        }
    }
    log::trace!("centering budget exhausted at t {t:e}, decrement {dec:e}");
    if dec < 1e-3 {
        Centering::Done
    } else {
        Centering::Failed
    }
}

fn compile_phase2(p: &ConicProblem) -> Compiled {
    let (obj, squares, logdets, constraints) = p.parts();
    let n = p.num_scalars();
    let mut c = vec![0.0; n];
    for &(i, v) in &obj.terms {
        c[i] += v;
    }
    let mut blocks = Vec::new();
    for (w, e) in squares {
        if *w == 0.0 {
            continue;
        }
        let (vars, rows, consts) = localize(&[e]);
        blocks.push(Block {
            vars,
            kind: Kind::Square { a: rows[0].clone(), c: consts[0] },
            weight: *w,
            objective: true,
            slots: Vec::new(),
        });
    }
    for (w, e) in logdets {
        blocks.push(psd_block(e, *w, true));
    }
    let mut eq = Vec::new();
    for con in constraints {
        match con {
            Constraint::Zero(a) => {
                let mut a = a.clone();
                a.compact();
                if !a.terms.is_empty() {
                    eq.push((a.terms.clone(), a.constant));
                }
            }
            Constraint::NonNeg(a) => {
                let (vars, rows, consts) = localize(&[a]);
                blocks.push(Block {
                    vars,
                    kind: Kind::Lin { a: rows[0].clone(), c: consts[0] },
                    weight: 1.0,
                    objective: false,
                    slots: Vec::new(),
                });
            }
            Constraint::Soc(v) => {
                let refs: Vec<&Affine> = v.iter().collect();
                let (vars, rows, consts) = localize(&refs);
                let j = DMatrix::from_fn(rows.len(), vars.len(), |r, k| rows[r][k]);
                blocks.push(Block {
                    vars,
                    kind: Kind::Soc { j, c: DVector::from_vec(consts) },
                    weight: 1.0,
                    objective: false,
                    slots: Vec::new(),
                });
            }
            Constraint::Psd(e) => blocks.push(psd_block(e, 1.0, false)),
        }
    }
    Compiled::new(n, c, blocks, eq)
}

/// Least-norm correction of `x` onto the equality rows.
fn project_equalities(cp: &Compiled, x: &mut [f64]) {
    if cp.eq.is_empty() {
        return;
    }
    let n = cp.n;
    let m = cp.eq.len();
    let mut cliques: Vec<Vec<usize>> = (0..n + m).map(|i| vec![i]).collect();
    for (r, (row, _)) in cp.eq.iter().enumerate() {
        for &(i, _) in row {
            cliques.push(vec![i, n + r]);
        }
    }
    let mut sign = vec![1.0; n];
    sign.extend(std::iter::repeat(-1.0).take(m));
    let mut ldl = SparseLdl::new(n + m, &cliques, sign);
    for i in 0..n {
        let s = ldl.slot(i, i);
        ldl.add(s, 1.0);
    }
    for (r, (row, _)) in cp.eq.iter().enumerate() {
        for &(i, v) in row {
            let s = ldl.slot(i, n + r);
            ldl.add(s, v);
        }
        let s = ldl.slot(n + r, n + r);
        ldl.add(s, -1e-14);
    }
    ldl.factor(1e-14);
    let res = cp.eq_residual(x);
    let mut rhs = vec![0.0; n + m];
    for r in 0..m {
        rhs[n + r] = -res[r];
    }
    let d = ldl.solve(&rhs, 5);
    for i in 0..n {
        x[i] += d[i];
    }
}

/// Picks `t` from a geometric grid by the smallest Newton decrement at `x`.
fn initial_t(cp: &mut Compiled, x: &[f64], settings: &SolverSettings) -> f64 {
    if cp.degree == 0.0 {
        return 1.0;
    }
    let f = cp.objective(x).abs().max(1.0);
    let t_max = cp.degree / (settings.gap_tol * f);
    let mut best = (f64::INFINITY, 1.0);
    let mut t = 1.0;
    while t <= t_max {
        if let Some((_, gd)) = cp.newton_direction(x, t) {
            let dec = -gd;
            if dec.is_finite() && dec < best.0 {
                best = (dec, t);
            }
        }
        t *= 10.0;
    }
    best.1
}

pub(super) fn solve(p: &ConicProblem, x0: &[f64], settings: &SolverSettings) -> Outcome {
    let mut cp = compile_phase2(p);
    let mut x = x0.to_vec();
    let mut budget = settings.max_newton;
    let n = cp.n;

    let eq_bad = cp.eq_residual(&x).iter().any(|r| r.abs() > settings.feas_tol);
    if eq_bad {
        project_equalities(&cp, &mut x);
    }

    // Phase I: minimize s subject to every barrier block shifted by s, s >= -1.
    let need = cp
        .blocks
        .iter()
        .map(|b| b.infeasibility(&b.local(&x)))
        .fold(f64::NEG_INFINITY, f64::max);
    if need >= 0.0 || need.is_nan() {
        let s_index = n;
        let mut blocks: Vec<Block> = cp
            .blocks
            .iter()
            .filter(|b| !matches!(b.kind, Kind::Square { .. }))
            .map(|b| b.shifted(s_index))
            .collect();
        blocks.push(Block {
            vars: vec![s_index],
            kind: Kind::Lin { a: vec![1.0], c: 1.0 },
            weight: 1.0,
            objective: false,
            slots: Vec::new(),
        });
        let mut c = vec![0.0; n + 1];
        c[s_index] = 1.0;
        let mut ph1 = Compiled::new(n + 1, c, blocks, cp.eq.clone());
        let s0 = if need.is_finite() { need + need.abs().max(1.0) } else { 1e6 };
        let mut y = x.clone();
        y.push(s0);
        let mut t = 1.0;
        let stop = |y: &[f64]| y[s_index] < 0.0;
        let ok = loop {
            match center(&mut ph1, &mut y, t, &mut budget, &stop) {
                Centering::Stop => break true,
                Centering::Done => {}
                Centering::Unbounded | Centering::Failed => {
                    return Outcome { status: SolveStatus::Stalled, x, newton_steps: settings.max_newton - budget }
                }
            }
            let s = y[s_index];
            let gap = ph1.degree / t;
            if s < 0.0 {
                break true;
            }
            if s - gap > 0.0 || gap < 1e-12 {
                break false;
            }
            t *= settings.mu;
        };
        if !ok {
            y.truncate(n);
            return Outcome { status: SolveStatus::Infeasible, x: y, newton_steps: settings.max_newton - budget };
        }
        y.truncate(n);
        x = y;
        let worst = cp
            .blocks
            .iter()
            .map(|b| b.infeasibility(&b.local(&x)))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(worst < 0.0) {
            return Outcome { status: SolveStatus::Stalled, x, newton_steps: settings.max_newton - budget };
        }
    }

    // Phase II, starting at the barrier weight whose centering problem `x`
    // already comes closest to solving.
    let no_stop = |_: &[f64]| false;
    let mut t = initial_t(&mut cp, &x, settings);
    loop {
        match center(&mut cp, &mut x, t, &mut budget, &no_stop) {
            Centering::Done | Centering::Stop => {}
            Centering::Unbounded => {
                return Outcome { status: SolveStatus::Unbounded, x, newton_steps: settings.max_newton - budget }
            }
            Centering::Failed => {
                let f = cp.objective(&x);
                let status = if cp.degree / t <= 1e-6 * f.abs().max(1.0) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Stalled
                };
                return Outcome { status, x, newton_steps: settings.max_newton - budget };
            }
        }
        let f = cp.objective(&x);
        if cp.degree == 0.0 || cp.degree / t <= settings.gap_tol * f.abs().max(1.0) {
            break;
        }
        t *= settings.mu;
    }
    Outcome { status: SolveStatus::Optimal, x, newton_steps: settings.max_newton - budget }
}
