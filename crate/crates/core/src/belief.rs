//! Gaussian belief dynamics in information form.
//!
//! A step carries the prior information `Q` (inverse of the propagated
//! covariance) and the measurement information `S`; the posterior covariance
//! is `(Q + S)^-1`. Step 0 stores the initial covariance as `Q = P0^-1, S = 0`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Environment;
use crate::linalg;

/// Conditioning bound above which a covariance is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    /// Per-step noise covariance.
    pub w: DMatrix<f64>,
    pub dt: f64,
}

impl ProcessModel {
    pub fn new(w: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::ShapeMismatch("W must be square".into()));
        }
        if !linalg::is_symmetric(&w, linalg::SYMMETRY_TOL) {
            return Err(Error::Invalid("W is not symmetric".into()));
        }
        if linalg::min_eigenvalue(&w) < -1e-12 * w.amax().max(1.0) {
            return Err(Error::Invalid("W is not positive semidefinite".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step {dt} must be positive")));
        }
        Ok(Self { w, dt })
    }

    /// `W = scale * I_d`.
    pub fn isotropic(d: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * scale, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub x: DVector<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl BeliefState {
    pub fn new(x: DVector<f64>, q: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        let d = x.len();
        linalg::check_square(&q, d, "Q")?;
        linalg::check_square(&s, d, "S")?;
        Ok(Self { x, q, s })
    }

    /// Initial state with covariance `p0` and no measurement.
    pub fn initial(x: DVector<f64>, p0: &DMatrix<f64>) -> Result<Self> {
        let q = linalg::inverse_pd(p0, "P0")?;
        let d = x.len();
        Self::new(x, q, DMatrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Posterior covariance `(Q + S)^-1`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        linalg::inverse_pd(&(&self.q + &self.s), "Q + S")
    }

    /// Prior covariance `Q^-1`.
    pub fn prior_covariance(&self) -> Result<DMatrix<f64>> {
        linalg::inverse_pd(&self.q, "Q")
    }

    /// Posterior information `Q + S`.
    pub fn information(&self) -> DMatrix<f64> {
        &self.q + &self.s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPath {
    pub alpha: f64,
    pub steps: Vec<BeliefState>,
}

impl BeliefPath {
    pub fn new(alpha: f64, steps: Vec<BeliefState>) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::Invalid("a path needs at least two states".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::Domain(format!("alpha {alpha} must be nonnegative")));
        }
        let d = steps[0].dim();
        if steps.iter().any(|s| s.dim() != d) {
            return Err(Error::ShapeMismatch("path states differ in dimension".into()));
        }
        Ok(Self { alpha, steps })
    }

    /// Number of transitions `K`.
    pub fn k(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    /// Rebuilds every `Q_k` from the exact Kalman recursion, keeping `x` and `S`.
    pub fn repropagate(&mut self, model: &ProcessModel) -> Result<()> {
        for k in 1..self.steps.len() {
            let p = self.steps[k - 1].covariance()?;
            self.steps[k].q = linalg::inverse_pd(&propagate_prior(&p, model), "propagated prior")?;
        }
        Ok(())
    }
}

pub fn propagate_prior(p: &DMatrix<f64>, model: &ProcessModel) -> DMatrix<f64> {
    p + &model.w
}

/// Posterior covariance `(P_hat^-1 + S)^-1`.
pub fn apply_measurement(p_hat: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::check_square(s, p_hat.nrows(), "S")?;
    let cond = linalg::condition_number(p_hat);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularMatrix(format!("prior covariance condition number {cond:e}")));
    }
    let q = linalg::inverse_pd(p_hat, "prior covariance")?;
    linalg::inverse_pd(&(q + s), "posterior information")
}

/// Information part `(alpha / 2) (logdet(Q + S) - logdet Q)`.
pub fn info_cost(q: &DMatrix<f64>, s: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    let post = linalg::logdet_pd(&(q + s), "Q + S")?;
    let prior = linalg::logdet_pd(q, "Q")?;
    Ok(0.5 * alpha * (post - prior))
}

/// `(control, info)` parts of one step.
pub fn step_cost_parts(
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    alpha: f64,
) -> Result<(f64, f64)> {
    linalg::check_len(x_next, x_prev.len(), "x_next")?;
    Ok(((x_next - x_prev).norm_squared(), info_cost(q, s, alpha)?))
}

pub fn step_cost(x_prev: &DVector<f64>, x_next: &DVector<f64>, q: &DMatrix<f64>, s: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    let (c, i) = step_cost_parts(x_prev, x_next, q, s, alpha)?;
    Ok(c + i)
}

/// Summed `(control, info)` over transitions `1..=K`.
pub fn path_cost_parts(path: &BeliefPath) -> Result<(f64, f64)> {
    let mut control = 0.0;
    let mut info = 0.0;
    for k in 1..path.steps.len() {
        let st = &path.steps[k];
        let (c, i) = step_cost_parts(&path.steps[k - 1].x, &st.x, &st.q, &st.s, path.alpha)?;
        control += c;
        info += i;
    }
    Ok((control, info))
}

pub fn path_cost(path: &BeliefPath) -> Result<f64> {
    let (c, i) = path_cost_parts(path)?;
    Ok(c + i)
}

/// Mean and covariance along a transition at `s in [0, 1]`.
pub fn interpolate(
    x_prev: &DVector<f64>,
    x_next: &DVector<f64>,
    p_prev: &DMatrix<f64>,
    model: &ProcessModel,
    s: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("interpolation parameter {s} outside [0, 1]")));
    }
    Ok((x_prev + (x_next - x_prev) * s, p_prev + &model.w * s))
}

/// Per-transition maximum over the `s` grid of the empirical frequency with
/// which `x ~ N(x[s], P[s])` lands in some unified obstacle.
///
/// Each `(k, s)` cell draws from its own ChaCha stream, so the result does
/// not depend on how cells are scheduled.
pub fn monte_carlo_marginal_collision(
    path: &BeliefPath,
    env: &Environment,
    model: &ProcessModel,
    n_samples: usize,
    s_grid: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if s_grid < 2 {
        return Err(Error::Domain("s_grid needs at least two points".into()));
    }
    let k_count = path.k();
    let mut cells = Vec::with_capacity(k_count * s_grid);
    for k in 1..=k_count {
        let p_prev = path.steps[k - 1].covariance()?;
        for i in 0..s_grid {
            let s = i as f64 / (s_grid - 1) as f64;
            let (m, p) = interpolate(&path.steps[k - 1].x, &path.steps[k].x, &p_prev, model, s)?;
            let l = linalg::cholesky(&p, "interpolated covariance")?.l();
            cells.push((k, i, m, l));
        }
    }
    let freqs: Vec<(usize, f64)> = cells
        .par_iter()
        .map(|(k, i, m, l)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((*k as u64) << 32) | *i as u64);
            let d = m.len();
            let mut hits = 0usize;
            let mut z = DVector::zeros(d);
            for _ in 0..n_samples {
                for c in 0..d {
                    z[c] = StandardNormal.sample(&mut rng);
                }
                let x = m + l * &z;
                if env.in_collision(&x) {
                    hits += 1;
                }
            }
            (*k, hits as f64 / n_samples.max(1) as f64)
        })
        .collect();
    let mut out = vec![0.0f64; k_count];
    for (k, f) in freqs {
        out[k - 1] = out[k - 1].max(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_environment, Polytope};
    use proptest::prelude::*;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn spd(seed: &[f64], d: usize, floor: f64) -> DMatrix<f64> {
        let l = DMatrix::from_fn(d, d, |i, j| seed[(i * d + j) % seed.len()]);
        &l * l.transpose() + eye(d) * floor
    }

    #[test]
    fn propagate_adds_noise() {
        let m = ProcessModel::isotropic(2, 0.2e-3).unwrap();
        let p = propagate_prior(&(eye(2) * 0.01), &m);
        assert!((p - eye(2) * 0.0102).amax() < 1e-15);
        let z = ProcessModel::isotropic(2, 0.0).unwrap();
        assert_eq!(propagate_prior(&(eye(2) * 0.01), &z), eye(2) * 0.01);
    }

    #[test]
    fn measurement_examples() {
        let p = apply_measurement(&eye(2), &DMatrix::zeros(2, 2)).unwrap();
        assert!((p - eye(2)).amax() < 1e-15);
        let p = apply_measurement(&eye(2), &eye(2)).unwrap();
        assert!((p - eye(2) * 0.5).amax() < 1e-15);
        let bad = DMatrix::from_diagonal(&v(&[1.0, 1e-13]));
        assert!(matches!(apply_measurement(&bad, &eye(2)), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn step_cost_examples() {
        let x = v(&[0.0, 0.0]);
        let c = step_cost(&x, &x, &eye(2), &eye(2), 1.0).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-14);
        let (ctrl, info) = step_cost_parts(&x, &v(&[0.1, 0.0]), &eye(2), &DMatrix::zeros(2, 2), 3.0).unwrap();
        assert!((ctrl - 0.01).abs() < 1e-16);
        assert_eq!(info, 0.0);
    }

    #[test]
    fn path_cost_matches_manual_sum() {
        let m = ProcessModel::isotropic(2, 0.2e-3).unwrap();
        let mut steps = vec![BeliefState::initial(v(&[0.0, 0.0]), &(eye(2) * 1e-4)).unwrap()];
        let s_seq = [0.0, 0.0, 5e3, 0.0, 2e3, 0.0];
        for (k, &s) in s_seq.iter().enumerate() {
            let p = steps[k].covariance().unwrap();
            let q = linalg::inverse_pd(&propagate_prior(&p, &m), "q").unwrap();
            steps.push(BeliefState::new(v(&[0.1 * (k + 1) as f64, 0.02 * k as f64]), q, eye(2) * s).unwrap());
        }
        let path = BeliefPath::new(0.5, steps.clone()).unwrap();
        let mut manual = 0.0;
        for k in 1..steps.len() {
            let dx = &steps[k].x - &steps[k - 1].x;
            let prior = linalg::logdet_pd(&steps[k].q, "").unwrap();
            let post = linalg::logdet_pd(&(&steps[k].q + &steps[k].s), "").unwrap();
            manual += dx.dot(&dx) + 0.25 * (post - prior);
        }
        assert!((path_cost(&path).unwrap() - manual).abs() < 1e-12);
        let (_, info) = path_cost_parts(&path).unwrap();
        assert!(info > 0.0);
    }

    #[test]
    fn path_cost_is_additive_over_concatenation() {
        let s0 = BeliefState::initial(v(&[0.0, 0.0]), &(eye(2) * 0.01)).unwrap();
        let s1 = BeliefState::new(v(&[0.1, 0.0]), eye(2) * 90.0, eye(2) * 10.0).unwrap();
        let s2 = BeliefState::new(v(&[0.2, 0.1]), eye(2) * 80.0, eye(2) * 0.0).unwrap();
        let a = BeliefPath::new(1.0, vec![s0.clone(), s1.clone()]).unwrap();
        let b = BeliefPath::new(1.0, vec![s1.clone(), s2.clone()]).unwrap();
        let ab = BeliefPath::new(1.0, vec![s0, s1, s2]).unwrap();
        let lhs = path_cost(&ab).unwrap();
        let rhs = path_cost(&a).unwrap() + path_cost(&b).unwrap();
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let m = ProcessModel::isotropic(2, 0.2e-3).unwrap();
        let (a, b) = (v(&[0.0, 0.0]), v(&[1.0, 2.0]));
        let p = eye(2) * 0.01;
        let (x0, p0) = interpolate(&a, &b, &p, &m, 0.0).unwrap();
        assert_eq!((x0, p0), (a.clone(), p.clone()));
        let (x1, p1) = interpolate(&a, &b, &p, &m, 1.0).unwrap();
        assert_eq!(x1, b);
        assert!((p1 - eye(2) * 0.0102).amax() < 1e-16);
        let (_, ph) = interpolate(&a, &b, &p, &m, 0.5).unwrap();
        assert!((ph - eye(2) * 0.0101).amax() < 1e-16);
        assert!(matches!(interpolate(&a, &b, &p, &m, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn monte_carlo_empty_environment_and_determinism() {
        let env = build_environment(
            Polytope::axis_box(&[-10.0, -10.0], &[10.0, 10.0]).unwrap(),
            vec![],
            Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let m = ProcessModel::isotropic(2, 1e-4).unwrap();
        let s0 = BeliefState::initial(v(&[0.0, 0.0]), &(eye(2) * 1e-3)).unwrap();
        let q = linalg::inverse_pd(&(eye(2) * 1.1e-3), "").unwrap();
        let s1 = BeliefState::new(v(&[0.5, 0.5]), q, DMatrix::zeros(2, 2)).unwrap();
        let path = BeliefPath::new(1.0, vec![s0, s1]).unwrap();
        let a = monte_carlo_marginal_collision(&path, &env, &m, 1000, 11, 5).unwrap();
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn monte_carlo_tangent_halfspace_matches_normal_tail() {
        // Ellipse at chi2(0.9) tangent to x1 >= sqrt(chi2): mass beyond is 1 - Phi(sqrt(chi2)).
        let chi2 = crate::geometry::chi2_quantile(0.9, 2).unwrap();
        let r = chi2.sqrt();
        let env = build_environment(
            Polytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[100.0])).unwrap(),
            vec![Polytope::new(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]), v(&[-r])).unwrap()],
            Polytope::axis_box(&[-1.0, -1.0], &[0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let m = ProcessModel::isotropic(2, 0.0).unwrap();
        let s0 = BeliefState::initial(v(&[0.0, 0.0]), &eye(2)).unwrap();
        let path = BeliefPath::new(1.0, vec![s0.clone(), s0]).unwrap();
        let n = 40_000;
        let f = monte_carlo_marginal_collision(&path, &env, &m, n, 2, 9).unwrap()[0];
        // 1 - Phi(r) via the complementary error function
        let tail = 0.5 * statrs::function::erf::erfc(r / 2f64.sqrt());
        assert!((tail - 0.0159).abs() < 1e-3);
        let sigma = (tail * (1.0 - tail) / n as f64).sqrt();
        // max over two s values of the same distribution: allow 4 sigma
        assert!((f - tail).abs() < 4.0 * sigma, "{f} vs {tail}");
        let g = monte_carlo_marginal_collision(&path, &env, &m, n, 2, 9).unwrap()[0];
        assert_eq!(f, g);
    }

    proptest! {
        #[test]
        fn kalman_recursion_matches_direct_arithmetic(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
            w in 0.0f64..0.5,
        ) {
            let p_prev = spd(&a, 2, 0.05);
            let s = spd(&b, 2, 0.0);
            let model = ProcessModel::isotropic(2, w).unwrap();
            let got = apply_measurement(&propagate_prior(&p_prev, &model), &s).unwrap();
            let qk = (&p_prev + eye(2) * w).try_inverse().unwrap();
            let direct = (qk + &s).try_inverse().unwrap();
            prop_assert!((got - &direct).amax() < 1e-10 * direct.amax().max(1.0));
        }

        #[test]
        fn measurement_never_increases_covariance(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let p_hat = spd(&a, 2, 0.05);
            let s = spd(&b, 2, 0.0);
            let p = apply_measurement(&p_hat, &s).unwrap();
            prop_assert!(linalg::min_eigenvalue(&(&p_hat - &p)) >= -1e-10);
        }

        #[test]
        fn propagation_raises_eigenvalues(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            w in 0.0f64..1.0,
        ) {
            let p = spd(&a, 2, 0.01);
            let model = ProcessModel::isotropic(2, w).unwrap();
            let before = linalg::eigenvalues(&p);
            let after = linalg::eigenvalues(&propagate_prior(&p, &model));
            let mut b: Vec<f64> = before.iter().copied().collect();
            let mut c: Vec<f64> = after.iter().copied().collect();
            b.sort_by(f64::total_cmp);
            c.sort_by(f64::total_cmp);
            for (x, y) in b.iter().zip(&c) {
                prop_assert!(y >= &(x - 1e-12));
            }
        }

        #[test]
        fn info_term_is_nonincreasing_in_q(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
            c in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let q1 = spd(&a, 2, 0.1);
            let q2 = &q1 + spd(&b, 2, 0.0);
            let s = spd(&c, 2, 0.0);
            let i1 = info_cost(&q1, &s, 1.0).unwrap();
            let i2 = info_cost(&q2, &s, 1.0).unwrap();
            prop_assert!(i2 <= i1 + 1e-12);
            prop_assert!(i1 >= -1e-14);
        }

        #[test]
        fn step_cost_matches_entropy_form(
            a in proptest::collection::vec(-1.0f64..1.0, 4),
            b in proptest::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.0f64..5.0,
        ) {
            let q = spd(&a, 2, 0.1);
            let s = spd(&b, 2, 0.0);
            let x = v(&[0.3, -0.1]);
            let y = v(&[0.0, 0.2]);
            let got = step_cost(&x, &y, &q, &s, alpha).unwrap();
            let p_hat = q.clone().try_inverse().unwrap();
            let p = (&q + &s).try_inverse().unwrap();
            let entropy = 0.5 * p_hat.determinant().ln() - 0.5 * p.determinant().ln();
            let expect = (&y - &x).norm_squared() + alpha * entropy;
            prop_assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }

        #[test]
        fn interpolation_is_affine(s in 0.0f64..1.0, t in 0.0f64..1.0) {
            let m = ProcessModel::isotropic(2, 0.3).unwrap();
            let (a, b) = (v(&[0.0, 1.0]), v(&[2.0, -1.0]));
            let p = eye(2) * 0.2;
            let (xs, ps) = interpolate(&a, &b, &p, &m, s).unwrap();
            let (xt, pt) = interpolate(&a, &b, &p, &m, t).unwrap();
            let (xm, pm) = interpolate(&a, &b, &p, &m, 0.5 * (s + t)).unwrap();
            prop_assert!(((xs + xt) * 0.5 - xm).amax() < 1e-14);
            prop_assert!(((ps + pt) * 0.5 - pm).amax() < 1e-14);
        }
    }
}
