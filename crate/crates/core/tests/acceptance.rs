//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minsense::belief::{self, BeliefPath, ProcessModel};
use minsense::collision::{self, SafetyConfig, TransitionQuery};
use minsense::geometry::{build_environment, Polytope};
use minsense::io::{self, Scenario};
use minsense::linalg;
use minsense::pipeline::{self, RunConfig};
use minsense::smoother::{self, SmoothOutput, SmootherConfig};

const PR: f64 = 0.9;
const W_SCALE: f64 = 0.2e-3;
const BAND: f64 = 1e-6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn safety() -> SafetyConfig {
    SafetyConfig::new(PR, 2).unwrap()
}

fn model() -> ProcessModel {
    ProcessModel::isotropic(2, W_SCALE).unwrap()
}

/// Random SPD matrix with eigenvalues in `[lo, lo * cond]`, `lo` drawn from `lo_range`.
fn random_spd(rng: &mut ChaCha8Rng, lo_range: (f64, f64), cond: f64) -> DMatrix<f64> {
    let lo = if lo_range.0 < lo_range.1 { rng.random_range(lo_range.0..lo_range.1) } else { lo_range.0 };
    let e1 = lo * cond.powf(rng.random::<f64>());
    let e2 = lo * cond.powf(rng.random::<f64>());
    let th = rng.random_range(0.0..std::f64::consts::PI);
    let r = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
    linalg::symmetrize(&(&r * DMatrix::from_diagonal(&v(&[e1, e2])) * r.transpose()))
}

/// Random box or triangle inside `[c - s, c + s]` around a random center in `region`.
fn random_obstacle(rng: &mut ChaCha8Rng, region: (f64, f64), size: (f64, f64)) -> Polytope {
    loop {
        let c = [rng.random_range(region.0..region.1), rng.random_range(region.0..region.1)];
        if rng.random::<bool>() {
            let h = [rng.random_range(size.0..size.1), rng.random_range(size.0..size.1)];
            return Polytope::axis_box(&[c[0] - h[0], c[1] - h[1]], &[c[0] + h[0], c[1] + h[1]]).unwrap();
        }
        let pts: Vec<[f64; 2]> = (0..3)
            .map(|_| {
                let r = rng.random_range(size.0..size.1);
                let th = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                [c[0] + r * th.cos(), c[1] + r * th.sin()]
            })
            .collect();
        let area = ((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1])).abs();
        if area < 0.2 * size.0 * size.0 {
            continue;
        }
        if let Ok(p) = Polytope::convex_polygon(&pts) {
            return p;
        }
    }
}

/// Criterion 2: discrete certificate against the projection oracle.
fn discrete_vs_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let chi2 = safety().chi2;
    let (mut agree, mut banded, mut safe) = (0, 0, 0);
    let mut bad = Vec::new();
    for i in 0..1000 {
        let o = random_obstacle(&mut rng, (-0.5, 0.5), (0.1, 0.6));
        let q = random_spd(&mut rng, (2.0, 50.0), 1e3);
        let x = v(&[rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]);
        let val = collision::discrete_oracle_value(&x, &q, &o).unwrap();
        if (val - chi2).abs() <= BAND * chi2.max(1.0) {
            banded += 1;
            continue;
        }
        let cert = collision::discrete_certificate(&x, &q, &o, chi2).unwrap();
        if cert.is_some() == (val >= chi2) {
            agree += 1;
            safe += (val >= chi2) as usize;
        } else {
            bad.push(i);
        }
    }
    verdict(
        bad.is_empty(),
        format!("{agree}/{} agree ({safe} safe), {banded} in the boundary band, mismatches {bad:?}", 1000 - banded),
    )
}

/// Criterion 3: half-space check against the discrete certificate.
fn halfspace_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let chi2 = safety().chi2;
    let (mut agree, mut safe, mut worst_rel) = (0, 0, 0.0f64);
    let mut bad = Vec::new();
    for i in 0..500 {
        let th = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        let a = v(&[th.cos(), th.sin()]) * rng.random_range(0.2..5.0);
        let b = rng.random_range(-1.0..1.0);
        let x = v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let q = random_spd(&mut rng, (1.0, 100.0), 1e3);
        // the ellipse stays in {a^T y <= b} iff it misses the obstacle {-a^T y <= -b}
        let obstacle = Polytope::halfspace(-&a, -b).unwrap();
        let h = collision::halfspace_check(&a, b, &x, &q, chi2).unwrap();
        let cert = collision::discrete_certificate(&x, &q, &obstacle, chi2).unwrap();
        if h != cert.is_some() {
            bad.push(i);
            continue;
        }
        agree += 1;
        if let Some(c) = cert {
            safe += 1;
            let p = linalg::inverse_pd(&q, "Q").unwrap();
            let closed = (b - a.dot(&x)) / a.dot(&(&p * &a));
            worst_rel = worst_rel.max((c.lambda[0] - closed).abs() / closed.abs());
        }
    }
    verdict(
        bad.is_empty() && worst_rel <= 1e-6,
        format!("{agree}/500 agree ({safe} safe), worst multiplier rel. error {worst_rel:.1e}, mismatches {bad:?}"),
    )
}

/// Criterion 4: common-multiplier certificate against the 1001-point grid oracle,
/// plus the thin-wall regression.
fn continuous_vs_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let chi2 = safety().chi2;
    let (mut cert_safe, mut oracle_unsafe, mut banded) = (0, 0, 0);
    let mut bad = Vec::new();
    for i in 0..500 {
        let o = random_obstacle(&mut rng, (-0.3, 0.3), (0.1, 0.5));
        let p = linalg::inverse_pd(&random_spd(&mut rng, (5.0, 200.0), 1e3), "P").unwrap();
        let w = random_spd(&mut rng, (1e-4, 1e-4), 1e2) * rng.random_range(0.0..20.0);
        let x0 = v(&[rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]);
        let x1 = &x0 + v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let qry = TransitionQuery { x_prev: &x0, x_next: &x1, p_prev: &p, w: &w, obstacle: &o, chi2 };
        let exact = collision::continuous_certificate(&qry).unwrap();
        let fast = collision::continuous_certificate_fast(&qry).unwrap();
        let oracle_val = collision::continuous_oracle_value(&qry, 1001).unwrap();
        let oracle_safe = collision::continuous_oracle(&qry, 1001).unwrap();
        for c in [&exact, &fast] {
            if c.is_some() {
                cert_safe += 1;
                if !oracle_safe {
                    bad.push(format!("#{i} certified but grid-unsafe"));
                }
            }
        }
        if !oracle_safe {
            if (oracle_val - chi2).abs() <= BAND * chi2 {
                banded += 1;
            } else {
                oracle_unsafe += 1;
                if exact.is_some() || fast.is_some() {
                    bad.push(format!("#{i} grid-unsafe but certified"));
                }
            }
        }
    }
    // thin wall: both endpoint ellipses miss the strip, the swept tube does not
    let wall = Polytope::axis_box(&[-0.1, 0.2], &[0.1, 1.0]).unwrap();
    let (x0, x1) = (v(&[-1.0, 0.0]), v(&[1.0, 0.0]));
    let p = DMatrix::identity(2, 2) * (0.09 / chi2);
    let w = DMatrix::zeros(2, 2);
    let q0 = linalg::inverse_pd(&p, "P").unwrap();
    let ends_ok = collision::discrete_certificate(&x0, &q0, &wall, chi2).unwrap().is_some()
        && collision::discrete_certificate(&x1, &q0, &wall, chi2).unwrap().is_some();
    let qry = TransitionQuery { x_prev: &x0, x_next: &x1, p_prev: &p, w: &w, obstacle: &wall, chi2 };
    let wall_ok = ends_ok
        && collision::continuous_certificate(&qry).unwrap().is_none()
        && collision::continuous_certificate_fast(&qry).unwrap().is_none()
        && !collision::continuous_oracle(&qry, 1001).unwrap();
    if !wall_ok {
        bad.push("thin-wall regression".into());
    }
    verdict(
        bad.is_empty(),
        format!(
            "{cert_safe} certified verdicts all grid-safe, {oracle_unsafe} grid-unsafe all uncertified, {banded} banded, thin wall {}",
            if wall_ok { "rejected" } else { "NOT rejected" }
        ) + &if bad.is_empty() { String::new() } else { format!(", failures {bad:?}") },
    )
}

/// Criterion 9: linearizations touch, majorize, and have the right gradient.
fn linearizations() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let chi2 = safety().chi2;
    let (mut touch, mut major, mut grad) = (0.0f64, 0usize, 0.0f64);
    let mut tried = 0;
    while tried < 1000 {
        let q0 = random_spd(&mut rng, (1.0, 1e3), 1e3);
        let s0 = random_spd(&mut rng, (1e-3, 1e2), 1e3);
        let lin = smoother::linearize_h3(&q0, &s0).unwrap();
        let exact0 = smoother::h3(&q0, &s0).unwrap();
        touch = touch.max((lin.eval(&q0, &s0).unwrap() - exact0).abs() / exact0.abs().max(1.0));
        let dq = random_spd(&mut rng, (1.0, 1.0), 10.0) * rng.random_range(-0.5..0.5) * linalg::min_eigenvalue(&q0);
        let ds = random_spd(&mut rng, (1.0, 1.0), 10.0) * rng.random_range(-0.5..2.0) * linalg::min_eigenvalue(&s0);
        let (q, s) = (&q0 + dq, &s0 + ds);
        if linalg::min_eigenvalue(&q) <= 0.0 || linalg::min_eigenvalue(&(&q + &s)) <= 0.0 {
            continue;
        }
        tried += 1;
        if lin.eval(&q, &s).unwrap() >= smoother::h3(&q, &s).unwrap() - 1e-12 {
            major += 1;
        }
        if tried <= 100 {
            let base = &q0 + &s0;
            let h = 1e-6 * linalg::min_eigenvalue(&base);
            let mut fd = DMatrix::zeros(2, 2);
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let mut e = DMatrix::zeros(2, 2);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                let f = |m: &DMatrix<f64>| linalg::logdet_pd(m, "fd").unwrap();
                let d = (f(&(&base + &e * h)) - f(&(&base - &e * h))) / (2.0 * h);
                // d = tr(G E): G_ii on the diagonal, 2 G_ij off it
                if i == j {
                    fd[(i, i)] = d;
                } else {
                    fd[(i, j)] = d / 2.0;
                    fd[(j, i)] = d / 2.0;
                }
            }
            grad = grad.max((&fd - &lin.gradient).norm() / lin.gradient.norm());
        }
    }
    let h3_ok = touch <= 1e-12 && major == 1000 && grad <= 1e-5;

    let (mut touch2, mut major2) = (0.0f64, 0usize);
    for _ in 0..1000 {
        let o = random_obstacle(&mut rng, (-0.5, 0.5), (0.1, 0.6));
        let f = o.faces();
        let xt = v(&[rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]);
        let lt = DVector::from_fn(f, |_, _| rng.random_range(0.0..5.0));
        let lin = smoother::linearize_h2(&xt, &lt, o.a(), o.b(), chi2).unwrap();
        let r = rng.random_range(0.0..10.0);
        let exact = smoother::h2(r, &xt, &lt, o.a(), o.b(), chi2);
        touch2 = touch2.max((lin.eval(r, &xt, &lt) - exact).abs() / exact.abs().max(1.0));
        let x = &xt + v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let lam = (&lt + DVector::from_fn(f, |_, _| rng.random_range(-2.0..2.0))).map(|l| l.max(0.0));
        if lin.eval(r, &x, &lam) >= smoother::h2(r, &x, &lam, o.a(), o.b(), chi2) - 1e-12 {
            major2 += 1;
        }
    }
    let h2_ok = touch2 <= 1e-12 && major2 == 1000;
    verdict(
        h3_ok && h2_ok,
        format!(
            "h3: touch {touch:.1e}, majorizes {major}/1000, gradient rel. error {grad:.1e}; h2: touch {touch2:.1e}, majorizes {major2}/1000"
        ),
    )
}

/// One smoothing run kept for the cross-run criteria.
struct Run {
    label: String,
    scenario: Scenario,
    seed: BeliefPath,
    out: SmoothOutput,
}

fn smooth_full(sc: &Scenario, seed: &BeliefPath, alpha: f64) -> minsense::Result<SmoothOutput> {
    let mut cfg = SmootherConfig::new(alpha, safety());
    cfg.max_iters = 15;
    // run all 15 iterations so the whole trace is checked
    cfg.tol = 0.0;
    smoother::smooth(seed, &sc.env, &model(), &cfg)
}

fn analog_runs() -> (Vec<Run>, Duration, Vec<String>) {
    let sc = io::parse_environment(pipeline::ANALOG_ENV).unwrap();
    let t0 = Instant::now();
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for alpha in [0.1, 1.0] {
        let cfg = RunConfig { alpha, pr: PR, w_scale: W_SCALE, n_nodes: 500, ..RunConfig::default() };
        match pipeline::plan(&sc, &cfg).and_then(|p| smooth_full(&sc, &p.path, alpha).map(|o| (p.path, o))) {
            Ok((seed, out)) => runs.push(Run { label: format!("analog alpha={alpha}"), scenario: sc.clone(), seed, out }),
            Err(e) => errors.push(format!("alpha={alpha}: {e}")),
        }
    }
    (runs, t0.elapsed(), errors)
}

/// Criterion 1.
fn monotonicity(runs: &[Run], elapsed: Duration, errors: &[String]) -> Verdict {
    let mut notes = Vec::new();
    let mut pass = errors.is_empty() && runs.len() == 2;
    for r in runs {
        let c: Vec<f64> = r.out.trace.iter().map(|t| t.cost).collect();
        let worst = c.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        let full = c.len() == 16;
        pass &= full && worst <= 1e-6;
        notes.push(format!(
            "{}: {} iters {:.5} -> {:.5}, worst step {:+.1e}",
            r.label,
            c.len() - 1,
            c[0],
            c[c.len() - 1],
            worst
        ));
    }
    pass &= elapsed <= Duration::from_secs(300);
    notes.push(format!("{:.1} s total", elapsed.as_secs_f64()));
    notes.extend(errors.iter().cloned());
    verdict(pass, notes.join("; "))
}

/// Criterion 5.
fn kf_tightness(runs: &[Run]) -> Verdict {
    let worst = runs.iter().map(|r| r.out.kf_residual).fold(0.0, f64::max);
    let recomputed = runs
        .iter()
        .map(|r| smoother::check_kf_tightness(&r.out.path, &model()).unwrap())
        .fold(0.0, f64::max);
    verdict(worst <= 1e-5 && recomputed <= 1e-5, format!("{} runs, worst residual {:.1e}", runs.len(), worst.max(recomputed)))
}

/// Criterion 6.
fn safety_preservation(runs: &[Run]) -> Verdict {
    let (mut iterates, mut worst_h2) = (0, f64::NEG_INFINITY);
    let mut bad = Vec::new();
    for r in runs {
        for (i, it) in r.out.iterates.iter().enumerate() {
            iterates += 1;
            let path = it.to_path().unwrap();
            if !smoother::recertify(&path, &r.scenario.env, &model(), &safety()).unwrap() {
                bad.push(format!("{} iterate {} fails re-certification", r.label, i + 1));
            }
            let h = smoother::max_h2(it, &r.scenario.env, &safety());
            worst_h2 = worst_h2.max(h);
            if h > 1e-7 {
                bad.push(format!("{} iterate {} has h2 = {h:.1e}", r.label, i + 1));
            }
        }
    }
    verdict(
        bad.is_empty() && iterates > 0,
        format!("{iterates} iterates over {} runs re-certified, max h2 {worst_h2:.1e}", runs.len())
            + &if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) },
    )
}

/// Criterion 7.
fn monte_carlo(runs: &[Run]) -> Verdict {
    let bound = pipeline::mc_bound(PR, 10_000);
    let mut worst = (0.0f64, String::new());
    for (i, r) in runs.iter().enumerate() {
        let f = belief::monte_carlo_marginal_collision(&r.out.path, &r.scenario.env, &model(), 10_000, 11, 700 + i as u64).unwrap();
        let m = f.iter().copied().fold(0.0, f64::max);
        if m > worst.0 {
            worst = (m, r.label.clone());
        }
    }
    verdict(worst.0 <= bound, format!("{} paths, max frequency {:.4} ({}) vs bound {bound:.4}", runs.len(), worst.0, worst.1))
}

/// Criterion 8, on the information term without the weight.
fn alpha_effect(runs: &[Run]) -> Verdict {
    let info = |label: &str| {
        runs.iter().find(|r| r.label == label).map(|r| {
            let (_, weighted) = belief::path_cost_parts(&r.out.path).unwrap();
            weighted / r.out.path.alpha
        })
    };
    match (info("analog alpha=1"), info("analog alpha=0.1")) {
        (Some(hi), Some(lo)) => verdict(hi <= lo, format!("information cost {hi:.4} (alpha 1.0) vs {lo:.4} (alpha 0.1)")),
        _ => verdict(false, "analogue runs missing"),
    }
}

/// 20 random environments with boxes and triangles between start and target.
fn random_runs() -> (Vec<Run>, usize, Vec<String>) {
    let mut runs = Vec::new();
    let mut skipped = 0;
    let mut errors = Vec::new();
    let mut env_seed = 0u64;
    while runs.len() + errors.len() < 20 {
        env_seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + env_seed);
        let n_obs = rng.random_range(2..=4);
        let obstacles: Vec<Polytope> = (0..n_obs).map(|_| random_obstacle(&mut rng, (0.3, 0.65), (0.04, 0.12))).collect();
        let env = build_environment(
            Polytope::axis_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            obstacles,
            Polytope::axis_box(&[0.8, 0.8], &[0.95, 0.95]).unwrap(),
        )
        .unwrap();
        let sc = Scenario { env, start: v(&[0.1, 0.1]), p0: DMatrix::identity(2, 2) * 1e-4, description: None };
        let alpha = if env_seed % 2 == 0 { 1.0 } else { 0.1 };
        let cfg = RunConfig { alpha, seed: env_seed, n_nodes: 500, ..RunConfig::default() };
        let plan = match pipeline::plan(&sc, &cfg) {
            Ok(p) => p,
            Err(minsense::Error::NoSolution(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => {
                errors.push(format!("env {env_seed}: planning failed: {e}"));
                continue;
            }
        };
        let label = format!("random env {env_seed} alpha={alpha}");
        match smooth_full(&sc, &plan.path, alpha) {
            Ok(out) => runs.push(Run { label, scenario: sc, seed: plan.path, out }),
            Err(e) => errors.push(format!("{label}: {e}")),
        }
        if runs.len() + errors.len() == 20 {
            break;
        }
    }
    (runs, skipped, errors)
}

/// Criterion 10.
fn smoothed_not_worse(runs: &[Run], skipped: usize, errors: &[String]) -> Verdict {
    let mut ok = 0;
    let mut gains = Vec::new();
    for r in runs {
        let seed_cost = belief::path_cost(&BeliefPath { alpha: r.out.path.alpha, ..r.seed.clone() }).unwrap();
        let final_cost = r.out.trace.last().map_or(f64::INFINITY, |t| t.cost);
        if final_cost <= seed_cost {
            ok += 1;
        }
        gains.push(1.0 - final_cost / seed_cost);
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len().max(1) as f64;
    verdict(
        ok == 20 && errors.is_empty(),
        format!(
            "{ok}/20 runs not worse than the seed, mean reduction {:.1}%, {skipped} environments without a tree solution skipped",
            100.0 * mean_gain
        ) + &if errors.is_empty() { String::new() } else { format!("; errors: {}", errors.join("; ")) },
    )
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();

    let (analog, analog_time, analog_err) = analog_runs();
    results.push((1, "CCP monotonicity", monotonicity(&analog, analog_time, &analog_err)));
    results.push((2, "discrete certificate vs oracle", discrete_vs_oracle()));
    results.push((3, "half-space consistency", halfspace_consistency()));
    results.push((4, "continuous certificate vs oracle", continuous_vs_oracle()));

    let (random, skipped, random_err) = random_runs();
    let mut all: Vec<Run> = analog;
    let n_analog = all.len();
    all.extend(random);
    results.push((5, "filter tightness", kf_tightness(&all)));
    results.push((6, "CCP safety preservation", safety_preservation(&all)));
    results.push((7, "Monte Carlo marginal bound", monte_carlo(&all)));
    results.push((8, "alpha effect", alpha_effect(&all[..n_analog])));
    results.push((9, "linearization correctness", linearizations()));
    results.push((10, "smoothed cost <= seed cost", smoothed_not_worse(&all[n_analog..], skipped, &random_err)));

    let mut failures = 0;
    results.sort_by_key(|r| r.0);
    for (n, name, v) in &results {
        println!("criterion {n:>2} [{name}]: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failures += (!v.pass) as usize;
    }
    println!("{} of {} criteria passed in {:.1} s", results.len() - failures, results.len(), t0.elapsed().as_secs_f64());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
