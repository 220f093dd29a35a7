//! Experiment orchestration shared by the command line and the C interface.

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::belief::{self, BeliefPath, BeliefState, ProcessModel};
use crate::collision::{self, SafetyConfig};
use crate::error::{Error, Result};
use crate::io::{CertificateJson, Scenario};
use crate::planner::{self, PlannerConfig, SteerContext, Tree};
use crate::smoother::{self, SmoothOutput, SmootherConfig};

/// The bundled analogue environment.
pub const ANALOG_ENV: &str = include_str!("../data/analog_env.json");

/// Sub-stream id of Monte Carlo validation.
pub const MONTE_CARLO_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub pr: f64,
    /// Process noise `W = w_scale I`.
    pub w_scale: f64,
    /// Number of transitions of the extracted path; `None` keeps the tree chain.
    pub k: Option<usize>,
    pub n_nodes: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub mc_samples: usize,
    pub mc_grid: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            pr: 0.9,
            w_scale: 0.2e-3,
            k: None,
            n_nodes: 500,
            seed: 0,
            max_iters: 15,
            mc_samples: 10_000,
            mc_grid: 11,
        }
    }
}

impl RunConfig {
    pub fn model(&self, d: usize) -> Result<ProcessModel> {
        ProcessModel::isotropic(d, self.w_scale)
    }

    pub fn safety(&self, d: usize) -> Result<SafetyConfig> {
        SafetyConfig::new(self.pr, d)
    }

    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig { n_nodes: self.n_nodes, seed: self.seed, ..PlannerConfig::default() }
    }

    pub fn smoother(&self, d: usize) -> Result<SmootherConfig> {
        let mut cfg = SmootherConfig::new(self.alpha, self.safety(d)?);
        cfg.max_iters = self.max_iters;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub tree: Tree,
    pub path: BeliefPath,
    pub cost: f64,
    pub ms: f64,
}

pub fn plan(sc: &Scenario, cfg: &RunConfig) -> Result<PlanOutput> {
    let d = sc.env.dim();
    let model = cfg.model(d)?;
    let safety = cfg.safety(d)?;
    let pcfg = cfg.planner();
    let ctx = SteerContext { env: &sc.env, model: &model, safety: &safety, alpha: cfg.alpha, s_max: pcfg.s_max };
    let t0 = Instant::now();
    let tree = planner::plan(BeliefState::initial(sc.start.clone(), &sc.p0)?, &pcfg, &ctx)?;
    let path = planner::extract_path(&tree, &ctx, cfg.k)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    let cost = belief::path_cost(&path)?;
    Ok(PlanOutput { tree, path, cost, ms })
}

/// Smooths `seed` with the weight `cfg.alpha`.
pub fn smooth(sc: &Scenario, seed: &BeliefPath, cfg: &RunConfig) -> Result<SmoothOutput> {
    let d = sc.env.dim();
    if seed.dim() != d {
        return Err(Error::ShapeMismatch(format!("path dimension {} vs environment {d}", seed.dim())));
    }
    smoother::smooth(seed, &sc.env, &cfg.model(d)?, &cfg.smoother(d)?)
}

pub fn certificates_json(out: &SmoothOutput) -> Vec<CertificateJson> {
    out.certificates
        .iter()
        .enumerate()
        .flat_map(|(k, row)| {
            row.iter().enumerate().map(move |(j, c)| CertificateJson {
                k: k + 1,
                j,
                lambda: c.lambda.iter().copied().collect(),
                margin: c.margin,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Largest Monte Carlo collision frequency over transitions and grid points.
    pub mc_max: f64,
    /// Bound `1 - pr + 3 sigma` the frequency is compared against.
    pub mc_bound: f64,
    pub kf_residual: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::from("check            result  detail\n");
        for c in &self.checks {
            out.push_str(&format!("{:<16} {:<7} {}\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail));
        }
        out
    }
}

/// Tolerance on the filter recursion residual.
pub const KF_TOL: f64 = 1e-5;

pub fn mc_bound(pr: f64, n: usize) -> f64 {
    let p = 1.0 - pr;
    p + 3.0 * (p * pr / n as f64).sqrt()
}

pub fn validate(sc: &Scenario, path: &BeliefPath, cfg: &RunConfig) -> Result<ValidationReport> {
    let d = sc.env.dim();
    if path.dim() != d {
        return Err(Error::ShapeMismatch(format!("path dimension {} vs environment {d}", path.dim())));
    }
    let model = cfg.model(d)?;
    let safety = cfg.safety(d)?;
    let mut checks = Vec::new();

    let mut unsafe_steps = Vec::new();
    for k in 1..path.steps.len() {
        let prev = &path.steps[k - 1];
        let r = collision::transition_safe(&prev.x, &path.steps[k].x, &prev.covariance()?, &model.w, &sc.env, safety.chi2)?;
        if !r.safe {
            let js: Vec<usize> = r.certificates.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(j, _)| j).collect();
            unsafe_steps.push(format!("k={k} j={js:?}"));
        }
    }
    checks.push(Check {
        name: "transitions".into(),
        passed: unsafe_steps.is_empty(),
        detail: if unsafe_steps.is_empty() {
            format!("{} certified", path.k())
        } else {
            format!("ellipse overlap at {}", unsafe_steps.join(", "))
        },
    });

    let last = path.steps.last().expect("path has steps");
    let final_ok = collision::admissible_final(&last.x, &last.q, &last.s, &sc.env, safety.chi2)?;
    checks.push(Check {
        name: "final_state".into(),
        passed: final_ok,
        detail: if final_ok { "inside target".into() } else { "posterior ellipse leaves the target".into() },
    });

    let kf_residual = smoother::check_kf_tightness(path, &model)?;
    checks.push(Check {
        name: "kf_tightness".into(),
        passed: kf_residual <= KF_TOL,
        detail: format!("residual {kf_residual:.3e} (tol {KF_TOL:e})"),
    });

    let mc_seed = planner::rng_stream(cfg.seed, MONTE_CARLO_STREAM, 0).next_u64();
    let freqs = belief::monte_carlo_marginal_collision(path, &sc.env, &model, cfg.mc_samples, cfg.mc_grid, mc_seed)?;
    let mc_max = freqs.iter().copied().fold(0.0, f64::max);
    let bound = mc_bound(cfg.pr, cfg.mc_samples);
    checks.push(Check {
        name: "monte_carlo".into(),
        passed: mc_max <= bound,
        detail: format!("max frequency {mc_max:.4} (bound {bound:.4}, {} samples)", cfg.mc_samples),
    });
    Ok(ValidationReport { checks, mc_max, mc_bound: bound, kf_residual })
}

/// Scales every posterior and prior covariance by `factor` (information by `1/factor`).
pub fn inflate(path: &BeliefPath, factor: f64) -> Result<BeliefPath> {
    if !(factor > 0.0) {
        return Err(Error::Domain("inflation factor must be positive".into()));
    }
    let mut out = path.clone();
    for s in &mut out.steps {
        s.q /= factor;
        s.s /= factor;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub alpha: f64,
    pub nodes: usize,
    pub k: usize,
    pub plan_ms: f64,
    pub seed_cost: f64,
    pub smoothed_cost: f64,
    pub info_cost: f64,
    pub iters: usize,
    pub smooth_ms: f64,
}

pub fn bench(sc: &Scenario, cfg: &RunConfig, alphas: &[f64]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        let run = RunConfig { alpha, ..cfg.clone() };
        let p = plan(sc, &run)?;
        let t0 = Instant::now();
        let out = smooth(sc, &p.path, &run)?;
        let smooth_ms = t0.elapsed().as_secs_f64() * 1e3;
        let (_, info) = belief::path_cost_parts(&out.path)?;
        rows.push(BenchRow {
            alpha,
            nodes: p.tree.len(),
            k: p.path.k(),
            plan_ms: p.ms,
            seed_cost: p.cost,
            smoothed_cost: out.trace.last().map_or(p.cost, |r| r.cost),
            info_cost: info,
            iters: out.trace.len() - 1,
            smooth_ms,
        });
    }
    Ok(rows)
}
