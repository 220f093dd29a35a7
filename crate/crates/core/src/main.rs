//! Command-line front end.
//!
//! Exit codes: 0 success, 1 malformed input or numerical failure, 2 no
//! admissible path, 3 multiplier initialization infeasible, 4 validation
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use minsense::belief::BeliefPath;
use minsense::io::{self, Scenario};
use minsense::pipeline::{self, RunConfig};
use minsense::render::{render_svg, RenderOptions};
use minsense::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_NO_SOLUTION: u8 = 2;
const EXIT_INIT_INFEASIBLE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "minsense", version, about = "Minimum-sensing belief-space planning and path smoothing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow a belief tree and extract a seed path.
    Plan(PlanArgs),
    /// Smooth a seed path with the convex-concave procedure.
    Smooth(SmoothArgs),
    /// Re-certify a path and estimate its collision frequency.
    Validate(ValidateArgs),
    /// Draw an environment and optionally a path as SVG.
    Render(RenderArgs),
    /// Plan and smooth for alpha in {0.1, 1.0} and report timings.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Environment JSON file, or `analog` for the bundled analogue environment.
    #[arg(long)]
    env: String,
    /// Confidence level of the chance constraints.
    #[arg(long, default_value_t = 0.9)]
    pr: f64,
    /// Process noise scale, `W = w I`.
    #[arg(long, default_value_t = 0.2e-3)]
    w: f64,
    /// Root seed; planner and Monte Carlo draw from named sub-streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 500)]
    nodes: usize,
    /// Number of transitions of the extracted path (default: the tree chain).
    #[arg(long)]
    k: Option<usize>,
    /// Output directory for path.json and tree.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SmoothArgs {
    #[command(flatten)]
    common: Common,
    /// Seed path JSON.
    #[arg(long)]
    path: PathBuf,
    /// Information weight (default: the one stored in the path).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 15)]
    iters: usize,
    /// Output directory for smoothed.json, trace.csv, certificates.json and SVGs.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    path: Option<PathBuf>,
    /// Output SVG file.
    #[arg(long, default_value = "render.svg")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 500)]
    nodes: usize,
    #[arg(long, default_value_t = 15)]
    iters: usize,
    /// Optional directory for bench.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Io(String),
    Validation(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Lib(Error::NoSolution(_)) => EXIT_NO_SOLUTION,
            Failure::Lib(Error::InitInfeasible { .. }) => EXIT_INIT_INFEASIBLE,
            Failure::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_INPUT,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Lib(e) => e.to_string(),
            Failure::Io(m) => m.clone(),
            Failure::Validation(names) => format!("validation failed: {}", names.join(", ")),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_env(spec: &str) -> CliResult<Scenario> {
    let text = if spec == "analog" { pipeline::ANALOG_ENV.to_string() } else { read(Path::new(spec))? };
    io::parse_environment(&text).map_err(|e| Failure::Io(format!("{spec}: {e}")))
}

fn load_path(path: &Path) -> CliResult<BeliefPath> {
    io::parse_path(&read(path)?).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn config(c: &Common) -> RunConfig {
    RunConfig { pr: c.pr, w_scale: c.w, seed: c.seed, ..RunConfig::default() }
}

fn svg(sc: &Scenario, path: Option<&BeliefPath>, cfg: &RunConfig, title: &str) -> CliResult<String> {
    let mut opts = RenderOptions::new(cfg.safety(sc.env.dim())?.chi2);
    opts.title = Some(title.into());
    Ok(render_svg(&sc.env, path, &opts)?)
}

fn cmd_plan(a: &PlanArgs) -> CliResult<()> {
    let sc = load_env(&a.common.env)?;
    let cfg = RunConfig { alpha: a.alpha, n_nodes: a.nodes, k: a.k, ..config(&a.common) };
    let out = pipeline::plan(&sc, &cfg)?;
    write(&a.out.join("path.json"), &io::to_json_string(&io::path_to_json(&out.path, Some(out.cost)))?)?;
    write(&a.out.join("tree.json"), &io::to_json_string(&out.tree.dump())?)?;
    println!("nodes {} transitions {} cost {:.9} ({:.0} ms)", out.tree.len(), out.path.k(), out.cost, out.ms);
    Ok(())
}

fn cmd_smooth(a: &SmoothArgs) -> CliResult<()> {
    let sc = load_env(&a.common.env)?;
    let seed = load_path(&a.path)?;
    let cfg = RunConfig { alpha: a.alpha.unwrap_or(seed.alpha), max_iters: a.iters, ..config(&a.common) };
    let out = pipeline::smooth(&sc, &seed, &cfg)?;
    let cost = out.trace.last().map(|r| r.cost);
    write(&a.out.join("smoothed.json"), &io::to_json_string(&io::path_to_json(&out.path, cost))?)?;
    write(&a.out.join("trace.csv"), &io::trace_csv(&out.trace))?;
    write(&a.out.join("certificates.json"), &io::to_json_string(&pipeline::certificates_json(&out))?)?;
    write(&a.out.join("before.svg"), &svg(&sc, Some(&seed), &cfg, "seed path")?)?;
    write(&a.out.join("after.svg"), &svg(&sc, Some(&out.path), &cfg, "smoothed path")?)?;
    for r in &out.trace {
        println!("iter {:>3} cost {:.9} viol {:.2e} ({:.0} ms)", r.iter, r.cost, r.viol, r.ms);
    }
    if out.stalled {
        println!("stopped early: the subproblem made no further progress");
    }
    println!("filter residual {:.3e}", out.kf_residual);
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> CliResult<()> {
    let sc = load_env(&a.common.env)?;
    let path = load_path(&a.path)?;
    let cfg = RunConfig { mc_samples: a.samples, ..config(&a.common) };
    let report = pipeline::validate(&sc, &path, &cfg)?;
    print!("{}", report.table());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation(report.failed().into_iter().map(String::from).collect()))
    }
}

fn cmd_render(a: &RenderArgs) -> CliResult<()> {
    let sc = load_env(&a.common.env)?;
    let path = a.path.as_deref().map(load_path).transpose()?;
    let title = a.path.as_ref().map_or("environment".to_string(), |p| p.display().to_string());
    write(&a.out, &svg(&sc, path.as_ref(), &config(&a.common), &title)?)
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let sc = load_env(&a.common.env)?;
    let cfg = RunConfig { n_nodes: a.nodes, max_iters: a.iters, ..config(&a.common) };
    let rows = pipeline::bench(&sc, &cfg, &[0.1, 1.0])?;
    let mut csv = String::from("alpha,nodes,k,plan_ms,seed_cost,smoothed_cost,info_cost,iters,smooth_ms\n");
    println!("alpha  nodes  K   plan_ms  seed_cost    smoothed     info        iters  smooth_ms");
    for r in &rows {
        println!(
            "{:<6} {:<6} {:<3} {:<8.0} {:<12.6} {:<12.6} {:<11.6} {:<6} {:.0}",
            r.alpha, r.nodes, r.k, r.plan_ms, r.seed_cost, r.smoothed_cost, r.info_cost, r.iters, r.smooth_ms
        );
        csv.push_str(&format!(
            "{},{},{},{:.3},{:.12e},{:.12e},{:.12e},{},{:.3}\n",
            r.alpha, r.nodes, r.k, r.plan_ms, r.seed_cost, r.smoothed_cost, r.info_cost, r.iters, r.smooth_ms
        ));
    }
    if let Some(dir) = &a.out {
        write(&dir.join("bench.csv"), &csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Smooth(a) => cmd_smooth(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
