//! JSON formats for environments, belief paths, certificates and traces.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::belief::{BeliefPath, BeliefState};
use crate::error::{Error, Result};
use crate::geometry::{build_environment, Environment, Polytope};
use crate::linalg;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolytopeJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl PolytopeJson {
    pub fn from_polytope(p: &Polytope) -> Self {
        Self { a: linalg::to_rows(p.a()), b: p.b().iter().copied().collect() }
    }

    pub fn to_polytope(&self, what: &str) -> Result<Polytope> {
        let a = linalg::from_rows(&self.a).map_err(|e| Error::Invalid(format!("{what}: {e}")))?;
        Polytope::new(a, DVector::from_vec(self.b.clone())).map_err(|e| Error::Invalid(format!("{what}: {e}")))
    }
}

/// Environment file. `start` and `p0` are optional extensions describing the
/// initial belief.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnvironmentJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub domain: PolytopeJson,
    #[serde(default)]
    pub obstacles: Vec<PolytopeJson>,
    pub target: PolytopeJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<Vec<f64>>>,
}

/// Parsed environment plus the initial belief.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub env: Environment,
    pub start: DVector<f64>,
    pub p0: DMatrix<f64>,
    pub description: Option<String>,
}

/// Default initial covariance when the file gives none.
pub const DEFAULT_P0: f64 = 1e-4;

fn json_error(e: serde_json::Error) -> Error {
    Error::Invalid(format!("line {}, column {}: {}", e.line(), e.column(), e))
}

pub fn parse_environment(text: &str) -> Result<Scenario> {
    let raw: EnvironmentJson = serde_json::from_str(text).map_err(json_error)?;
    scenario_from_json(&raw)
}

pub fn scenario_from_json(raw: &EnvironmentJson) -> Result<Scenario> {
    let domain = raw.domain.to_polytope("domain")?;
    let obstacles = raw
        .obstacles
        .iter()
        .enumerate()
        .map(|(i, o)| o.to_polytope(&format!("obstacle {i}")))
        .collect::<Result<Vec<_>>>()?;
    let target = raw.target.to_polytope("target")?;
    let env = build_environment(domain, obstacles, target)?;
    let d = env.dim();
    let start = match &raw.start {
        Some(s) => {
            let v = DVector::from_vec(s.clone());
            linalg::check_len(&v, d, "start")?;
            v
        }
        None => {
            let (lo, hi) = env
                .domain
                .bounding_box()
                .ok_or_else(|| Error::Invalid("start missing and domain box unavailable".into()))?;
            lo.clone() + (hi - lo) * 0.1
        }
    };
    let p0 = match &raw.p0 {
        Some(rows) => {
            let m = linalg::from_rows(rows)?;
            linalg::check_square(&m, d, "p0")?;
            linalg::cholesky(&m, "p0")?;
            m
        }
        None => DMatrix::identity(d, d) * DEFAULT_P0,
    };
    if env.in_collision(&start) || !env.domain.contains(&start, 0.0) {
        return Err(Error::Invalid("start lies outside the free space".into()));
    }
    Ok(Scenario { env, start, p0, description: raw.description.clone() })
}

pub fn environment_to_json(s: &Scenario) -> EnvironmentJson {
    EnvironmentJson {
        description: s.description.clone(),
        domain: PolytopeJson::from_polytope(&s.env.domain),
        obstacles: s.env.obstacles.iter().map(PolytopeJson::from_polytope).collect(),
        target: PolytopeJson::from_polytope(&s.env.target),
        start: Some(s.start.iter().copied().collect()),
        p0: Some(linalg::to_rows(&s.p0)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepJson {
    pub x: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PathJson {
    pub alpha: f64,
    pub steps: Vec<StepJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

pub fn path_to_json(path: &BeliefPath, cost: Option<f64>) -> PathJson {
    PathJson {
        alpha: path.alpha,
        steps: path
            .steps
            .iter()
            .map(|s| StepJson { x: s.x.iter().copied().collect(), q: linalg::to_rows(&s.q), s: linalg::to_rows(&s.s) })
            .collect(),
        cost,
    }
}

pub fn path_from_json(raw: &PathJson) -> Result<BeliefPath> {
    let steps = raw
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let q = linalg::from_rows(&s.q).map_err(|e| Error::Invalid(format!("step {k} Q: {e}")))?;
            let sm = linalg::from_rows(&s.s).map_err(|e| Error::Invalid(format!("step {k} S: {e}")))?;
            BeliefState::new(DVector::from_vec(s.x.clone()), q, sm).map_err(|e| Error::Invalid(format!("step {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    BeliefPath::new(raw.alpha, steps)
}

pub fn parse_path(text: &str) -> Result<BeliefPath> {
    let raw: PathJson = serde_json::from_str(text).map_err(json_error)?;
    path_from_json(&raw)
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if n.is_f64() {
        let f = n.as_f64().unwrap_or(f64::NAN);
        if f == 0.0 {
            out.push_str("0.0");
        } else {
            let _ = write!(out, "{f:.16e}");
        }
    } else {
        let _ = write!(out, "{n}");
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn is_flat(v: &Value) -> bool {
    match v {
        Value::Array(a) => a.iter().all(|x| !matches!(x, Value::Array(_) | Value::Object(_))),
        Value::Object(_) => false,
        _ => true,
    }
}

fn write_value(out: &mut String, v: &Value, level: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap_or_default()),
        Value::Array(a) if is_flat(v) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, x, level);
            }
            out.push(']');
        }
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, x, level + 1);
                if i + 1 < a.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(m) => {
            if m.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, x)) in m.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&serde_json::to_string(k).unwrap_or_default());
                out.push_str(": ");
                write_value(out, x, level + 1);
                if i + 1 < m.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push('}');
        }
    }
}

/// Certificate record for one `(k, j)` pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CertificateJson {
    pub k: usize,
    pub j: usize,
    pub lambda: Vec<f64>,
    pub margin: f64,
}

/// One CCP trace row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub cost_control: f64,
    pub cost_info: f64,
    pub viol: f64,
    pub ms: f64,
}

pub const TRACE_HEADER: &str = "iter,cost,cost_control,cost_info,viol,ms";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.6e},{:.3}",
            r.iter, r.cost, r.cost_control, r.cost_info, r.viol, r.ms
        );
    }
    out
}
