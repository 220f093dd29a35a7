//! SVG rendering of planar environments and belief paths.
//!
//! Priors are drawn in blue, posteriors in red where a measurement was taken
//! and in black where the posterior equals the prior.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::belief::BeliefPath;
use crate::error::{Error, Result};
use crate::geometry::{Ellipse, Environment, Polytope};
use crate::linalg;

pub const ELLIPSE_SEGMENTS: usize = 64;

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Width of the drawing in pixels; the height follows the domain's aspect.
    pub width: f64,
    pub margin: f64,
    /// Ellipse level, `chi2(pr)`.
    pub chi2: f64,
    pub title: Option<String>,
}

impl RenderOptions {
    pub fn new(chi2: f64) -> Self {
        Self { width: 640.0, margin: 16.0, chi2, title: None }
    }
}

struct Frame {
    lo: [f64; 2],
    scale: f64,
    height: f64,
    margin: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.margin + (x - self.lo[0]) * self.scale;
        let py = self.height - self.margin - (y - self.lo[1]) * self.scale;
        (px, py)
    }

    fn points(&self, pts: &[(f64, f64)]) -> String {
        let mut s = String::new();
        for (i, &(x, y)) in pts.iter().enumerate() {
            let (px, py) = self.map(x, y);
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{px:.3},{py:.3}");
        }
        s
    }
}

/// Vertices of a bounded planar polytope in counter-clockwise order.
pub fn polygon(p: &Polytope) -> Vec<(f64, f64)> {
    let vs = p.vertices();
    if vs.is_empty() {
        return vec![];
    }
    let n = vs.len() as f64;
    let cx = vs.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = vs.iter().map(|v| v[1]).sum::<f64>() / n;
    let mut pts: Vec<(f64, f64)> = vs.iter().map(|v| (v[0], v[1])).collect();
    pts.sort_by(|a, b| (a.1 - cy).atan2(a.0 - cx).total_cmp(&(b.1 - cy).atan2(b.0 - cx)));
    pts
}

fn ellipse_points(x: &DVector<f64>, cov: &DMatrix<f64>, chi2: f64) -> Result<Vec<(f64, f64)>> {
    Ok(Ellipse::new(x.clone(), linalg::symmetrize(cov), chi2)?.boundary_polygon(ELLIPSE_SEGMENTS))
}

/// Renders the environment and, when given, the path's mean polyline with
/// prior and posterior ellipses for every step after the first.
pub fn render_svg(env: &Environment, path: Option<&BeliefPath>, opts: &RenderOptions) -> Result<String> {
    if env.dim() != 2 {
        return Err(Error::Domain("rendering needs a planar environment".into()));
    }
    let (lo, hi) = env.domain.bounding_box().ok_or_else(|| Error::Domain("domain is unbounded".into()))?;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if !(span > 0.0) {
        return Err(Error::Domain("domain has no extent".into()));
    }
    let inner = opts.width - 2.0 * opts.margin;
    let scale = inner / (hi[0] - lo[0]).max(span * 1e-6);
    let height = (hi[1] - lo[1]) * scale + 2.0 * opts.margin;
    let frame = Frame { lo: [lo[0], lo[1]], scale, height, margin: opts.margin };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{height:.0}" viewBox="0 0 {w:.3} {height:.3}">"#,
        w = opts.width
    );
    if let Some(t) = &opts.title {
        let _ = writeln!(svg, "<title>{}</title>", escape(t));
    }
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r##"<polygon class="domain" points="{}" fill="none" stroke="#000000" stroke-width="1.5"/>"##,
        frame.points(&polygon(&env.domain))
    );
    let _ = writeln!(
        svg,
        r##"<polygon class="target" points="{}" fill="#b8e6b8" stroke="#2e7d32" stroke-width="1"/>"##,
        frame.points(&polygon(&env.target))
    );
    for o in &env.obstacles {
        let _ = writeln!(
            svg,
            r##"<polygon class="obstacle" points="{}" fill="#808080" stroke="#404040" stroke-width="1"/>"##,
            frame.points(&polygon(o))
        );
    }
    if let Some(path) = path {
        let means: Vec<(f64, f64)> = path.steps.iter().map(|s| (s.x[0], s.x[1])).collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="mean" points="{}" fill="none" stroke="#000000" stroke-width="1"/>"##,
            frame.points(&means)
        );
        for step in path.steps.iter().skip(1) {
            let prior = step.prior_covariance()?;
            let post = step.covariance()?;
            let _ = writeln!(
                svg,
                r##"<polygon class="prior" points="{}" fill="none" stroke="#1f4fd1" stroke-width="1"/>"##,
                frame.points(&ellipse_points(&step.x, &prior, opts.chi2)?)
            );
            let colour = if step.s.amax() > 0.0 { "#d11f1f" } else { "#000000" };
            let _ = writeln!(
                svg,
                r##"<polygon class="posterior" points="{}" fill="none" stroke="{colour}" stroke-width="1"/>"##,
                frame.points(&ellipse_points(&step.x, &post, opts.chi2)?)
            );
        }
        for &(x, y) in &means {
            let (px, py) = frame.map(x, y);
            let _ = writeln!(svg, r##"<circle class="node" cx="{px:.3}" cy="{py:.3}" r="2" fill="#000000"/>"##);
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
