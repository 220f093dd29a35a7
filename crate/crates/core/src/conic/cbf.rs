//! Export to the Conic Benchmark Format (version 3) for offline cross-checks.
//!
//! Squares are lowered to rotated cones over epigraph variables and
//! `-log det G` terms to the usual PSD + exponential-cone epigraph:
//! `[[G, Z], [Z^T, diag(Z)]] >= 0` with `Z` lower triangular and
//! `(Z_ii, 1, t_i)` in the exponential cone, minimizing `-sum t_i`.

use std::fmt::Write as _;

use super::{Affine, ConicProblem, Constraint};

struct Rows {
    cones: Vec<(&'static str, usize)>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<(usize, f64)>,
    next: usize,
}

impl Rows {
    fn push(&mut self, e: &Affine) {
        let mut e = e.clone();
        e.compact();
        for &(i, c) in &e.terms {
            self.a.push((self.next, i, c));
        }
        if e.constant != 0.0 {
            self.b.push((self.next, e.constant));
        }
        self.next += 1;
    }

    fn cone(&mut self, kind: &'static str, exprs: &[Affine]) {
        for e in exprs {
            self.push(e);
        }
        match self.cones.last_mut() {
            Some((k, n)) if *k == kind && kind != "Q" && kind != "EXP" => *n += exprs.len(),
            _ => self.cones.push((kind, exprs.len())),
        }
    }
}

/// PSD constraint data: `(size, entries)` with entries `(i, j, expr)`, `i >= j`.
type PsdCon = (usize, Vec<(usize, usize, Affine)>);

/// Serializes the problem to a CBF string.
pub fn write_cbf(p: &ConicProblem) -> String {
    let (obj, squares, logdets, constraints) = p.parts();
    let mut nvar = p.num_scalars();
    let mut rows = Rows { cones: Vec::new(), a: Vec::new(), b: Vec::new(), next: 0 };
    let mut psd: Vec<PsdCon> = Vec::new();
    let mut objective = obj.clone();

    for con in constraints {
        match con {
            Constraint::Zero(e) => rows.cone("L=", std::slice::from_ref(e)),
            Constraint::NonNeg(e) => rows.cone("L+", std::slice::from_ref(e)),
            Constraint::Soc(v) => rows.cone("Q", v),
            Constraint::Psd(e) => {
                let n = e.dim();
                let entries = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| (i, j, e.get(i, j).clone())).collect();
                psd.push((n, entries));
            }
        }
    }
    for (w, e) in squares {
        let tau = nvar;
        nvar += 1;
        let mut hi = Affine::var(tau).scaled(0.5);
        hi.add_constant(0.5);
        let mut lo = Affine::var(tau).scaled(0.5);
        lo.add_constant(-0.5);
        rows.cone("Q", &[hi, lo, e.clone()]);
        objective.add_term(tau, *w);
    }
    for (w, g) in logdets {
        let m = g.dim();
        let z0 = nvar;
        nvar += m * (m + 1) / 2;
        let t0 = nvar;
        nvar += m;
        let zpos = |i: usize, j: usize| z0 + i * (i + 1) / 2 + j;
        let mut entries = Vec::new();
        for i in 0..2 * m {
            for j in 0..=i {
                let e = if i < m {
                    g.get(i, j).clone()
                } else if j < m {
                    // block (Z^T)_{i-m, j} = Z_{j, i-m}, nonzero when j >= i-m
                    let (r, c) = (j, i - m);
                    if r >= c {
                        Affine::var(zpos(r, c))
                    } else {
                        Affine::default()
                    }
                } else if i == j {
                    Affine::var(zpos(i - m, i - m))
                } else {
                    Affine::default()
                };
                entries.push((i, j, e));
            }
        }
        psd.push((2 * m, entries));
        for i in 0..m {
            rows.cone("EXP", &[Affine::var(zpos(i, i)), Affine::constant(1.0), Affine::var(t0 + i)]);
            objective.add_term(t0 + i, -w);
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n{nvar} 1\nF {nvar}\n");
    if !psd.is_empty() {
        let _ = writeln!(s, "PSDCON\n{}", psd.len());
        for (n, _) in &psd {
            let _ = writeln!(s, "{n}");
        }
        s.push('\n');
    }
    if rows.next > 0 {
        let _ = writeln!(s, "CON\n{} {}", rows.next, rows.cones.len());
        for (k, n) in &rows.cones {
            let _ = writeln!(s, "{k} {n}");
        }
        s.push('\n');
    }
    objective.compact();
    if !objective.terms.is_empty() {
        let _ = writeln!(s, "OBJACOORD\n{}", objective.terms.len());
        for (i, c) in &objective.terms {
            let _ = writeln!(s, "{i} {c:e}");
        }
        s.push('\n');
    }
    if objective.constant != 0.0 {
        let _ = writeln!(s, "OBJBCOORD\n{:e}\n", objective.constant);
    }
    if !rows.a.is_empty() {
        let _ = writeln!(s, "ACOORD\n{}", rows.a.len());
        for (r, i, c) in &rows.a {
            let _ = writeln!(s, "{r} {i} {c:e}");
        }
        s.push('\n');
    }
    if !rows.b.is_empty() {
        let _ = writeln!(s, "BCOORD\n{}", rows.b.len());
        for (r, c) in &rows.b {
            let _ = writeln!(s, "{r} {c:e}");
        }
        s.push('\n');
    }
    let mut h = Vec::new();
    let mut d = Vec::new();
    for (k, (_, entries)) in psd.iter().enumerate() {
        for (i, j, e) in entries {
            let mut e = e.clone();
            e.compact();
            for &(v, c) in &e.terms {
                h.push(format!("{k} {v} {i} {j} {c:e}"));
            }
            if e.constant != 0.0 {
                d.push(format!("{k} {i} {j} {:e}", e.constant));
            }
        }
    }
    if !h.is_empty() {
        let _ = writeln!(s, "HCOORD\n{}\n{}\n", h.len(), h.join("\n"));
    }
    if !d.is_empty() {
        let _ = writeln!(s, "DCOORD\n{}\n{}\n", d.len(), d.join("\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::SymExpr;
    use nalgebra::DMatrix;

    #[test]
    fn cbf_lists_every_cone() {
        let mut p = ConicProblem::new();
        let x = p.symmetric("X", 2);
        let y = p.scalar("y");
        p.add_nonneg(p.var(y));
        p.add_psd_constraint(p.sym_expr(x)).unwrap();
        p.add_objective_square(2.0, p.var(y));
        p.add_objective_neg_logdet(1.0, p.sym_expr(x).plus(&SymExpr::from_constant(&DMatrix::identity(2, 2)).unwrap()).unwrap());
        let s = write_cbf(&p);
        assert!(s.starts_with("VER\n3"));
        assert!(s.contains("PSDCON\n2\n2\n4"));
        assert!(s.contains("L+ 1"));
        assert!(s.contains("Q 3"));
        assert!(s.contains("EXP 3"));
        // 4 original + 1 square epigraph + 3 Z entries + 2 t
        assert!(s.contains("VAR\n10 1"));
    }
}
