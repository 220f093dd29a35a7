//! Sparse symmetric LDL^T with a fixed sparsity pattern.
//!
//! Nodes carry an expected pivot sign (+1 for primal unknowns, -1 for
//! equality multipliers). Pivots of the wrong sign or tiny magnitude are
//! replaced by a small regularization, and every solve is followed by a few
//! rounds of iterative refinement against the unregularized matrix.

use std::collections::BTreeSet;

/// Quasi-definite shifts added to primal and dual pivots before elimination.
const STATIC_REG_PRIMAL: f64 = 1e-9;
const STATIC_REG_DUAL: f64 = 1e-13;

pub(crate) struct SparseLdl {
    n: usize,
    /// `perm[k]` is the original node eliminated at step `k`.
    perm: Vec<usize>,
    iperm: Vec<usize>,
    sign: Vec<f64>,
    /// Strictly lower structure of column `k` in permuted indices, sorted.
    col_rows: Vec<Vec<usize>>,
    col_start: Vec<usize>,
    /// Target slots of the rank-one updates issued by each column.
    updates: Vec<Vec<usize>>,
    /// Assembled matrix: `n` diagonal slots, then off-diagonal slots.
    a: Vec<f64>,
    work: Vec<f64>,
    diag: Vec<f64>,
    /// Diagonal scaling per permuted position.
    scale: Vec<f64>,
}

impl SparseLdl {
    /// `cliques` lists sets of nodes that are mutually coupled; `sign[i]`
    /// is the expected pivot sign of node `i`. Nodes with negative sign are
    /// eliminated after all positive ones.
    pub fn new(n: usize, cliques: &[Vec<usize>], sign: Vec<f64>) -> Self {
        assert_eq!(sign.len(), n);
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for c in cliques {
            for (ia, &a) in c.iter().enumerate() {
                for &b in &c[ia + 1..] {
                    if a != b {
                        adj[a].insert(b);
                        adj[b].insert(a);
                    }
                }
            }
        }

        // Minimum-degree ordering on the explicit elimination graph.
        let mut eliminated = vec![false; n];
        let mut perm = Vec::with_capacity(n);
        let mut structs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for phase_sign in [1.0, -1.0] {
            loop {
                let mut best: Option<(usize, usize)> = None;
                for v in 0..n {
                    if eliminated[v] || (sign[v] > 0.0) != (phase_sign > 0.0) {
                        continue;
                    }
                    let d = adj[v].len();
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, v));
                    }
                }
                let Some((_, p)) = best else { break };
                eliminated[p] = true;
                perm.push(p);
                let nbrs: Vec<usize> = adj[p].iter().copied().collect();
                for &u in &nbrs {
                    adj[u].remove(&p);
                }
                for (i, &u) in nbrs.iter().enumerate() {
                    for &v in &nbrs[i + 1..] {
                        adj[u].insert(v);
                        adj[v].insert(u);
                    }
                }
                structs[p] = nbrs;
                adj[p].clear();
            }
        }
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            let mut rows: Vec<usize> = structs[perm[k]].iter().map(|&v| iperm[v]).collect();
            rows.sort_unstable();
            debug_assert!(rows.iter().all(|&r| r > k));
            col_rows[k] = rows;
        }
        let mut col_start = vec![0; n + 1];
        for k in 0..n {
            col_start[k + 1] = col_start[k] + col_rows[k].len();
        }
        let nnz_off = col_start[n];

        let mut updates = vec![Vec::new(); n];
        for k in 0..n {
            let rows = &col_rows[k];
            let mut ups = Vec::with_capacity(rows.len() * (rows.len() + 1) / 2);
            for (ia, &ra) in rows.iter().enumerate() {
                ups.push(ra);
                for &rb in &rows[ia + 1..] {
                    let p = col_rows[ra].binary_search(&rb).expect("elimination graph closed");
                    ups.push(n + col_start[ra] + p);
                }
            }
            updates[k] = ups;
        }

        Self {
            n,
            perm,
            iperm,
            sign,
            col_rows,
            col_start,
            updates,
            a: vec![0.0; n + nnz_off],
            work: vec![0.0; n + nnz_off],
            diag: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Storage slot of entry `(i, j)` in original indices.
    pub fn slot(&self, i: usize, j: usize) -> usize {
        let (pi, pj) = (self.iperm[i], self.iperm[j]);
        if pi == pj {
            return pi;
        }
        let (r, c) = if pi > pj { (pi, pj) } else { (pj, pi) };
        let p = self.col_rows[c]
            .binary_search(&r)
            .unwrap_or_else(|_| panic!("entry ({i}, {j}) outside the declared pattern"));
        self.n + self.col_start[c] + p
    }

    pub fn clear(&mut self) {
        self.a.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add(&mut self, slot: usize, v: f64) {
        self.a[slot] += v;
    }

    /// Numeric factorization; pivots below `reg` times the node's own
    /// diagonal magnitude are regularized.
    pub fn factor(&mut self, reg: f64) {
        let n = self.n;
        // Symmetric diagonal scaling: unit diagonal where there is one, unit
        // largest coupling for nodes with an empty diagonal.
        for k in 0..n {
            let d = self.a[k].abs();
            self.scale[k] = if d > 0.0 && d.is_finite() { 1.0 / d.sqrt() } else { 0.0 };
        }
        let mut couple = vec![0.0f64; n];
        for c in 0..n {
            let base = n + self.col_start[c];
            for (p, &r) in self.col_rows[c].iter().enumerate() {
                let v = self.a[base + p].abs();
                if self.scale[c] > 0.0 {
                    couple[r] = couple[r].max(v * self.scale[c]);
                }
                if self.scale[r] > 0.0 {
                    couple[c] = couple[c].max(v * self.scale[r]);
                }
            }
        }
        for k in 0..n {
            if self.scale[k] == 0.0 {
                self.scale[k] = if couple[k] > 0.0 { 1.0 / couple[k] } else { 1.0 };
            }
        }
        for k in 0..n {
            self.work[k] = self.a[k] * self.scale[k] * self.scale[k];
        }
        for c in 0..n {
            let base = n + self.col_start[c];
            for (p, &r) in self.col_rows[c].iter().enumerate() {
                self.work[base + p] = self.a[base + p] * self.scale[c] * self.scale[r];
            }
        }
        for k in 0..n {
            let s = self.sign[self.perm[k]];
            self.work[k] += if s > 0.0 { STATIC_REG_PRIMAL } else { -STATIC_REG_DUAL };
        }
        for k in 0..n {
            let s = self.sign[self.perm[k]];
            let delta = reg * (self.a[k] * self.scale[k] * self.scale[k]).abs().max(1.0);
            let mut d = self.work[k];
            if !(s * d > delta) {
                d = s * delta.max(f64::MIN_POSITIVE);
            }
            self.diag[k] = d;
            let base = n + self.col_start[k];
            let len = self.col_rows[k].len();
            for p in 0..len {
                self.work[base + p] /= d;
            }
            let ups = &self.updates[k];
            let mut u = 0;
            for ia in 0..len {
                let la = self.work[base + ia];
                let lad = la * d;
                self.work[ups[u]] -= la * lad;
                u += 1;
                for ib in ia + 1..len {
                    let lb = self.work[base + ib];
                    self.work[ups[u]] -= lb * lad;
                    u += 1;
                }
            }
        }
    }

    fn solve_factored(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = (0..n).map(|k| b[self.perm[k]] * self.scale[k]).collect();
        for k in 0..n {
            let yk = y[k];
            if yk != 0.0 {
                let base = n + self.col_start[k];
                for (p, &r) in self.col_rows[k].iter().enumerate() {
                    y[r] -= self.work[base + p] * yk;
                }
            }
        }
        for k in 0..n {
            y[k] /= self.diag[k];
        }
        for k in (0..n).rev() {
            let base = n + self.col_start[k];
            let mut acc = y[k];
            for (p, &r) in self.col_rows[k].iter().enumerate() {
                acc -= self.work[base + p] * y[r];
            }
            y[k] = acc;
        }
        for k in 0..n {
            x[self.perm[k]] = y[k] * self.scale[k];
        }
    }

    /// `A x` with the assembled (unregularized) matrix.
    pub fn multiply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let px: Vec<f64> = (0..n).map(|k| x[self.perm[k]]).collect();
        let mut py: Vec<f64> = (0..n).map(|k| self.a[k] * px[k]).collect();
        for c in 0..n {
            let base = n + self.col_start[c];
            for (p, &r) in self.col_rows[c].iter().enumerate() {
                let v = self.a[base + p];
                py[r] += v * px[c];
                py[c] += v * px[r];
            }
        }
        for k in 0..n {
            out[self.perm[k]] = py[k];
        }
    }

    /// Solves `A x = b` using the last factorization plus refinement.
    pub fn solve(&self, b: &[f64], refine: usize) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        self.solve_factored(b, &mut x);
        let mut r = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let mut best = x.clone();
        let mut best_norm = f64::INFINITY;
        for _ in 0..=refine {
            self.multiply(&x, &mut r);
            let mut rnorm: f64 = 0.0;
            for i in 0..n {
                r[i] = b[i] - r[i];
                rnorm = rnorm.max(r[i].abs());
            }
            if !(rnorm < best_norm) {
                break;
            }
            best_norm = rnorm;
            best.copy_from_slice(&x);
            if rnorm == 0.0 {
                break;
            }
            self.solve_factored(&r, &mut dx);
            for i in 0..n {
                x[i] += dx[i];
            }
        }
        x = best;
        x
    }
}
