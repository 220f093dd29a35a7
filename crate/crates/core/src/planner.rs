//! IG-RRT*: a tree of belief nodes grown under the steering-cost pseudo-metric.
//!
//! Each node keeps a fixed posterior covariance once created. An edge
//! `parent -> child` is admissible when the transition is certified and the
//! propagated prior `P_parent + W` dominates the child's posterior, so that
//! `S = P_child^-1 - (P_parent + W)^-1` is a valid measurement. Rewiring
//! therefore never changes a node's posterior and leaves its subtree valid.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{self, BeliefPath, BeliefState, ProcessModel};
use crate::collision::{self, SafetyConfig};
use crate::error::{Error, Result};
use crate::geometry::{Environment, Polytope};
use crate::linalg;

/// Sub-stream id of planner sampling.
pub const PLANNER_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub n_nodes: usize,
    /// Steering radius.
    pub ed_min: f64,
    /// Neighbor radius on the control part of the steering cost, in meters.
    pub ig_min: f64,
    pub seed: u64,
    pub goal_bias: f64,
    /// At most this many nearest nodes inside the radius are considered.
    pub max_neighbors: usize,
    /// Cap on the isotropic measurement intensity.
    pub s_max: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { n_nodes: 500, ed_min: 0.1, ig_min: 0.3, seed: 0, goal_bias: 0.05, max_neighbors: 24, s_max: 1e4 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::Domain("n_nodes must be at least 2".into()));
        }
        if !(self.ed_min > 0.0) {
            return Err(Error::Domain("ed_min must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(Error::Domain("goal_bias must lie in [0, 1]".into()));
        }
        if !(self.s_max > 0.0) || self.max_neighbors == 0 || !(self.ig_min >= 0.0) {
            return Err(Error::Domain("s_max, max_neighbors and ig_min must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: usize,
    pub state: BeliefState,
    pub parent: Option<usize>,
    pub cost_from_root: f64,
    pub edge_cost: f64,
    pub children: Vec<usize>,
    /// Posterior covariance `(Q + S)^-1`, fixed for the node's lifetime.
    pub posterior: DMatrix<f64>,
}

/// Everything an edge evaluation needs besides the tree.
#[derive(Debug, Clone, Copy)]
pub struct SteerContext<'a> {
    pub env: &'a Environment,
    pub model: &'a ProcessModel,
    pub safety: &'a SafetyConfig,
    pub alpha: f64,
    pub s_max: f64,
}

#[derive(Debug, Clone)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Transition verdicts keyed by `(from, to)` node ids.
    cache: HashMap<(usize, usize), bool>,
}

impl Tree {
    pub fn new(root: BeliefState) -> Result<Self> {
        let posterior = root.covariance()?;
        let node = TreeNode { id: 0, state: root, parent: None, cost_from_root: 0.0, edge_cost: 0.0, children: vec![], posterior };
        Ok(Self { nodes: vec![node], cache: HashMap::new() })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    fn push(&mut self, parent: usize, state: BeliefState, posterior: DMatrix<f64>, edge_cost: f64) -> usize {
        let id = self.nodes.len();
        let cost_from_root = self.nodes[parent].cost_from_root + edge_cost;
        self.nodes.push(TreeNode { id, state, parent: Some(parent), cost_from_root, edge_cost, children: vec![], posterior });
        self.nodes[parent].children.push(id);
        id
    }

    fn reparent(&mut self, node: usize, new_parent: usize, state: BeliefState, edge_cost: f64) {
        if let Some(old) = self.nodes[node].parent {
            self.nodes[old].children.retain(|&c| c != node);
        }
        self.nodes[new_parent].children.push(node);
        let n = &mut self.nodes[node];
        n.parent = Some(new_parent);
        n.state = state;
        n.edge_cost = edge_cost;
        let base = self.nodes[new_parent].cost_from_root;
        self.refresh_costs(node, base + edge_cost);
    }

    fn refresh_costs(&mut self, node: usize, cost: f64) {
        let mut stack = vec![(node, cost)];
        while let Some((n, c)) = stack.pop() {
            self.nodes[n].cost_from_root = c;
            for &ch in &self.nodes[n].children {
                stack.push((ch, c + self.nodes[ch].edge_cost));
            }
        }
    }

    /// Largest gap between stored costs-from-root and the sum of edge costs
    /// along each chain.
    pub fn cost_consistency(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for n in &self.nodes {
            let mut c = 0.0;
            let mut cur = n.id;
            let mut hops = 0;
            while let Some(p) = self.nodes[cur].parent {
                c += self.nodes[cur].edge_cost;
                cur = p;
                hops += 1;
                if hops > self.nodes.len() {
                    return Err(Error::Invalid("cycle in tree".into()));
                }
            }
            worst = worst.max((c - n.cost_from_root).abs());
        }
        Ok(worst)
    }

    /// Recomputes every edge cost from the stored beliefs and compares with the stored ones.
    pub fn edge_cost_consistency(&self, alpha: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for n in self.nodes.iter().skip(1) {
            let p = n.parent.ok_or_else(|| Error::Invalid(format!("node {} has no parent", n.id)))?;
            let c = belief::step_cost(&self.nodes[p].state.x, &n.state.x, &n.state.q, &n.state.s, alpha)?;
            worst = worst.max((c - n.edge_cost).abs());
        }
        Ok(worst)
    }

    /// Every non-root node has exactly one parent, appears in its parent's
    /// child list once, and reaches the root.
    pub fn is_tree(&self) -> bool {
        if self.nodes.is_empty() || self.nodes[0].parent.is_some() {
            return false;
        }
        for n in self.nodes.iter().skip(1) {
            let Some(p) = n.parent else { return false };
            if self.nodes[p].children.iter().filter(|&&c| c == n.id).count() != 1 {
                return false;
            }
            let mut cur = n.id;
            let mut hops = 0;
            while let Some(q) = self.nodes[cur].parent {
                cur = q;
                hops += 1;
                if hops > self.nodes.len() {
                    return false;
                }
            }
        }
        let child_total: usize = self.nodes.iter().map(|n| n.children.len()).sum();
        child_total == self.nodes.len() - 1
    }

    /// Node ids from the root to `id`.
    pub fn chain(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    fn transition_ok(&mut self, from: usize, to: usize, ctx: &SteerContext<'_>) -> Result<bool> {
        if let Some(&v) = self.cache.get(&(from, to)) {
            return Ok(v);
        }
        let v = collision::transition_is_safe(
            &self.nodes[from].state.x,
            &self.nodes[to].state.x,
            &self.nodes[from].posterior,
            &ctx.model.w,
            ctx.env,
            ctx.safety.chi2,
        )?;
        self.cache.insert((from, to), v);
        Ok(v)
    }

    /// JSON edge list for visualization.
    pub fn dump(&self) -> TreeDump {
        TreeDump {
            nodes: self
                .nodes
                .iter()
                .map(|n| DumpNode { id: n.id, x: n.state.x.iter().copied().collect(), parent: n.parent, cost: n.cost_from_root })
                .collect(),
            edges: self.nodes.iter().filter_map(|n| n.parent.map(|p| [p, n.id])).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: usize,
    pub x: Vec<f64>,
    pub parent: Option<usize>,
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeDump {
    pub nodes: Vec<DumpNode>,
    pub edges: Vec<[usize; 2]>,
}

/// ChaCha8 stream for `(seed, component, index)`.
pub fn rng_stream(seed: u64, component: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ component.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

fn sampling_box(p: &Polytope) -> Result<(DVector<f64>, DVector<f64>)> {
    if let Some(b) = p.bounding_box() {
        return Ok(b);
    }
    let d = p.dim();
    let mut lo = DVector::zeros(d);
    let mut hi = DVector::zeros(d);
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        hi[i] = p.support(&e).ok_or_else(|| Error::Domain("unbounded sampling region".into()))?;
        lo[i] = -p.support(&-e).ok_or_else(|| Error::Domain("unbounded sampling region".into()))?;
    }
    Ok((lo, hi))
}

fn sample_in(p: &Polytope, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let (lo, hi) = sampling_box(p)?;
    let scale = hi.amax().max(lo.amax()).max(1.0);
    for _ in 0..100_000 {
        let x = DVector::from_fn(lo.len(), |i, _| {
            if hi[i] > lo[i] {
                rng.random_range(lo[i]..hi[i])
            } else {
                lo[i]
            }
        });
        if p.contains(&x, 1e-12 * scale) {
            return Ok(x);
        }
    }
    Err(Error::Domain("rejection sampling found no point in the region".into()))
}

/// Uniform domain sample, replaced by a target sample with probability `goal_bias`.
pub fn generate(config: &PlannerConfig, env: &Environment, rng: &mut impl Rng) -> Result<DVector<f64>> {
    let goal = config.goal_bias > 0.0 && rng.random::<f64>() < config.goal_bias;
    if goal {
        sample_in(&env.target, rng)
    } else {
        sample_in(&env.domain, rng)
    }
}

/// Closest node mean in Euclidean distance, lowest id on ties.
pub fn nearest(tree: &Tree, x: &DVector<f64>) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for n in &tree.nodes {
        let d = (&n.state.x - x).norm_squared();
        if d < best.0 {
            best = (d, n.id);
        }
    }
    best.1
}

pub fn scale(x_near: &DVector<f64>, x_sample: &DVector<f64>, ed_min: f64) -> DVector<f64> {
    let delta = x_sample - x_near;
    let n = delta.norm();
    if n <= ed_min {
        x_sample.clone()
    } else {
        x_near + delta * (ed_min / n)
    }
}

/// Smallest `s in [0, s_max]` with `ok((Q + s I)^-1)`, assuming `ok` is
/// monotone in `s`. Returns the feasible end of the final bracket.
pub fn min_isotropic_s(
    q: &DMatrix<f64>,
    s_max: f64,
    mut ok: impl FnMut(&DMatrix<f64>) -> Result<bool>,
) -> Result<Option<f64>> {
    let d = q.nrows();
    let post = |s: f64| linalg::inverse_pd(&(q + DMatrix::identity(d, d) * s), "Q + sI");
    if ok(&post(0.0)?)? {
        return Ok(Some(0.0));
    }
    if !ok(&post(s_max)?)? {
        return Ok(None);
    }
    // shrink geometrically, then bisect
    let mut hi = s_max;
    let mut lo = 0.0;
    while hi > s_max * 1e-12 {
        let mid = hi * 0.5;
        if ok(&post(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
            break;
        }
    }
    for _ in 0..60 {
        if hi - lo <= 1e-9 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ok(&post(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Arrival requirement used when picking `S` for a new node: the ellipse one
/// propagation step ahead is obstacle-free, and a node inside the target
/// satisfies the final-state condition.
fn arrival_ok(x: &DVector<f64>, post: &DMatrix<f64>, ctx: &SteerContext<'_>, in_target: bool) -> Result<bool> {
    let ahead = post + &ctx.model.w;
    if !collision::state_safe(x, &ahead, ctx.env, ctx.safety.chi2)? {
        return Ok(false);
    }
    if in_target {
        let info = linalg::inverse_pd(post, "posterior")?;
        let d = x.len();
        return collision::admissible_final(x, &info, &DMatrix::zeros(d, d), ctx.env, ctx.safety.chi2);
    }
    Ok(true)
}

/// Steers from `parent` (posterior `p_parent`) to `x_new`; `None` when the
/// transition is not certified or no isotropic `S` within the cap works.
pub fn edge_steer(
    parent: &BeliefState,
    x_new: &DVector<f64>,
    ctx: &SteerContext<'_>,
) -> Result<Option<(BeliefState, f64)>> {
    let p_parent = parent.covariance()?;
    let chi2 = ctx.safety.chi2;
    if ctx.env.domain.max_violation(x_new) > 0.0 {
        return Ok(None);
    }
    if !collision::transition_is_safe(&parent.x, x_new, &p_parent, &ctx.model.w, ctx.env, chi2)? {
        return Ok(None);
    }
    let prior = belief::propagate_prior(&p_parent, ctx.model);
    let q = linalg::inverse_pd(&prior, "propagated prior")?;
    let in_target = ctx.env.target.contains(x_new, 0.0);
    let Some(s) = min_isotropic_s(&q, ctx.s_max, |post| arrival_ok(x_new, post, ctx, in_target))? else {
        return Ok(None);
    };
    let d = x_new.len();
    let s_mat = DMatrix::identity(d, d) * s;
    let cost = belief::step_cost(&parent.x, x_new, &q, &s_mat, ctx.alpha)?;
    Ok(Some((BeliefState::new(x_new.clone(), q, s_mat)?, cost)))
}

/// Edge into an existing node whose posterior stays fixed.
fn edge_to_existing(
    parent_x: &DVector<f64>,
    p_parent: &DMatrix<f64>,
    child_x: &DVector<f64>,
    p_child: &DMatrix<f64>,
    ctx: &SteerContext<'_>,
) -> Result<Option<(BeliefState, f64)>> {
    let prior = belief::propagate_prior(p_parent, ctx.model);
    let gap = &prior - p_child;
    if linalg::min_eigenvalue(&gap) < -1e-12 * prior.amax() {
        return Ok(None);
    }
    let q = linalg::inverse_pd(&prior, "propagated prior")?;
    let info = linalg::inverse_pd(p_child, "child posterior")?;
    let s = psd_part(&linalg::symmetrize(&(info - &q)));
    let cost = belief::step_cost(parent_x, child_x, &q, &s, ctx.alpha)?;
    Ok(Some((BeliefState::new(child_x.clone(), q, s)?, cost)))
}

fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn neighbors(tree: &Tree, x: &DVector<f64>, radius: f64, cap: usize, must: usize) -> Vec<usize> {
    let mut within: Vec<(f64, usize)> = tree
        .nodes
        .iter()
        .map(|n| ((&n.state.x - x).norm(), n.id))
        .filter(|&(d, id)| d <= radius || id == must)
        .collect();
    within.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = within.into_iter().take(cap).map(|(_, id)| id).collect();
    if !out.contains(&must) {
        out.push(must);
    }
    out.sort_unstable();
    out
}

/// Inserts `x_new` under its cheapest certified neighbor, then rewires
/// neighbors through it when strictly cheaper. Returns the new node id, or
/// `None` when no neighbor can reach `x_new`.
pub fn extend_and_rewire(
    tree: &mut Tree,
    x_new: &DVector<f64>,
    near: usize,
    config: &PlannerConfig,
    ctx: &SteerContext<'_>,
) -> Result<Option<usize>> {
    let nbors = neighbors(tree, x_new, config.ig_min, config.max_neighbors, near);
    let steered: Vec<Result<Option<(BeliefState, f64)>>> =
        nbors.par_iter().map(|&j| edge_steer(&tree.nodes[j].state, x_new, ctx)).collect();
    let mut best: Option<(f64, usize, BeliefState, f64)> = None;
    for (&j, r) in nbors.iter().zip(steered) {
        if let Some((st, c)) = r? {
            let total = tree.nodes[j].cost_from_root + c;
            if best.as_ref().map_or(true, |b| total < b.0) {
                best = Some((total, j, st, c));
            }
        }
    }
    let Some((_, parent, state, edge_cost)) = best else { return Ok(None) };
    let posterior = state.covariance()?;
    let new_id = tree.push(parent, state, posterior, edge_cost);
    tree.cache.insert((parent, new_id), true);

    let candidates: Vec<usize> = nbors.into_iter().filter(|&j| j != parent && j != 0).collect();
    let new_node = &tree.nodes[new_id];
    let steered: Vec<Result<Option<(BeliefState, f64)>>> = candidates
        .par_iter()
        .map(|&j| {
            let n = &tree.nodes[j];
            edge_to_existing(&new_node.state.x, &new_node.posterior, &n.state.x, &n.posterior, ctx)
        })
        .collect();
    for (&j, r) in candidates.iter().zip(steered) {
        let Some((st, c)) = r? else { continue };
        let via = tree.nodes[new_id].cost_from_root + c;
        if via >= tree.nodes[j].cost_from_root {
            continue;
        }
        // an ancestor of x_new cannot become its child
        if tree.chain(new_id).contains(&j) {
            continue;
        }
        if !tree.transition_ok(new_id, j, ctx)? {
            continue;
        }
        tree.reparent(j, new_id, st, c);
    }
    Ok(Some(new_id))
}

/// Runs `config.n_nodes - 1` sampling iterations from `root`.
pub fn plan(root: BeliefState, config: &PlannerConfig, ctx: &SteerContext<'_>) -> Result<Tree> {
    config.validate()?;
    let mut tree = Tree::new(root)?;
    for i in 1..config.n_nodes {
        let mut rng = rng_stream(config.seed, PLANNER_STREAM, i as u64);
        let sample = generate(config, ctx.env, &mut rng)?;
        let near = nearest(&tree, &sample);
        let x_new = scale(&tree.nodes[near].state.x, &sample, config.ed_min);
        if (&x_new - &tree.nodes[near].state.x).norm() < 1e-9 {
            continue;
        }
        extend_and_rewire(&mut tree, &x_new, near, config, ctx)?;
    }
    Ok(tree)
}

/// Cheapest node whose posterior satisfies the final-state condition.
pub fn best_final(tree: &Tree, env: &Environment, safety: &SafetyConfig) -> Result<Option<usize>> {
    let mut best: Option<(f64, usize)> = None;
    for n in &tree.nodes {
        if n.id == 0 || !env.target.contains(&n.state.x, 0.0) {
            continue;
        }
        if collision::admissible_final(&n.state.x, &n.state.q, &n.state.s, env, safety.chi2)?
            && best.map_or(true, |b| n.cost_from_root < b.0)
        {
            best = Some((n.cost_from_root, n.id));
        }
    }
    Ok(best.map(|b| b.1))
}

/// Rebuilds beliefs along fixed means: each step takes the smallest isotropic
/// `S` making the next transition (or, at the end, the final-state condition)
/// hold.
pub fn rederive_beliefs(xs: &[DVector<f64>], p0: &DMatrix<f64>, ctx: &SteerContext<'_>) -> Result<BeliefPath> {
    if xs.len() < 2 {
        return Err(Error::Domain("a path needs at least two means".into()));
    }
    let d = p0.nrows();
    let chi2 = ctx.safety.chi2;
    let mut steps = vec![BeliefState::initial(xs[0].clone(), p0)?];
    let mut post = p0.clone();
    let k = xs.len() - 1;
    for i in 1..=k {
        if !collision::transition_is_safe(&xs[i - 1], &xs[i], &post, &ctx.model.w, ctx.env, chi2)? {
            return Err(Error::NoSolution(format!("transition {i} cannot be certified")));
        }
        let prior = belief::propagate_prior(&post, ctx.model);
        let q = linalg::inverse_pd(&prior, "propagated prior")?;
        let found = if i < k {
            let next = &xs[i + 1];
            min_isotropic_s(&q, ctx.s_max, |p| {
                collision::transition_is_safe(&xs[i], next, p, &ctx.model.w, ctx.env, chi2)
            })?
        } else {
            min_isotropic_s(&q, ctx.s_max, |p| {
                let info = linalg::inverse_pd(p, "posterior")?;
                collision::admissible_final(&xs[i], &info, &DMatrix::zeros(d, d), ctx.env, chi2)
            })?
        };
        let s = found.ok_or_else(|| Error::NoSolution(format!("no measurement within the cap at step {i}")))?;
        let s_mat = DMatrix::identity(d, d) * s;
        post = linalg::inverse_pd(&(&q + &s_mat), "posterior information")?;
        steps.push(BeliefState::new(xs[i].clone(), q, s_mat)?);
    }
    BeliefPath::new(ctx.alpha, steps)
}

/// Bisects the longest segment (lowest index on ties) until there are `k` segments.
pub fn subdivide(xs: &[DVector<f64>], k: usize) -> Vec<DVector<f64>> {
    let mut out = xs.to_vec();
    while out.len() - 1 < k {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 1..out.len() {
            let l = (&out[i] - &out[i - 1]).norm();
            if l > best.0 {
                best = (l, i);
            }
        }
        let mid = (&out[best.1 - 1] + &out[best.1]) * 0.5;
        out.insert(best.1, mid);
    }
    out
}

fn collinearity(xs: &[DVector<f64>], i: usize) -> f64 {
    let a = &xs[i - 1];
    let b = &xs[i + 1];
    let p = &xs[i];
    let ab = b - a;
    let t = if ab.norm_squared() > 0.0 { ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Walks the tree chain to the cheapest admissible node and adjusts it to
/// exactly `k_target` transitions (`None` keeps the chain length).
pub fn extract_path(
    tree: &Tree,
    ctx: &SteerContext<'_>,
    k_target: Option<usize>,
) -> Result<BeliefPath> {
    let goal = best_final(tree, ctx.env, ctx.safety)?
        .ok_or_else(|| Error::NoSolution("no tree node is an admissible final state".into()))?;
    let chain = tree.chain(goal);
    let k_chain = chain.len() - 1;
    let k = k_target.unwrap_or(k_chain);
    if k == 0 {
        return Err(Error::Domain("k_target must be at least 1".into()));
    }
    let path = if k == k_chain {
        let steps = chain.iter().map(|&i| tree.nodes[i].state.clone()).collect();
        BeliefPath::new(ctx.alpha, steps)?
    } else {
        let xs: Vec<DVector<f64>> = chain.iter().map(|&i| tree.nodes[i].state.x.clone()).collect();
        let p0 = tree.root().posterior.clone();
        if k > k_chain {
            rederive_beliefs(&subdivide(&xs, k), &p0, ctx)?
        } else {
            merge_to(&xs, k, &p0, ctx)?
        }
    };
    verify_path(&path, ctx)?;
    Ok(path)
}

fn merge_to(xs: &[DVector<f64>], k: usize, p0: &DMatrix<f64>, ctx: &SteerContext<'_>) -> Result<BeliefPath> {
    let mut cur = xs.to_vec();
    while cur.len() - 1 > k {
        let mut order: Vec<(f64, usize)> = (1..cur.len() - 1).map(|i| (collinearity(&cur, i), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut merged = false;
        for (_, i) in order {
            let mut trial = cur.clone();
            trial.remove(i);
            if rederive_beliefs(&trial, p0, ctx).is_ok() {
                cur = trial;
                merged = true;
                break;
            }
        }
        if !merged {
            return Err(Error::NoSolution(format!("cannot merge the path down to {k} transitions")));
        }
    }
    rederive_beliefs(&cur, p0, ctx)
}

/// Full re-certification: every transition plus the final state.
pub fn verify_path(path: &BeliefPath, ctx: &SteerContext<'_>) -> Result<()> {
    let chi2 = ctx.safety.chi2;
    for k in 1..path.steps.len() {
        let prev = &path.steps[k - 1];
        let p = prev.covariance()?;
        let r = collision::transition_safe(&prev.x, &path.steps[k].x, &p, &ctx.model.w, ctx.env, chi2)?;
        if !r.safe {
            return Err(Error::NoSolution(format!("transition {k} failed re-certification")));
        }
    }
    let last = path.steps.last().expect("path has steps");
    if !collision::admissible_final(&last.x, &last.q, &last.s, ctx.env, chi2)? {
        return Err(Error::NoSolution("final state is not admissible".into()));
    }
    Ok(())
}
