//! The anytime RRT* search.
//!
//! Grows a tree in (x, y) with footprint collision checking along every
//! edge, edge costs of `lambda1 * length + lambda2 * semantic`, rewiring
//! within a shrinking radius, and returns the best goal-reaching trajectory
//! found within the budget. Deterministic for a fixed seed in iteration
//! mode.

use std::time::{Duration, Instant};

use nalgebra::Vector2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;
use thiserror::Error;

use super::cost::Trajectory;
use super::footprint::{footprint_cell_average, footprint_valid_sampled, CellScratch, FootprintSampler};
use super::PlannerConfig;
use crate::geometry::Pose2D;
use crate::semantic_map::MapSnapshot;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("no path to the goal was found within the budget")]
    NoPathFound,
    #[error("start pose is in collision")]
    InvalidStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlanBudget {
    Iterations(u32),
    WallClock(Duration),
}

#[derive(Debug, Clone, Default)]
pub struct PlanStats {
    pub iterations: u32,
    pub nodes: usize,
    /// (iteration, exact c_total) each time the best trajectory improved.
    pub improvements: Vec<(u32, f64)>,
}

struct Node {
    pos: Vector2<f64>,
    parent: u32,
    cost: f64,
    children: SmallVec<[u32; 4]>,
}

const NO_PARENT: u32 = u32::MAX;

/// Uniform-grid nearest-neighbor index over the map extent.
struct BucketIndex {
    origin: Vector2<f64>,
    cell: f64,
    cols: i64,
    rows: i64,
    buckets: Vec<Vec<u32>>,
}

impl BucketIndex {
    fn new(origin: Vector2<f64>, width: f64, height: f64, cell: f64) -> Self {
        let cols = (width / cell).ceil().max(1.0) as i64;
        let rows = (height / cell).ceil().max(1.0) as i64;
        Self {
            origin,
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); (cols * rows) as usize],
        }
    }

    fn coords(&self, p: &Vector2<f64>) -> (i64, i64) {
        let c = (((p.x - self.origin.x) / self.cell).floor() as i64).clamp(0, self.cols - 1);
        let r = (((p.y - self.origin.y) / self.cell).floor() as i64).clamp(0, self.rows - 1);
        (r, c)
    }

    fn insert(&mut self, p: &Vector2<f64>, idx: u32) {
        let (r, c) = self.coords(p);
        self.buckets[(r * self.cols + c) as usize].push(idx);
    }

    fn nearest(&self, nodes: &[Node], q: &Vector2<f64>) -> u32 {
        let (qr, qc) = self.coords(q);
        let mut best = 0u32;
        let mut best_d2 = f64::INFINITY;
        let max_ring = self.cols.max(self.rows);
        for ring in 0..=max_ring {
            // Cells at Chebyshev distance exactly `ring` from the query cell.
            let r0 = qr - ring;
            let r1 = qr + ring;
            let c0 = qc - ring;
            let c1 = qc + ring;
            for r in r0..=r1 {
                if r < 0 || r >= self.rows {
                    continue;
                }
                for c in c0..=c1 {
                    if c < 0 || c >= self.cols {
                        continue;
                    }
                    if ring > 0 && r != r0 && r != r1 && c != c0 && c != c1 {
                        continue; // interior already scanned
                    }
                    for &idx in &self.buckets[(r * self.cols + c) as usize] {
                        let d2 = (nodes[idx as usize].pos - q).norm_squared();
                        if d2 < best_d2 {
                            best_d2 = d2;
                            best = idx;
                        }
                    }
                }
            }
            if best_d2.is_finite() {
                let safe = (ring as f64) * self.cell;
                if best_d2.sqrt() <= safe {
                    break;
                }
            }
        }
        best
    }

    fn within(&self, nodes: &[Node], q: &Vector2<f64>, radius: f64, out: &mut Vec<u32>) {
        out.clear();
        let r2 = radius * radius;
        let (r0, c0) = self.coords(&Vector2::new(q.x - radius, q.y - radius));
        let (r1, c1) = self.coords(&Vector2::new(q.x + radius, q.y + radius));
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &idx in &self.buckets[(r * self.cols + c) as usize] {
                    if (nodes[idx as usize].pos - q).norm_squared() <= r2 {
                        out.push(idx);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

struct Search<'a> {
    snap: &'a MapSnapshot,
    cfg: &'a PlannerConfig,
    sampler: FootprintSampler,
    stride: f64,
    nodes: Vec<Node>,
    index: BucketIndex,
    goal: Vector2<f64>,
    goal_nodes: Vec<u32>,
    scratch: CellScratch,
}

impl<'a> Search<'a> {
    /// Length and semantic sum along the edge a -> b, sampling poses every
    /// collision stride (excluding a, including b). None when blocked.
    fn eval_edge(&mut self, a: Vector2<f64>, b: Vector2<f64>) -> Option<(f64, f64)> {
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            return Some((0.0, 0.0));
        }
        let heading = d.y.atan2(d.x);
        let steps = (len / self.stride).ceil().max(1.0) as usize;
        let mut sem = 0.0;
        for k in 1..=steps {
            let p = a + d * (k as f64 / steps as f64);
            let avg = footprint_cell_average(
                self.snap,
                p.x,
                p.y,
                heading,
                &self.sampler,
                &mut self.scratch,
            );
            if avg.is_infinite() {
                return None;
            }
            sem += avg;
        }
        Some((len, sem))
    }

    fn edge_cost(&self, len: f64, sem: f64) -> f64 {
        self.cfg.lambda1 * len + self.cfg.lambda2 * sem
    }

    fn insert_node(&mut self, pos: Vector2<f64>, parent: u32, cost: f64) -> u32 {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            pos,
            parent,
            cost,
            children: SmallVec::new(),
        });
        if parent != NO_PARENT {
            self.nodes[parent as usize].children.push(idx);
        }
        self.index.insert(&pos, idx);
        if (pos - self.goal).norm() <= self.cfg.goal_tolerance {
            self.goal_nodes.push(idx);
        }
        idx
    }

    fn reparent(&mut self, node: u32, new_parent: u32, new_cost: f64) {
        let old_parent = self.nodes[node as usize].parent;
        if old_parent != NO_PARENT {
            self.nodes[old_parent as usize].children.retain(|c| *c != node);
        }
        self.nodes[node as usize].parent = new_parent;
        self.nodes[new_parent as usize].children.push(node);
        let delta = new_cost - self.nodes[node as usize].cost;
        // Costs are additive along the path, so the whole subtree shifts.
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            self.nodes[n as usize].cost += delta;
            stack.extend(self.nodes[n as usize].children.iter().copied());
        }
    }

    fn best_goal_node(&self) -> Option<(u32, f64)> {
        self.goal_nodes
            .iter()
            .map(|&i| (i, self.nodes[i as usize].cost))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
    }

    fn polyline_to(&self, node: u32) -> Vec<Vector2<f64>> {
        let mut line = Vec::new();
        let mut cur = node;
        while cur != NO_PARENT {
            line.push(self.nodes[cur as usize].pos);
            cur = self.nodes[cur as usize].parent;
        }
        line.reverse();
        line
    }

    fn rewire_radius(&self) -> f64 {
        let n = self.nodes.len().max(2) as f64;
        let diag = (self.snap.geom.width_m().powi(2) + self.snap.geom.height_m().powi(2)).sqrt();
        let gamma = self.cfg.rewire_gamma.unwrap_or(diag);
        (gamma * ((n.ln()) / n).sqrt()).min(self.cfg.max_rewire_radius)
    }
}

/// Plan from `start` to `goal` on the snapshot within the budget.
pub fn plan(
    start: &Pose2D,
    goal: &Pose2D,
    snap: &MapSnapshot,
    cfg: &PlannerConfig,
    budget: &PlanBudget,
) -> Result<(Trajectory, PlanStats), PlanError> {
    let sampler = FootprintSampler::new(&cfg.footprint);
    if !footprint_valid_sampled(snap, start.x, start.y, start.heading, &sampler) {
        return Err(PlanError::InvalidStart);
    }
    let start_pos = Vector2::new(start.x, start.y);
    let goal_pos = Vector2::new(goal.x, goal.y);
    let mut stats = PlanStats::default();

    if (start_pos - goal_pos).norm() <= cfg.goal_tolerance {
        let traj = Trajectory::evaluate(&[start_pos], snap, &sampler, cfg, start.stamp);
        stats.nodes = 1;
        stats.improvements.push((0, traj.c_total));
        return Ok((traj, stats));
    }

    let stride = cfg.collision_stride(snap.geom.resolution);
    let mut search = Search {
        snap,
        cfg,
        sampler,
        stride,
        nodes: Vec::new(),
        index: BucketIndex::new(
            snap.geom.origin,
            snap.geom.width_m(),
            snap.geom.height_m(),
            cfg.step_size,
        ),
        goal: goal_pos,
        goal_nodes: Vec::new(),
        scratch: CellScratch::new(),
    };
    search.insert_node(start_pos, NO_PARENT, 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Informed sampling window: start/goal bbox inflated by the margin,
    // clipped to the map extent.
    let m = cfg.sample_margin.max(cfg.step_size);
    let x0 = (start_pos.x.min(goal_pos.x) - m).max(snap.geom.origin.x);
    let y0 = (start_pos.y.min(goal_pos.y) - m).max(snap.geom.origin.y);
    let x1 = (start_pos.x.max(goal_pos.x) + m).min(snap.geom.origin.x + snap.geom.width_m());
    let y1 = (start_pos.y.max(goal_pos.y) + m).min(snap.geom.origin.y + snap.geom.height_m());

    let mut best_tree_cost = f64::INFINITY;
    let mut best_traj: Option<Trajectory> = None;
    let deadline = match budget {
        PlanBudget::WallClock(d) => Some(Instant::now() + *d),
        PlanBudget::Iterations(_) => None,
    };
    let max_iters = match budget {
        PlanBudget::Iterations(n) => *n,
        PlanBudget::WallClock(_) => u32::MAX,
    };

    let mut near = Vec::new();
    let mut iter = 0u32;
    while iter < max_iters {
        if let Some(d) = deadline {
            if Instant::now() >= d {
                break;
            }
        }
        iter += 1;

        let q = if rng.random_bool(cfg.goal_bias) {
            goal_pos
        } else {
            Vector2::new(rng.random_range(x0..x1), rng.random_range(y0..y1))
        };
        let nearest = search.index.nearest(&search.nodes, &q);
        let npos = search.nodes[nearest as usize].pos;
        let d = q - npos;
        let dist = d.norm();
        if dist < 1e-9 {
            continue;
        }
        let x_new = if dist > cfg.step_size {
            npos + d * (cfg.step_size / dist)
        } else {
            q
        };

        let radius = search.rewire_radius();
        search.index.within(&search.nodes, &x_new, radius, &mut near);
        // Cap the neighborhood at the closest candidates to bound the cost
        // of one iteration; selection stays deterministic.
        const MAX_NEAR: usize = 16;
        if near.len() > MAX_NEAR {
            near.sort_by(|&a, &b| {
                let da = (search.nodes[a as usize].pos - x_new).norm_squared();
                let db = (search.nodes[b as usize].pos - x_new).norm_squared();
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            near.truncate(MAX_NEAR);
            near.sort_unstable();
        }
        if !near.contains(&nearest) {
            near.push(nearest);
        }

        // Choose the lowest-cost valid parent among the neighborhood.
        let mut best_parent: Option<(u32, f64)> = None;
        let candidates = near.clone();
        for &p in &candidates {
            let ppos = search.nodes[p as usize].pos;
            if let Some((len, sem)) = search.eval_edge(ppos, x_new) {
                let cost = search.nodes[p as usize].cost + search.edge_cost(len, sem);
                if best_parent.map_or(true, |(_, c)| cost < c) {
                    best_parent = Some((p, cost));
                }
            }
        }
        let Some((parent, cost)) = best_parent else {
            continue;
        };
        let new_idx = search.insert_node(x_new, parent, cost);

        // Rewire the neighborhood through the new node where cheaper.
        for &m in &candidates {
            if m == parent || m == new_idx {
                continue;
            }
            let mpos = search.nodes[m as usize].pos;
            if let Some((len, sem)) = search.eval_edge(x_new, mpos) {
                let c_through = cost + search.edge_cost(len, sem);
                if c_through + 1e-12 < search.nodes[m as usize].cost {
                    search.reparent(m, new_idx, c_through);
                }
            }
        }

        // Track the best goal-reaching trajectory by its exact cost.
        if let Some((gnode, tree_cost)) = search.best_goal_node() {
            if tree_cost < best_tree_cost - 1e-12 {
                best_tree_cost = tree_cost;
                let line = search.polyline_to(gnode);
                let traj =
                    Trajectory::evaluate(&line, snap, &search.sampler, cfg, start.stamp);
                let better = best_traj
                    .as_ref()
                    .map_or(true, |b| traj.c_total < b.c_total);
                if better && traj.c_total.is_finite() {
                    stats.improvements.push((iter, traj.c_total));
                    best_traj = Some(traj);
                }
            }
        }
    }

    stats.iterations = iter;
    stats.nodes = search.nodes.len();
    best_traj.map(|t| (t, stats)).ok_or(PlanError::NoPathFound)
}
