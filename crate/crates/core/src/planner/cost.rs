//! Trajectory representation and the semantic trajectory cost.
//!
//! The total cost is `lambda1 * length + lambda2 * semantic`, where the
//! semantic term sums, over every waypoint, the mean cost-layer value under
//! the footprint at that waypoint.

use nalgebra::Vector2;

use super::footprint::{footprint_cell_average, footprint_valid_sampled, CellScratch, FootprintSampler};
use super::PlannerConfig;
use crate::geometry::Pose2D;
use crate::semantic_map::MapSnapshot;

/// Timestamped pose sequence with its decomposed cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Pose2D>,
    pub c_length: f64,
    pub c_semantic: f64,
    pub c_total: f64,
}

impl Trajectory {
    pub fn goal_pose(&self) -> &Pose2D {
        self.waypoints.last().expect("trajectory is non-empty")
    }

    /// Densify a polyline at the collision-check stride, evaluate both cost
    /// terms against the snapshot, and timestamp the waypoints at constant
    /// speed starting from `start_stamp`.
    pub fn evaluate(
        polyline: &[Vector2<f64>],
        snap: &MapSnapshot,
        sampler: &FootprintSampler,
        cfg: &PlannerConfig,
        start_stamp: f64,
    ) -> Trajectory {
        assert!(!polyline.is_empty());
        let stride = cfg.collision_stride(snap.geom.resolution);
        let mut poses: Vec<(f64, f64, f64)> = Vec::new();
        let first_heading = if polyline.len() >= 2 {
            let d = polyline[1] - polyline[0];
            d.y.atan2(d.x)
        } else {
            0.0
        };
        poses.push((polyline[0].x, polyline[0].y, first_heading));
        for seg in polyline.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let d = b - a;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let heading = d.y.atan2(d.x);
            let steps = (len / stride).ceil().max(1.0) as usize;
            for k in 1..=steps {
                let p = a + d * (k as f64 / steps as f64);
                poses.push((p.x, p.y, heading));
            }
        }

        let mut scratch = CellScratch::new();
        let mut c_length = 0.0;
        let mut c_semantic = 0.0;
        let mut waypoints = Vec::with_capacity(poses.len());
        let mut prev: Option<(f64, f64)> = None;
        for (x, y, heading) in poses {
            if let Some((px, py)) = prev {
                c_length += ((x - px).powi(2) + (y - py).powi(2)).sqrt();
            }
            c_semantic += footprint_cell_average(snap, x, y, heading, sampler, &mut scratch);
            let stamp = start_stamp
                + if cfg.robot_speed > 0.0 {
                    c_length / cfg.robot_speed
                } else {
                    0.0
                };
            waypoints.push(Pose2D::new(x, y, heading).with_stamp(stamp));
            prev = Some((x, y));
        }
        let c_total = cfg.lambda1 * c_length + cfg.lambda2 * c_semantic;
        Trajectory {
            waypoints,
            c_length,
            c_semantic,
            c_total,
        }
    }

    /// Index of the waypoint nearest to a position (ties to the lower index).
    pub fn nearest_waypoint(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, w) in self.waypoints.iter().enumerate() {
            let d2 = (w.x - x).powi(2) + (w.y - y).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }
}

/// Sum of per-waypoint footprint cost averages for a trajectory.
pub fn semantic_cost(snap: &MapSnapshot, traj: &Trajectory, sampler: &FootprintSampler) -> f64 {
    let mut scratch = CellScratch::new();
    let mut sum = 0.0;
    for w in &traj.waypoints {
        sum += footprint_cell_average(snap, w.x, w.y, w.heading, sampler, &mut scratch);
        if sum.is_infinite() {
            return f64::INFINITY;
        }
    }
    sum
}

/// Polyline length over a trajectory's waypoints.
pub fn path_length(traj: &Trajectory) -> f64 {
    traj.waypoints
        .windows(2)
        .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
        .sum()
}

/// The weighted total of Eq-style cost decomposition.
pub fn total_cost(c_length: f64, c_semantic: f64, cfg: &PlannerConfig) -> f64 {
    cfg.lambda1 * c_length + cfg.lambda2 * c_semantic
}

/// Cost of the unexecuted trajectory suffix, re-evaluated against the given
/// (current) snapshot. Infinite when any suffix pose is in collision; zero
/// once the robot is at the final waypoint.
pub fn remaining_cost(
    traj: &Trajectory,
    current: &Pose2D,
    snap: &MapSnapshot,
    sampler: &FootprintSampler,
    cfg: &PlannerConfig,
) -> f64 {
    let start = traj.nearest_waypoint(current.x, current.y);
    if start + 1 >= traj.waypoints.len() {
        return 0.0;
    }
    let mut scratch = CellScratch::new();
    let mut length = 0.0;
    let mut semantic = 0.0;
    for (i, w) in traj.waypoints[start..].iter().enumerate() {
        if !footprint_valid_sampled(snap, w.x, w.y, w.heading, sampler) {
            return f64::INFINITY;
        }
        semantic += footprint_cell_average(snap, w.x, w.y, w.heading, sampler, &mut scratch);
        if i > 0 {
            let p = &traj.waypoints[start + i - 1];
            length += ((w.x - p.x).powi(2) + (w.y - p.y).powi(2)).sqrt();
        }
    }
    total_cost(length, semantic, cfg)
}
