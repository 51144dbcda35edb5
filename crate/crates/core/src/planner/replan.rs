//! The once-per-cycle replanning decision.
//!
//! Stop when the active path collides within the stop radius; otherwise plan
//! from the constant-velocity projection of the robot one cycle ahead and
//! switch only when the candidate is strictly cheaper than the current
//! path's remaining cost.

use std::time::Instant;

use nalgebra::Vector2;

use super::cost::{remaining_cost, Trajectory};
use super::footprint::{footprint_valid_sampled, FootprintSampler};
use super::rrt::{plan, PlanBudget};
use super::PlannerConfig;
use crate::geometry::Pose2D;
use crate::semantic_map::MapSnapshot;

#[derive(Debug, Clone)]
pub struct RobotState {
    pub pose: Pose2D,
    pub velocity: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub enum Decision {
    Keep,
    Switch(Trajectory),
    Stop,
    NoPath,
}

impl Decision {
    pub fn kind(&self) -> &'static str {
        match self {
            Decision::Keep => "keep",
            Decision::Switch(_) => "switch",
            Decision::Stop => "stop",
            Decision::NoPath => "no_path",
        }
    }
}

/// Bookkeeping for logs and metrics.
#[derive(Debug, Clone, Default)]
pub struct ReplanInfo {
    pub candidate_cost: Option<f64>,
    pub remaining_cost: Option<f64>,
    pub iterations: u32,
    pub plan_wall_secs: f64,
}

/// Pure switch rule: strictly cheaper wins, ties keep the current path.
pub fn switch_rule(candidate_total: f64, remaining: f64, hysteresis: f64) -> bool {
    candidate_total + hysteresis < remaining
}

/// Decide between a current trajectory and an already-planned candidate.
pub fn decide_with_candidate(
    robot: &RobotState,
    current: Option<&Trajectory>,
    candidate: Option<Trajectory>,
    snap: &MapSnapshot,
    sampler: &FootprintSampler,
    cfg: &PlannerConfig,
    info: &mut ReplanInfo,
) -> Decision {
    info.candidate_cost = candidate.as_ref().map(|c| c.c_total);
    match (current, candidate) {
        (None, Some(c)) => Decision::Switch(c),
        (None, None) => Decision::NoPath,
        (Some(_), None) => Decision::Keep,
        (Some(t), Some(c)) => {
            let rem = remaining_cost(t, &robot.pose, snap, sampler, cfg);
            info.remaining_cost = rem.is_finite().then_some(rem);
            if switch_rule(c.c_total, rem, cfg.switch_hysteresis) {
                Decision::Switch(c)
            } else {
                Decision::Keep
            }
        }
    }
}

/// Any colliding pose on the current path within `stop_radius` of the robot?
pub fn collision_within_stop_radius(
    robot: &RobotState,
    traj: &Trajectory,
    snap: &MapSnapshot,
    sampler: &FootprintSampler,
    stop_radius: f64,
) -> bool {
    let start = traj.nearest_waypoint(robot.pose.x, robot.pose.y);
    for w in &traj.waypoints[start..] {
        if !footprint_valid_sampled(snap, w.x, w.y, w.heading, sampler) {
            let d = ((w.x - robot.pose.x).powi(2) + (w.y - robot.pose.y).powi(2)).sqrt();
            if d <= stop_radius {
                return true;
            }
        }
    }
    false
}

/// One replanning cycle.
pub fn replan_step(
    robot: &RobotState,
    current: Option<&Trajectory>,
    goal: &Pose2D,
    snap: &MapSnapshot,
    cfg: &PlannerConfig,
    budget: &PlanBudget,
) -> (Decision, ReplanInfo) {
    let sampler = FootprintSampler::new(&cfg.footprint);
    let mut info = ReplanInfo::default();

    if let Some(traj) = current {
        if collision_within_stop_radius(robot, traj, snap, &sampler, cfg.stop_radius) {
            let rem = remaining_cost(traj, &robot.pose, snap, &sampler, cfg);
            info.remaining_cost = rem.is_finite().then_some(rem);
            return (Decision::Stop, info);
        }
    }

    // Plan from the constant-velocity projection one cycle ahead.
    let speed = robot.velocity.norm();
    let proj = Vector2::new(robot.pose.x, robot.pose.y) + robot.velocity * cfg.cycle_period;
    let heading = if speed > 1e-9 {
        robot.velocity.y.atan2(robot.velocity.x)
    } else {
        robot.pose.heading
    };
    let start = Pose2D::new(proj.x, proj.y, heading).with_stamp(robot.pose.stamp + cfg.cycle_period);

    let t0 = Instant::now();
    let candidate = match plan(&start, goal, snap, cfg, budget) {
        Ok((traj, stats)) => {
            info.iterations = stats.iterations;
            Some(traj)
        }
        Err(_) => None,
    };
    info.plan_wall_secs = t0.elapsed().as_secs_f64();
    let decision = decide_with_candidate(robot, current, candidate, snap, &sampler, cfg, &mut info);
    (decision, info)
}
