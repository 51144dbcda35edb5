//! Anytime RRT* planner over occupancy/cost snapshots with semantic
//! trajectory costs and the reactive replanning cycle.

mod cost;
mod footprint;
mod replan;
mod rrt;

pub use cost::{path_length, remaining_cost, semantic_cost, total_cost, Trajectory};
pub use footprint::{
    footprint_cell_average, footprint_valid, footprint_valid_sampled, CellScratch, Footprint,
    FootprintSampler,
};
pub use replan::{decide_with_candidate, replan_step, Decision, ReplanInfo, RobotState};
pub use rrt::{plan, PlanBudget, PlanError, PlanStats};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Weight on path length (meters).
    pub lambda1: f64,
    /// Weight on the summed per-waypoint semantic averages.
    pub lambda2: f64,
    /// Wall-clock planning budget per cycle, seconds.
    pub plan_budget: f64,
    /// Replanning period, seconds.
    pub cycle_period: f64,
    /// Collision lookahead radius that forces a stop, meters.
    pub stop_radius: f64,
    /// Constant robot speed used for waypoint stamps and start projection.
    pub robot_speed: f64,
    /// Maximum tree extension length, meters.
    pub step_size: f64,
    /// A node within this distance of the goal counts as goal-reaching.
    pub goal_tolerance: f64,
    /// Probability of sampling the goal directly.
    pub goal_bias: f64,
    /// Rewiring radius scale; defaults to the map diagonal when unset.
    pub rewire_gamma: Option<f64>,
    /// Hard cap on the rewiring radius, meters.
    pub max_rewire_radius: f64,
    /// Collision-check stride as a fraction of the map resolution.
    pub collision_stride_factor: f64,
    /// Samples are drawn from the start/goal bounding box inflated by this
    /// margin (clipped to the map), concentrating the search on the task.
    pub sample_margin: f64,
    /// Iteration budget used in deterministic mode; calibrated once to the
    /// wall budget and then fixed.
    pub iteration_budget: u32,
    /// Margin a candidate must beat the remaining cost by before switching.
    pub switch_hysteresis: f64,
    pub seed: u64,
    pub footprint: Footprint,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            plan_budget: 0.95,
            cycle_period: 1.0,
            stop_radius: 3.0,
            robot_speed: 0.5,
            step_size: 1.0,
            goal_tolerance: 0.5,
            goal_bias: 0.05,
            rewire_gamma: None,
            max_rewire_radius: 2.0,
            collision_stride_factor: 0.5,
            sample_margin: 8.0,
            iteration_budget: 4000,
            switch_hysteresis: 0.0,
            seed: 0,
            footprint: Footprint::default(),
        }
    }
}

impl PlannerConfig {
    pub fn collision_stride(&self, resolution: f64) -> f64 {
        self.collision_stride_factor * resolution
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.plan_budget > 0.0 && self.plan_budget < self.cycle_period) {
            return Err("plan_budget must satisfy 0 < plan_budget < cycle_period".into());
        }
        if self.stop_radius <= 0.0 {
            return Err("stop_radius must be > 0".into());
        }
        if self.footprint.length <= 0.0
            || self.footprint.width <= 0.0
            || self.footprint.stride <= 0.0
        {
            return Err("footprint dimensions and stride must be > 0".into());
        }
        if self.step_size <= 0.0 || self.goal_tolerance <= 0.0 {
            return Err("step_size and goal_tolerance must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err("goal_bias must lie in [0, 1]".into());
        }
        Ok(())
    }
}
