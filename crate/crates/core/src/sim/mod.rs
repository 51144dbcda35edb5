//! Deterministic simulation harness: synthetic world, simulated sensors,
//! scenario configs, and the closed-loop runner with metrics.

mod groundfill;
mod metrics;
mod runner;
mod scenario;
mod sensors;
mod world;

pub use groundfill::{ground_fill, GroundFillConfig};
pub use metrics::{DecisionRecord, MetricsRecord, RunMetrics, METRICS_FORMAT, METRICS_VERSION};
pub use runner::{
    geofence_apriori, load_registry, replay_scenario, run_scenario, RunOptions, RunResult,
    SimError,
};
pub use scenario::{
    load_bundled, ActorConfig, CameraConfig, ConfigError, ConfusionConfig, LidarConfig, MapConfig,
    NoiseConfig, ObstacleConfig, PatchConfig, PipelineConfig, RobotConfig, ScenarioConfig,
    SeedMode, SensorsConfig, WorldConfig, BUNDLED_SCENARIOS,
};
pub use sensors::{
    camera_extrinsic, lidar_extrinsic, make_camera, render_segmentation, sensor_pose_world,
    simulate_lidar, simulate_lidar_with_truth, ConfusionPair, LidarPattern, SegNoise,
    SimMaskSource,
};
pub use world::{step_actors, Actor, ConvexPolygon, Hit, Obstacle, TerrainPatch, World};
