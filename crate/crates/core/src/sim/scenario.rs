//! Scenario configuration: TOML schema, validation, and world construction.
//!
//! Classes are referenced by registry name so scenario files stay readable;
//! they resolve to ids against the active registry at build time.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::groundfill::GroundFillConfig;
use super::sensors::{ConfusionPair, LidarPattern, SegNoise};
use super::world::{Actor, ConvexPolygon, Obstacle, TerrainPatch, World};
use crate::cloud::GroundParams;
use crate::panoptic::ClassRegistry;
use crate::planner::PlannerConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, Error)]
#[error("config error at '{field}': {msg}")]
pub struct ConfigError {
    pub field: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(field: &str, msg: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub seed: u64,
    /// Registry TOML path; the bundled taxonomy when absent.
    pub registry_file: Option<String>,
    pub robot: RobotConfig,
    pub world: WorldConfig,
    pub sensors: SensorsConfig,
    pub noise: NoiseConfig,
    pub pipeline: PipelineConfig,
    /// Optional axis-aligned geofence (x0, y0, x1, y1): everything outside
    /// is occupied via an a-priori union.
    pub geofence: Option<[f64; 4]>,
    /// Optional a-priori occupancy raster directory (occupancy.pgm + meta.toml).
    pub apriori_dir: Option<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            duration: 60.0,
            seed: 0,
            registry_file: None,
            robot: RobotConfig::default(),
            world: WorldConfig::default(),
            sensors: SensorsConfig::default(),
            noise: NoiseConfig::default(),
            pipeline: PipelineConfig::default(),
            geofence: None,
            apriori_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    /// x, y, heading (radians).
    pub start: [f64; 3],
    pub goal: [f64; 2],
    pub speed: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            start: [0.0, 0.0, 0.0],
            goal: [10.0, 0.0],
            speed: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub bounds: [f64; 4],
    pub default_terrain: String,
    pub patches: Vec<PatchConfig>,
    pub obstacles: Vec<ObstacleConfig>,
    pub actors: Vec<ActorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub polygon: Vec<[f64; 2]>,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleConfig {
    pub polygon: Vec<[f64; 2]>,
    pub height: f64,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActorConfig {
    pub class: String,
    pub half_extents: [f64; 2],
    pub height: f64,
    pub speed: f64,
    pub script: Vec<[f64; 2]>,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            class: "person".into(),
            half_extents: [0.3, 0.3],
            height: 1.8,
            speed: 1.2,
            script: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorsConfig {
    /// Sensing rate in Hz; the simulation steps at this rate.
    pub rate: f64,
    pub lidar: LidarConfig,
    pub camera: CameraConfig,
}

impl Default for SensorsConfig {
    fn default() -> Self {
        Self {
            rate: 10.0,
            lidar: LidarConfig::default(),
            camera: CameraConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub channels: u32,
    pub azimuth_steps: u32,
    pub elev_min_deg: f64,
    pub elev_max_deg: f64,
    pub max_range: f64,
    pub mount_height: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            azimuth_steps: 512,
            elev_min_deg: -80.0,
            elev_max_deg: 10.0,
            max_range: 50.0,
            mount_height: 1.5,
        }
    }
}

impl LidarConfig {
    pub fn pattern(&self) -> LidarPattern {
        LidarPattern {
            channels: self.channels,
            azimuth_steps: self.azimuth_steps,
            elev_min: self.elev_min_deg.to_radians(),
            elev_max: self.elev_max_deg.to_radians(),
            max_range: self.max_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            fx: 64.0,
            fy: 64.0,
            cx: 64.0,
            cy: 48.0,
            mount_height: 1.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub lidar_sigma: f64,
    pub confusion: Vec<ConfusionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionConfig {
    pub classes: [String; 2],
    pub ratio: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Segmentation confidence threshold.
    pub tau: f64,
    pub eps: f64,
    pub min_pts: usize,
    pub vote_threshold: f64,
    /// Extra footprint inflation (per side) used for planning only; the
    /// safety checks use the true footprint. Covers the gap between sampled
    /// collision checks and exact pose validation while following the path.
    pub plan_footprint_margin: f64,
    pub ground: GroundParams,
    pub ground_fill: GroundFillConfig,
    pub tracker: TrackerConfig,
    pub map: MapConfig,
    pub planner: PlannerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            eps: 0.5,
            min_pts: 5,
            vote_threshold: 0.6,
            plan_footprint_margin: 0.2,
            ground: GroundParams::default(),
            ground_fill: GroundFillConfig::default(),
            tracker: TrackerConfig::default(),
            map: MapConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

/// How much surveyed terrain the static layer starts with.
///
/// `Disk` seeds only the staging area around the start pose (the machine
/// knows what it stands on); `Survey` seeds the terrain classes across the
/// whole site plan, while obstacles and actors remain sensing-discovered.
/// Survey mode is the right choice when occluders stand between the robot
/// and the goal, since never-observed cells count as occupied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    Disk,
    Survey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub resolution: f64,
    /// Square map side length, meters (robot-centered, re-anchored on motion).
    pub size: f64,
    pub inflation_radius: f64,
    pub seed_mode: SeedMode,
    /// Radius around the start pose seeded in `Disk` mode.
    pub seed_radius: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: 0.2,
            size: 60.0,
            inflation_radius: 0.3,
            seed_mode: SeedMode::Disk,
            seed_radius: 6.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Validate every field against the registry; errors name the field.
    pub fn validate(&self, registry: &ClassRegistry) -> Result<(), ConfigError> {
        if self.duration <= 0.0 {
            return Err(ConfigError::new("duration", "must be > 0"));
        }
        if self.sensors.rate <= 0.0 {
            return Err(ConfigError::new("sensors.rate", "must be > 0"));
        }
        if self.robot.speed < 0.0 {
            return Err(ConfigError::new("robot.speed", "must be >= 0"));
        }
        let class_of = |field: &str, name: &str| -> Result<(), ConfigError> {
            registry
                .by_name(name)
                .map(|_| ())
                .ok_or_else(|| ConfigError::new(field, format!("class '{name}' not in registry")))
        };
        class_of("world.default_terrain", &self.world.default_terrain)?;
        for (i, p) in self.world.patches.iter().enumerate() {
            class_of(&format!("world.patches[{i}].class"), &p.class)?;
            to_polygon(&p.polygon).map_err(|m| ConfigError::new(&format!("world.patches[{i}].polygon"), m))?;
        }
        for (i, o) in self.world.obstacles.iter().enumerate() {
            class_of(&format!("world.obstacles[{i}].class"), &o.class)?;
            if o.height <= 0.0 {
                return Err(ConfigError::new(&format!("world.obstacles[{i}].height"), "must be > 0"));
            }
            to_polygon(&o.polygon).map_err(|m| ConfigError::new(&format!("world.obstacles[{i}].polygon"), m))?;
        }
        for (i, a) in self.world.actors.iter().enumerate() {
            class_of(&format!("world.actors[{i}].class"), &a.class)?;
            if a.speed < 0.0 {
                return Err(ConfigError::new(&format!("world.actors[{i}].speed"), "must be >= 0"));
            }
            if a.script.is_empty() {
                return Err(ConfigError::new(&format!("world.actors[{i}].script"), "needs at least one waypoint"));
            }
        }
        for (i, c) in self.noise.confusion.iter().enumerate() {
            class_of(&format!("noise.confusion[{i}].classes[0]"), &c.classes[0])?;
            class_of(&format!("noise.confusion[{i}].classes[1]"), &c.classes[1])?;
            if !(0.0..=1.0).contains(&c.ratio) {
                return Err(ConfigError::new(&format!("noise.confusion[{i}].ratio"), "must be in [0,1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.pipeline.tau) {
            return Err(ConfigError::new("pipeline.tau", "must be in [0,1]"));
        }
        if self.pipeline.eps <= 0.0 {
            return Err(ConfigError::new("pipeline.eps", "must be > 0"));
        }
        if self.pipeline.min_pts == 0 {
            return Err(ConfigError::new("pipeline.min_pts", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.pipeline.vote_threshold) {
            return Err(ConfigError::new("pipeline.vote_threshold", "must be in [0,1]"));
        }
        if self.pipeline.map.resolution <= 0.0 || self.pipeline.map.size <= 0.0 {
            return Err(ConfigError::new("pipeline.map", "resolution and size must be > 0"));
        }
        if self.pipeline.planner.footprint.stride > self.pipeline.map.resolution {
            return Err(ConfigError::new(
                "pipeline.planner.footprint.stride",
                "must not exceed pipeline.map.resolution",
            ));
        }
        self.pipeline
            .planner
            .validate()
            .map_err(|m| ConfigError::new("pipeline.planner", m))?;
        if self.sensors.lidar.channels == 0 || self.sensors.lidar.azimuth_steps == 0 {
            return Err(ConfigError::new("sensors.lidar", "pattern must be non-empty"));
        }
        if let Some(g) = self.geofence {
            if g[0] >= g[2] || g[1] >= g[3] {
                return Err(ConfigError::new("geofence", "must be (x0, y0, x1, y1) with x0<x1, y0<y1"));
            }
        }
        Ok(())
    }

    pub fn build_world(&self, registry: &ClassRegistry) -> Result<World, ConfigError> {
        let resolve = |field: &str, name: &str| {
            registry
                .by_name(name)
                .map(|s| s.id)
                .ok_or_else(|| ConfigError::new(field, format!("class '{name}' not in registry")))
        };
        let mut patches = Vec::new();
        for (i, p) in self.world.patches.iter().enumerate() {
            patches.push(TerrainPatch {
                polygon: to_polygon(&p.polygon)
                    .map_err(|m| ConfigError::new(&format!("world.patches[{i}].polygon"), m))?,
                class_id: resolve(&format!("world.patches[{i}].class"), &p.class)?,
            });
        }
        let mut obstacles = Vec::new();
        for (i, o) in self.world.obstacles.iter().enumerate() {
            obstacles.push(Obstacle {
                polygon: to_polygon(&o.polygon)
                    .map_err(|m| ConfigError::new(&format!("world.obstacles[{i}].polygon"), m))?,
                height: o.height,
                class_id: resolve(&format!("world.obstacles[{i}].class"), &o.class)?,
            });
        }
        let mut actors = Vec::new();
        for (i, a) in self.world.actors.iter().enumerate() {
            let start = a
                .script
                .first()
                .copied()
                .ok_or_else(|| ConfigError::new(&format!("world.actors[{i}].script"), "empty"))?;
            actors.push(Actor {
                half_extents: Vector2::new(a.half_extents[0], a.half_extents[1]),
                height: a.height,
                class_id: resolve(&format!("world.actors[{i}].class"), &a.class)?,
                speed: a.speed,
                script: a.script.iter().map(|w| Vector2::new(w[0], w[1])).collect(),
                position: Vector2::new(start[0], start[1]),
            });
        }
        let mut world = World {
            default_terrain: resolve("world.default_terrain", &self.world.default_terrain)?,
            patches,
            obstacles,
            actors,
            bounds: self.world.bounds,
            time: 0.0,
        };
        world.set_time(0.0);
        Ok(world)
    }

    pub fn seg_noise(&self, registry: &ClassRegistry) -> Result<SegNoise, ConfigError> {
        let mut confusion = Vec::new();
        for (i, c) in self.noise.confusion.iter().enumerate() {
            let a = registry.by_name(&c.classes[0]).ok_or_else(|| {
                ConfigError::new(&format!("noise.confusion[{i}].classes[0]"), "unknown class")
            })?;
            let b = registry.by_name(&c.classes[1]).ok_or_else(|| {
                ConfigError::new(&format!("noise.confusion[{i}].classes[1]"), "unknown class")
            })?;
            confusion.push(ConfusionPair {
                class_a: a.id,
                class_b: b.id,
                ratio: c.ratio,
            });
        }
        Ok(SegNoise { confusion })
    }
}

fn to_polygon(verts: &[[f64; 2]]) -> Result<ConvexPolygon, String> {
    ConvexPolygon::new(verts.iter().map(|v| Vector2::new(v[0], v[1])).collect())
}

/// Names of the scenarios shipped with the binary.
pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    ("empty_world", include_str!("../../assets/scenarios/empty_world.toml")),
    ("narrow_corridor", include_str!("../../assets/scenarios/narrow_corridor.toml")),
    ("mud_vs_road", include_str!("../../assets/scenarios/mud_vs_road.toml")),
    ("adversarial_crossing", include_str!("../../assets/scenarios/adversarial_crossing.toml")),
    ("geofence", include_str!("../../assets/scenarios/geofence.toml")),
];

pub fn load_bundled(name: &str) -> Option<ScenarioConfig> {
    BUNDLED_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml_str(text).expect("bundled scenario parses"))
}
