//! Scenario runner: the fixed-step sense → label → cluster → track → map →
//! replan loop, in live (ray-cast) or replay (recorded streams) mode.
//!
//! Everything is a pure function of config + seed in deterministic mode, so
//! identical runs produce byte-identical metrics and a recorded run replays
//! to the same outputs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::groundfill::ground_fill;
use super::metrics::{DecisionRecord, MetricsRecord, RunMetrics, METRICS_FORMAT, METRICS_VERSION};
use super::scenario::{ConfigError, ScenarioConfig};
use super::sensors::{
    camera_extrinsic, lidar_extrinsic, render_segmentation, sensor_pose_world,
    simulate_lidar_with_truth, SegNoise,
};
use super::world::World;
use crate::cloud::{
    label_points, make_clusters, read_cloud_file, remove_ground, select_points, split_clouds,
    write_cloud_file, CloudError, CloudRecord, GroundParams, LidarScan,
};
use crate::geometry::{CameraModel, Pose2D};
use crate::panoptic::{
    append_index_line, threshold_frame, write_frame_files, ClassRegistry, FileMaskSource,
    MaskSource, MaskSourceError, PanopticFrame,
};
use crate::planner::{
    footprint_valid_sampled, replan_step, Decision, FootprintSampler, PlanBudget, Trajectory,
};
use crate::semantic_map::{
    export_layers, import_apriori, AprioriMap, GridGeometry, LayeredGridMap, MapError,
};
use crate::tracker::{track_log_line, TrackError, Tracker};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Mask(#[from] MaskSourceError),
    #[error("registry error: {0}")]
    Registry(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Iteration-budget planning (reproducible); wall-clock when false.
    pub deterministic: bool,
    pub seed_override: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub record_dir: Option<PathBuf>,
    pub export_cycles: Vec<u64>,
}

impl RunOptions {
    pub fn deterministic() -> Self {
        Self {
            deterministic: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub decisions: Vec<DecisionRecord>,
    pub robot_trace: Vec<Pose2D>,
    pub track_log: Vec<String>,
    /// Live-mode oracle: labeled points whose class disagrees with the
    /// ray-cast ground truth (boundary pixels only; zero on uniform worlds).
    pub label_mismatches: u64,
    pub goal_reached: bool,
    pub violations: u64,
}

/// splitmix64 finalizer for deriving per-tick / per-cycle seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, salt: u64, k: u64) -> u64 {
    mix(base ^ mix(salt.wrapping_mul(2).wrapping_add(1) ^ mix(k)))
}

struct RobotFollower {
    x: f64,
    y: f64,
    heading: f64,
    traj: Option<Trajectory>,
    next_idx: usize,
    stopped: bool,
}

impl RobotFollower {
    fn pose(&self, stamp: f64) -> Pose2D {
        Pose2D::new(self.x, self.y, self.heading).with_stamp(stamp)
    }

    fn velocity(&self, speed: f64) -> Vector2<f64> {
        let can_move = !self.stopped
            && self
                .traj
                .as_ref()
                .map_or(false, |t| self.next_idx < t.waypoints.len());
        if can_move {
            Vector2::new(self.heading.cos(), self.heading.sin()) * speed
        } else {
            Vector2::zeros()
        }
    }

    fn advance(&mut self, mut dist: f64) {
        if self.stopped {
            return;
        }
        let Some(traj) = &self.traj else { return };
        while dist > 1e-12 && self.next_idx < traj.waypoints.len() {
            let w = &traj.waypoints[self.next_idx];
            let dx = w.x - self.x;
            let dy = w.y - self.y;
            let d = (dx * dx + dy * dy).sqrt();
            if d < 1e-9 {
                self.next_idx += 1;
                continue;
            }
            self.heading = dy.atan2(dx);
            if d <= dist {
                self.x = w.x;
                self.y = w.y;
                dist -= d;
                self.next_idx += 1;
            } else {
                self.x += dx / d * dist;
                self.y += dy / d * dist;
                dist = 0.0;
            }
        }
    }
}

enum SensorStream {
    Live,
    Replay {
        masks: FileMaskSource,
        clouds: Vec<PathBuf>,
        cursor: usize,
    },
}

pub fn load_registry(cfg: &ScenarioConfig) -> Result<ClassRegistry, SimError> {
    match &cfg.registry_file {
        Some(path) => ClassRegistry::from_toml_file(Path::new(path))
            .map_err(|e| SimError::Registry(e.to_string())),
        None => Ok(ClassRegistry::default_construction()),
    }
}

/// Geofence rectangle to an a-priori raster over the world bounds:
/// everything outside the rectangle is occupied.
pub fn geofence_apriori(bounds: [f64; 4], rect: [f64; 4], resolution: f64) -> AprioriMap {
    let cols = ((bounds[2] - bounds[0]) / resolution).ceil() as usize;
    let rows = ((bounds[3] - bounds[1]) / resolution).ceil() as usize;
    let geom = GridGeometry {
        resolution,
        origin: Vector2::new(bounds[0], bounds[1]),
        rows,
        cols,
    };
    let mut occupancy = vec![0u8; geom.len()];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = geom.center(r, c);
            if x < rect[0] || x > rect[2] || y < rect[1] || y > rect[3] {
                occupancy[geom.index(r, c)] = 1;
            }
        }
    }
    AprioriMap { geom, occupancy }
}

/// Run a scenario live against the synthetic world.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunResult, SimError> {
    run_impl(cfg, opts, SensorStream::Live)
}

/// Re-run the pipeline from recorded masks and scans.
pub fn replay_scenario(
    cfg: &ScenarioConfig,
    masks_dir: &Path,
    clouds_dir: &Path,
    opts: &RunOptions,
) -> Result<RunResult, SimError> {
    let masks = FileMaskSource::open(masks_dir)?;
    let mut clouds: Vec<PathBuf> = fs::read_dir(clouds_dir)
        .map_err(|e| SimError::Io(format!("{}: {e}", clouds_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "txt"))
        .collect();
    clouds.sort();
    run_impl(
        cfg,
        opts,
        SensorStream::Replay {
            masks,
            clouds,
            cursor: 0,
        },
    )
}

fn run_impl(
    cfg: &ScenarioConfig,
    opts: &RunOptions,
    mut stream: SensorStream,
) -> Result<RunResult, SimError> {
    let registry = load_registry(cfg)?;
    cfg.validate(&registry)?;
    let seed = opts.seed_override.unwrap_or(cfg.seed);
    let mut world = cfg.build_world(&registry)?;
    let seg_noise: SegNoise = cfg.seg_noise(&registry)?;

    let cam: CameraModel = super::sensors::make_camera(
        cfg.sensors.camera.width,
        cfg.sensors.camera.height,
        cfg.sensors.camera.fx,
        cfg.sensors.camera.fy,
        cfg.sensors.camera.cx,
        cfg.sensors.camera.cy,
        cfg.sensors.camera.mount_height,
    );
    let lidar_ext = lidar_extrinsic(cfg.sensors.lidar.mount_height);
    let cam_ext = camera_extrinsic(cfg.sensors.camera.mount_height);
    let pattern = cfg.sensors.lidar.pattern();

    let mut planner_cfg = cfg.pipeline.planner.clone();
    planner_cfg.robot_speed = cfg.robot.speed;
    // Violations are judged against the true footprint; planning uses an
    // inflated one so exact poses between collision samples stay clear.
    let sampler = FootprintSampler::new(&planner_cfg.footprint);
    let margin = cfg.pipeline.plan_footprint_margin;
    planner_cfg.footprint.length += 2.0 * margin;
    planner_cfg.footprint.width += 2.0 * margin;

    let start = cfg.robot.start;
    let goal = Pose2D::new(cfg.robot.goal[0], cfg.robot.goal[1], 0.0);
    let mut map = LayeredGridMap::new_centered(
        Vector2::new(start[0], start[1]),
        cfg.pipeline.map.size,
        cfg.pipeline.map.resolution,
    );
    seed_static(
        &mut map,
        &world,
        Vector2::new(start[0], start[1]),
        cfg.pipeline.map.seed_mode,
        cfg.pipeline.map.seed_radius,
    );

    let mut aprioris: Vec<AprioriMap> = Vec::new();
    if let Some(rect) = cfg.geofence {
        aprioris.push(geofence_apriori(
            cfg.world.bounds,
            rect,
            cfg.pipeline.map.resolution,
        ));
    }
    if let Some(dir) = &cfg.apriori_dir {
        aprioris.push(import_apriori(Path::new(dir))?);
    }

    let mut tracker = Tracker::new(cfg.pipeline.tracker.clone());
    let mut robot = RobotFollower {
        x: start[0],
        y: start[1],
        heading: start[2],
        traj: None,
        next_idx: 0,
        stopped: false,
    };

    if let Some(dir) = &opts.record_dir {
        fs::create_dir_all(dir.join("masks")).map_err(|e| SimError::Io(e.to_string()))?;
        fs::create_dir_all(dir.join("clouds")).map_err(|e| SimError::Io(e.to_string()))?;
        fs::write(dir.join("scenario.toml"), cfg.to_toml_string())
            .map_err(|e| SimError::Io(e.to_string()))?;
    }

    let dt = 1.0 / cfg.sensors.rate;
    let total_ticks = (cfg.duration * cfg.sensors.rate).ceil() as u64;
    let ticks_per_cycle = (planner_cfg.cycle_period / dt).round().max(1.0) as u64;

    let mut metrics = RunMetrics::default();
    metrics.records.push(MetricsRecord::Header {
        format: METRICS_FORMAT.into(),
        version: METRICS_VERSION,
        scenario: cfg.name.clone(),
        seed,
        deterministic: opts.deterministic,
    });
    let mut decisions = Vec::new();
    let mut robot_trace = Vec::new();
    let mut track_log = Vec::new();
    let mut label_mismatches = 0u64;
    let mut violations = 0u64;
    let mut min_clearance: Option<f64> = None;
    let mut goal_reached = false;
    let mut time_to_goal = None;
    let mut cycles = 0u64;
    let mut replan_count = 0u64;
    let mut switch_count = 0u64;
    let mut keep_count = 0u64;
    let mut stop_count = 0u64;
    let mut no_path_count = 0u64;
    let mut ticks_run = 0u64;

    for tick in 0..total_ticks {
        let t = tick as f64 * dt;
        world.set_time(t);
        let lidar_pose = sensor_pose_world(robot.x, robot.y, robot.heading, &lidar_ext);
        let cam_pose = sensor_pose_world(robot.x, robot.y, robot.heading, &cam_ext);
        let body_pose =
            crate::geometry::Pose3D::from_planar(robot.x, robot.y, robot.heading, crate::geometry::WORLD_FRAME)
                .with_stamp(t);

        let (scan, truth, frame): (LidarScan, Option<Vec<u8>>, PanopticFrame) = match &mut stream {
            SensorStream::Live => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, tick));
                let (mut scan, truth) = simulate_lidar_with_truth(
                    &world,
                    &lidar_pose,
                    &pattern,
                    cfg.noise.lidar_sigma,
                    &mut rng,
                );
                scan.stamp = t;
                let mut frame = render_segmentation(&world, &cam_pose, &cam, &seg_noise, &registry);
                frame.stamp = t;
                (scan, Some(truth), frame)
            }
            SensorStream::Replay {
                masks,
                clouds,
                cursor,
            } => {
                let Some(path) = clouds.get(*cursor) else { break };
                *cursor += 1;
                let scan = read_cloud_file(path)?.into_scan()?;
                let frame = match masks.next_mask(t) {
                    Ok(f) => f,
                    Err(MaskSourceError::EndOfStream) => break,
                    Err(e) => return Err(e.into()),
                };
                (scan, None, frame)
            }
        };

        if let Some(dir) = &opts.record_dir {
            let base = format!("frame_{tick:06}");
            write_frame_files(&dir.join("masks"), &base, &frame)?;
            append_index_line(&dir.join("masks"), &base, t)
                .map_err(|e| SimError::Io(e.to_string()))?;
            write_cloud_file(
                &dir.join("clouds").join(format!("scan_{tick:06}.txt")),
                &CloudRecord::from_scan(&scan),
            )?;
        }

        let mask = threshold_frame(&frame, cfg.pipeline.tau);
        let cloud = label_points(&scan, &mask, &cam, &body_pose)?;
        if let Some(truth) = &truth {
            for (l, gt) in cloud.labels.iter().zip(truth) {
                if *l != 0 && l != gt {
                    label_mismatches += 1;
                }
            }
        }

        let ground_params = match cfg.pipeline.ground {
            GroundParams::Ransac {
                iterations,
                inlier_tol,
                ..
            } => GroundParams::Ransac {
                iterations,
                inlier_tol,
                seed: derive_seed(seed, 2, tick),
            },
            ref fixed => fixed.clone(),
        };
        let (_ground_idx, nonground) = remove_ground(&cloud.points, &ground_params)?;
        // Re-observations of conclusively mapped static structure (walls,
        // fences) must not seed phantom movable objects once they leave the
        // camera's view: points over a known non-traversable static cell are
        // retained map content, not cluster candidates.
        let nonground: Vec<usize> = nonground
            .into_iter()
            .filter(|&i| {
                let p = &cloud.points[i];
                match map.geom.cell_of(p.x, p.y) {
                    Some((r, c)) => {
                        let sc = map.static_class[map.geom.index(r, c)];
                        sc == 0 || registry.traversable(sc) || registry.is_thing(sc)
                    }
                    None => true,
                }
            })
            .collect();
        let clusters = make_clusters(
            &cloud,
            &nonground,
            cfg.pipeline.eps,
            cfg.pipeline.min_pts,
            cfg.pipeline.vote_threshold,
        );
        let split = split_clouds(&cloud, &clusters, &registry);
        if log::log_enabled!(log::Level::Trace) {
            for c in &clusters {
                log::trace!(
                    "tick {tick}: cluster label {} ratio {:.2} size {} bbox ({:.2},{:.2})..({:.2},{:.2})",
                    c.label,
                    c.vote_ratio,
                    c.point_indices.len(),
                    c.bbox.min.x,
                    c.bbox.min.y,
                    c.bbox.max.x,
                    c.bbox.max.y
                );
            }
        }
        let step = tracker.step(&split.detections, t)?;

        // Thing-labeled stragglers (cluster noise of movable objects) must
        // not be remembered by the static layer: it holds the non-movable
        // surroundings only, and a written cell never reverts.
        let static_indices: Vec<usize> = split
            .static_indices
            .iter()
            .copied()
            .filter(|&i| !registry.is_thing(cloud.labels[i]))
            .collect();
        let mut static_cloud = select_points(&cloud, &static_indices);
        let fill = ground_fill(
            &cloud,
            &scan.sensor_pose,
            &pattern,
            &cfg.pipeline.ground_fill,
            &registry,
        );
        static_cloud.points.extend_from_slice(&fill.points);
        static_cloud.labels.extend_from_slice(&fill.labels);

        map.re_anchor(Vector2::new(robot.x, robot.y));
        map.update_static(&static_cloud);
        map.update_dynamic(&step.confirmed, cfg.pipeline.map.inflation_radius);
        map.merge_layers();
        map.derive_occupancy(&registry);
        for apriori in &aprioris {
            map.union_apriori(apriori)?;
        }
        map.derive_cost(&registry);

        for tr in &step.confirmed {
            track_log.push(track_log_line(t, tr));
        }

        let snap = map.snapshot();
        if !footprint_valid_sampled(&snap, robot.x, robot.y, robot.heading, &sampler) {
            violations += 1;
            if log::log_enabled!(log::Level::Debug) {
                let mut culprits = Vec::new();
                FootprintSampler::new(&cfg.pipeline.planner.footprint).for_each_sample(
                    robot.x,
                    robot.y,
                    robot.heading,
                    |wx, wy| {
                        if let Some((r, c)) = map.geom.cell_of(wx, wy) {
                            let i = map.geom.index(r, c);
                            if map.occupancy[i] != 0 && culprits.len() < 3 {
                                culprits.push((wx, wy, map.static_class[i], map.dynamic_class[i]));
                            }
                        }
                    },
                );
                log::debug!(
                    "tick {tick}: violation at ({:.2}, {:.2}, {:.2}); cells {:?}",
                    robot.x,
                    robot.y,
                    robot.heading,
                    culprits
                );
            }
        }
        if let Some(c) = world.clearance(robot.x, robot.y) {
            min_clearance = Some(min_clearance.map_or(c, |m: f64| m.min(c)));
        }

        if tick % ticks_per_cycle == 0 {
            let cycle = tick / ticks_per_cycle;
            cycles += 1;
            let mut pc = planner_cfg.clone();
            pc.seed = derive_seed(seed, 3, cycle);
            let budget = if opts.deterministic {
                PlanBudget::Iterations(pc.iteration_budget)
            } else {
                PlanBudget::WallClock(std::time::Duration::from_secs_f64(pc.plan_budget))
            };
            let state = crate::planner::RobotState {
                pose: robot.pose(t),
                velocity: robot.velocity(cfg.robot.speed),
            };
            let (decision, info) = replan_step(&state, robot.traj.as_ref(), &goal, &snap, &pc, &budget);
            log::debug!(
                "cycle {cycle}: robot ({:.2}, {:.2}, {:.2}) decision {} candidate {:?} remaining {:?} tracks {} start_valid {}",
                robot.x,
                robot.y,
                robot.heading,
                decision.kind(),
                info.candidate_cost,
                info.remaining_cost,
                tracker.tracks().len(),
                footprint_valid_sampled(&snap, robot.x, robot.y, robot.heading, &sampler),
            );
            match &decision {
                Decision::Switch(tr) => {
                    switch_count += 1;
                    replan_count += 1;
                    robot.next_idx = tr.nearest_waypoint(robot.x, robot.y);
                    robot.traj = Some(tr.clone());
                    robot.stopped = false;
                }
                Decision::Keep => {
                    keep_count += 1;
                    replan_count += 1;
                    robot.stopped = false;
                }
                Decision::Stop => {
                    // The active path poses a collision risk (infinite
                    // cost): halt and discard it so the next cycle plans
                    // fresh from standstill until a safe path is found.
                    stop_count += 1;
                    robot.stopped = true;
                    robot.traj = None;
                }
                Decision::NoPath => {
                    no_path_count += 1;
                    replan_count += 1;
                    robot.traj = None;
                }
            }
            metrics.records.push(MetricsRecord::Cycle {
                cycle,
                stamp: t,
                decision: decision.kind().into(),
                candidate_cost: info.candidate_cost,
                remaining_cost: info.remaining_cost,
                plan_iterations: info.iterations,
                plan_wall_ms: (!opts.deterministic).then_some(info.plan_wall_secs * 1000.0),
            });
            decisions.push(DecisionRecord {
                cycle,
                decision: decision.kind().into(),
                candidate_cost: info.candidate_cost,
                remaining_cost: info.remaining_cost,
            });

            if opts.export_cycles.contains(&cycle) {
                if let Some(out) = &opts.out_dir {
                    export_layers(&out.join(format!("maps/cycle_{cycle:04}")), &map)?;
                    if let Some(tr) = &robot.traj {
                        write_trajectory_file(
                            &out.join(format!("maps/cycle_{cycle:04}/trajectory.txt")),
                            tr,
                            &snap,
                            &sampler,
                        )?;
                    }
                }
            }
        }

        robot.advance(cfg.robot.speed * dt);
        robot_trace.push(robot.pose(t));
        ticks_run = tick + 1;

        let goal_dist = ((robot.x - goal.x).powi(2) + (robot.y - goal.y).powi(2)).sqrt();
        if goal_dist <= planner_cfg.goal_tolerance {
            goal_reached = true;
            time_to_goal = Some(t);
            break;
        }
    }

    metrics.records.push(MetricsRecord::Summary {
        ticks: ticks_run,
        cycles,
        replan_count,
        switch_count,
        keep_count,
        stop_count,
        no_path_count,
        violations,
        min_clearance,
        goal_reached,
        time_to_goal,
    });

    if let Some(out) = &opts.out_dir {
        fs::create_dir_all(out).map_err(|e| SimError::Io(e.to_string()))?;
        fs::write(out.join("metrics.jsonl"), metrics.to_jsonl())
            .map_err(|e| SimError::Io(e.to_string()))?;
        let mut dec_text = String::new();
        for d in &decisions {
            dec_text.push_str(&serde_json::to_string(d).expect("decision serializes"));
            dec_text.push('\n');
        }
        fs::write(out.join("decisions.jsonl"), dec_text)
            .map_err(|e| SimError::Io(e.to_string()))?;
        fs::write(out.join("tracks.log"), track_log.join("\n") + "\n")
            .map_err(|e| SimError::Io(e.to_string()))?;
    }

    Ok(RunResult {
        metrics,
        decisions,
        robot_trace,
        track_log,
        label_mismatches,
        goal_reached,
        violations,
    })
}

fn seed_static(
    map: &mut LayeredGridMap,
    world: &World,
    center: Vector2<f64>,
    mode: super::scenario::SeedMode,
    radius: f64,
) {
    let r2 = radius * radius;
    for r in 0..map.geom.rows {
        for c in 0..map.geom.cols {
            let (x, y) = map.geom.center(r, c);
            let seeded = match mode {
                super::scenario::SeedMode::Disk => {
                    radius > 0.0 && (x - center.x).powi(2) + (y - center.y).powi(2) <= r2
                }
                super::scenario::SeedMode::Survey => {
                    x >= world.bounds[0]
                        && x <= world.bounds[2]
                        && y >= world.bounds[1]
                        && y <= world.bounds[3]
                }
            };
            if seeded {
                let idx = map.geom.index(r, c);
                map.static_class[idx] = world.terrain_class_at(x, y);
            }
        }
    }
}

/// Per-waypoint trajectory export with cumulative cost decomposition,
/// evaluated against the given snapshot.
fn write_trajectory_file(
    path: &Path,
    traj: &Trajectory,
    snap: &crate::semantic_map::MapSnapshot,
    sampler: &FootprintSampler,
) -> Result<(), SimError> {
    use crate::planner::{footprint_cell_average, CellScratch};
    let mut out = String::from("stamp x y heading cum_length cum_semantic\n");
    let mut scratch = CellScratch::new();
    let mut cum_len = 0.0;
    let mut cum_sem = 0.0;
    for (i, w) in traj.waypoints.iter().enumerate() {
        if i > 0 {
            let p = &traj.waypoints[i - 1];
            cum_len += ((w.x - p.x).powi(2) + (w.y - p.y).powi(2)).sqrt();
        }
        cum_sem += footprint_cell_average(snap, w.x, w.y, w.heading, sampler, &mut scratch);
        out.push_str(&format!(
            "{:?} {:?} {:?} {:?} {:?} {:?}\n",
            w.stamp, w.x, w.y, w.heading, cum_len, cum_sem
        ));
    }
    fs::write(path, out).map_err(|e| SimError::Io(e.to_string()))
}
