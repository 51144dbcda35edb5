//! Simulated LiDAR and panoptic camera over the synthetic world.

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::cloud::LidarScan;
use crate::geometry::{CameraModel, Pose3D, BODY_FRAME, WORLD_FRAME};
use crate::panoptic::{ClassId, ClassRegistry, PanopticFrame};
use crate::panoptic::{MaskSource, MaskSourceError};

/// How far the camera renderer casts rays.
const RENDER_RANGE: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarPattern {
    pub channels: u32,
    pub azimuth_steps: u32,
    /// Elevation limits in radians; channels are spread evenly between them.
    pub elev_min: f64,
    pub elev_max: f64,
    pub max_range: f64,
}

impl Default for LidarPattern {
    fn default() -> Self {
        Self {
            channels: 32,
            azimuth_steps: 512,
            elev_min: -45f64.to_radians(),
            elev_max: 45f64.to_radians(),
            max_range: 50.0,
        }
    }
}

impl LidarPattern {
    pub fn elevation(&self, channel: u32) -> f64 {
        if self.channels <= 1 {
            (self.elev_min + self.elev_max) / 2.0
        } else {
            self.elev_min
                + (self.elev_max - self.elev_min) * channel as f64 / (self.channels - 1) as f64
        }
    }

    pub fn azimuth(&self, step: u32) -> f64 {
        2.0 * std::f64::consts::PI * step as f64 / self.azimuth_steps as f64
    }

    /// Unit ray direction in the sensor frame.
    pub fn ray(&self, channel: u32, step: u32) -> Vector3<f64> {
        let e = self.elevation(channel);
        let a = self.azimuth(step);
        Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
    }
}

/// Body-frame mount of the LiDAR: no rotation, raised by `height`.
pub fn lidar_extrinsic(height: f64) -> Pose3D {
    Pose3D::new(
        Vector3::new(0.0, 0.0, height),
        UnitQuaternion::identity(),
        BODY_FRAME,
    )
}

/// Body-frame mount of the camera: optical axis along body +x, image x to
/// the right (body -y), image y down (body -z), raised by `height`.
pub fn camera_extrinsic(height: f64) -> Pose3D {
    let rot = UnitQuaternion::from_basis_unchecked(&[
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(1.0, 0.0, 0.0),
    ]);
    Pose3D::new(Vector3::new(0.0, 0.0, height), rot, BODY_FRAME)
}

/// Cast the full scan pattern; returns the scan and the ground-truth class
/// of each returned point (the oracle for label-consistency checks).
pub fn simulate_lidar_with_truth(
    world: &World,
    sensor_pose: &Pose3D,
    pattern: &LidarPattern,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (LidarScan, Vec<ClassId>) {
    let origin = Point3::from(sensor_pose.translation);
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for c in 0..pattern.channels {
        for a in 0..pattern.azimuth_steps {
            let dir_sensor = pattern.ray(c, a);
            let dir_world = sensor_pose.rotation.transform_vector(&dir_sensor);
            if let Some(hit) = world.raycast(origin, dir_world, pattern.max_range) {
                let range = if noise_sigma > 0.0 {
                    let n: f64 = rng.sample(rand_distr::Normal::new(0.0, noise_sigma).unwrap());
                    (hit.t + n).max(0.01)
                } else {
                    hit.t
                };
                points.push(Point3::from(dir_sensor * range));
                truth.push(hit.class_id);
            }
        }
    }
    (
        LidarScan {
            points,
            stamp: world.time,
            sensor_pose: sensor_pose.clone(),
        },
        truth,
    )
}

/// Ray-cast first-hit LiDAR scan with optional Gaussian range noise.
pub fn simulate_lidar(
    world: &World,
    sensor_pose: &Pose3D,
    pattern: &LidarPattern,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> LidarScan {
    simulate_lidar_with_truth(world, sensor_pose, pattern, noise_sigma, rng).0
}

/// Confusion noise: pixels whose true class is in the pair split their
/// probability mass `ratio` / `1 - ratio` between the two classes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegNoise {
    pub confusion: Vec<ConfusionPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub class_a: ClassId,
    pub class_b: ClassId,
    pub ratio: f32,
}

/// Render the ground-truth panoptic frame from the camera pose.
///
/// Without noise every hit pixel carries probability 1.0 on its true class;
/// pixels whose ray escapes the world abstain entirely.
pub fn render_segmentation(
    world: &World,
    cam_pose_world: &Pose3D,
    cam: &CameraModel,
    noise: &SegNoise,
    registry: &ClassRegistry,
) -> PanopticFrame {
    let origin = Point3::from(cam_pose_world.translation);
    let mut frame = PanopticFrame::new_abstain(cam.width, cam.height, world.time);
    for v in 0..cam.height {
        for u in 0..cam.width {
            let dir_cam = cam.pixel_ray(u as f64, v as f64);
            let dir_world = cam_pose_world.rotation.transform_vector(&dir_cam);
            let Some(hit) = world.raycast(origin, dir_world, RENDER_RANGE) else {
                continue;
            };
            let pair = noise
                .confusion
                .iter()
                .find(|p| p.class_a == hit.class_id || p.class_b == hit.class_id);
            let dist: Vec<(ClassId, f32)> = match pair {
                Some(p) => vec![(p.class_a, p.ratio), (p.class_b, 1.0 - p.ratio)],
                None => vec![(hit.class_id, 1.0)],
            };
            // Instance ids only make sense while the argmax stays a thing.
            let argmax = dist
                .iter()
                .copied()
                .filter(|d| d.1 > 0.0)
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|d| d.0);
            let instance = match argmax {
                Some(c) if registry.is_thing(c) => hit.instance_id,
                _ => 0,
            };
            frame
                .set_pixel(u, v, &dist, instance)
                .expect("renderer emits valid distributions");
        }
    }
    frame
}

/// Simulator-backed mask source for open-loop use: renders the world at the
/// requested stamp from a scripted camera pose.
pub struct SimMaskSource<F: FnMut(f64) -> Pose3D> {
    pub world: World,
    pub cam: CameraModel,
    pub noise: SegNoise,
    pub registry: ClassRegistry,
    pub pose_at: F,
}

impl<F: FnMut(f64) -> Pose3D> MaskSource for SimMaskSource<F> {
    fn next_mask(&mut self, stamp: f64) -> Result<PanopticFrame, MaskSourceError> {
        self.world.set_time(stamp);
        let pose = (self.pose_at)(stamp);
        Ok(render_segmentation(
            &self.world,
            &pose,
            &self.cam,
            &self.noise,
            &self.registry,
        ))
    }
}

/// Build a pinhole camera model from intrinsics plus mount height.
pub fn make_camera(
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    mount_height: f64,
) -> CameraModel {
    CameraModel {
        fx,
        fy,
        cx,
        cy,
        width,
        height,
        extrinsic: camera_extrinsic(mount_height),
    }
}

/// World pose of a sensor given the planar body pose and its extrinsic.
pub fn sensor_pose_world(x: f64, y: f64, heading: f64, extrinsic: &Pose3D) -> Pose3D {
    let mut pose = Pose3D::from_planar(x, y, heading, WORLD_FRAME).compose(extrinsic);
    pose.frame_id = WORLD_FRAME.to_string();
    pose
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panoptic::threshold_frame;
    use crate::sim::world::{Actor, ConvexPolygon, Obstacle};
    use nalgebra::Vector2;
    use rand::SeedableRng;

    fn flat_world() -> World {
        World {
            default_terrain: 3,
            patches: Vec::new(),
            obstacles: Vec::new(),
            actors: Vec::new(),
            bounds: [0.0, 0.0, 50.0, 50.0],
            time: 0.0,
        }
    }

    fn test_camera() -> CameraModel {
        make_camera(64, 48, 32.0, 32.0, 32.0, 24.0, 1.5)
    }

    #[test]
    fn lidar_ray_down_measures_height() {
        let world = flat_world();
        let pattern = LidarPattern {
            channels: 1,
            azimuth_steps: 4,
            elev_min: -std::f64::consts::FRAC_PI_2,
            elev_max: -std::f64::consts::FRAC_PI_2,
            max_range: 50.0,
        };
        let pose = sensor_pose_world(5.0, 5.0, 0.0, &lidar_extrinsic(2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scan = simulate_lidar(&world, &pose, &pattern, 0.0, &mut rng);
        assert_eq!(scan.points.len(), 4);
        for p in &scan.points {
            assert!((p.coords.norm() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn horizontal_rays_miss_flat_ground() {
        let world = flat_world();
        let pattern = LidarPattern {
            channels: 1,
            azimuth_steps: 8,
            elev_min: 0.0,
            elev_max: 0.0,
            max_range: 50.0,
        };
        let pose = sensor_pose_world(5.0, 5.0, 0.0, &lidar_extrinsic(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scan = simulate_lidar(&world, &pose, &pattern, 0.0, &mut rng);
        assert!(scan.points.is_empty());
    }

    #[test]
    fn box_return_at_analytic_range() {
        let mut world = flat_world();
        world.obstacles.push(Obstacle {
            polygon: ConvexPolygon::rect(10.0, 4.0, 11.0, 6.0),
            height: 2.0,
            class_id: 12,
        });
        let pattern = LidarPattern {
            channels: 1,
            azimuth_steps: 1,
            elev_min: 0.0,
            elev_max: 0.0,
            max_range: 50.0,
        };
        // Sensor at (5, 5, 1) looking along +x: wall face at x = 10.
        let pose = sensor_pose_world(5.0, 5.0, 0.0, &lidar_extrinsic(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (scan, truth) = simulate_lidar_with_truth(&world, &pose, &pattern, 0.0, &mut rng);
        assert_eq!(scan.points.len(), 1);
        assert!((scan.points[0].coords.norm() - 5.0).abs() < 1e-9);
        assert_eq!(truth[0], 12);
    }

    #[test]
    fn range_noise_is_seed_deterministic() {
        let world = flat_world();
        let pattern = LidarPattern::default();
        let pose = sensor_pose_world(5.0, 5.0, 0.3, &lidar_extrinsic(1.5));
        let scan1 = simulate_lidar(&world, &pose, &pattern, 0.02, &mut ChaCha8Rng::seed_from_u64(7));
        let scan2 = simulate_lidar(&world, &pose, &pattern, 0.02, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(scan1.points, scan2.points);
    }

    #[test]
    fn render_ground_truth_probabilities() {
        let reg = ClassRegistry::default_construction();
        let world = flat_world();
        let cam = test_camera();
        let pose = sensor_pose_world(5.0, 5.0, 0.0, &cam.extrinsic);
        let frame = render_segmentation(&world, &pose, &cam, &SegNoise::default(), &reg);
        // Lower half of the image sees ground at probability 1.
        let mut ground_pixels = 0;
        for v in 30..48 {
            for u in 0..64 {
                let idx = frame.index(u, v);
                if let Some((c, p)) = frame.argmax(idx) {
                    assert_eq!(c, 3);
                    assert_eq!(p, 1.0);
                    ground_pixels += 1;
                }
            }
        }
        assert!(ground_pixels > 500);
        // Above the horizon nothing is hit: abstention.
        let idx = frame.index(32, 0);
        assert_eq!(frame.argmax(idx), None);
    }

    #[test]
    fn actor_pixels_carry_instance_id() {
        let reg = ClassRegistry::default_construction();
        let mut world = flat_world();
        world.actors.push(Actor {
            half_extents: Vector2::new(0.4, 0.4),
            height: 1.8,
            class_id: 20,
            speed: 0.0,
            script: vec![Vector2::new(10.0, 5.0)],
            position: Vector2::new(10.0, 5.0),
        });
        world.set_time(0.0);
        let cam = test_camera();
        let pose = sensor_pose_world(5.0, 5.0, 0.0, &cam.extrinsic);
        let frame = render_segmentation(&world, &pose, &cam, &SegNoise::default(), &reg);
        let mut person_pixels = 0;
        for idx in 0..frame.len() {
            if let Some((20, _)) = frame.argmax(idx) {
                assert_eq!(frame.instance(idx), 1);
                person_pixels += 1;
            }
        }
        assert!(person_pixels > 4, "person occupies a visible blob");
        frame.validate(&reg).unwrap();
    }

    #[test]
    fn confusion_noise_thresholds_to_unknown() {
        let reg = ClassRegistry::default_construction();
        let mut world = flat_world();
        world.default_terrain = 5; // dirt
        let cam = test_camera();
        let pose = sensor_pose_world(5.0, 5.0, 0.0, &cam.extrinsic);
        let noise = SegNoise {
            confusion: vec![ConfusionPair {
                class_a: 5,
                class_b: 3,
                ratio: 0.5,
            }],
        };
        let frame = render_segmentation(&world, &pose, &cam, &noise, &reg);
        let mask = threshold_frame(&frame, 0.6);
        let unknowns = mask.classes.iter().filter(|&&c| c == 0).count();
        assert_eq!(unknowns, mask.classes.len(), "all pixels inconclusive");
        // At tau 0.4 the tie resolves to the lower class id.
        let mask = threshold_frame(&frame, 0.4);
        let ground = mask.classes.iter().filter(|&&c| c == 3).count();
        assert!(ground > 500);
    }

    #[test]
    fn sim_mask_source_implements_trait() {
        let reg = ClassRegistry::default_construction();
        let cam = test_camera();
        let extr = cam.extrinsic.clone();
        let mut src = SimMaskSource {
            world: flat_world(),
            cam: cam.clone(),
            noise: SegNoise::default(),
            registry: reg,
            pose_at: move |_t| sensor_pose_world(5.0, 5.0, 0.0, &extr),
        };
        let f = src.next_mask(0.5).unwrap();
        assert_eq!(f.stamp, 0.5);
        let idx = f.index(32, 40);
        assert_eq!(f.argmax(idx).map(|d| d.0), Some(3));
    }
}
