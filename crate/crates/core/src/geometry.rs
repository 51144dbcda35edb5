//! Frames, rigid transforms, pinhole camera projection, and axis-aligned
//! bounding boxes shared by every downstream stage.
//!
//! Conventions (held fixed across the simulator and the labeling pipeline):
//! world/body frames are right-handed with +z up; the camera frame is
//! right-handed with +z forward, +x right, +y down (pixel v grows downward).

use nalgebra::{Point3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical frame names used by the pipeline.
pub const WORLD_FRAME: &str = "world";
pub const BODY_FRAME: &str = "body";
pub const CAMERA_FRAME: &str = "camera";
pub const LIDAR_FRAME: &str = "lidar";

/// Near-plane distance in meters; points at or behind it are not visible.
pub const NEAR_PLANE_Z: f64 = 0.01;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("empty cluster: bounding box of zero points is undefined")]
    EmptyCluster,
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

/// Planar pose: position, heading, and the frame it is expressed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, wrapped to (-pi, pi].
    pub heading: f64,
    pub frame_id: String,
    pub stamp: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            frame_id: WORLD_FRAME.to_string(),
            stamp: 0.0,
        }
    }

    pub fn with_stamp(mut self, stamp: f64) -> Self {
        self.stamp = stamp;
        self
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.position() - other.position()).norm()
    }
}

/// Rigid transform from a child frame into `frame_id`.
///
/// `transform_point(p)` maps child-frame coordinates into the frame named by
/// `frame_id` via `R * p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub frame_id: String,
    pub stamp: f64,
}

impl Pose3D {
    pub fn identity(frame_id: &str) -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            frame_id: frame_id.to_string(),
            stamp: 0.0,
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>, frame_id: &str) -> Self {
        Self {
            translation,
            rotation,
            frame_id: frame_id.to_string(),
            stamp: 0.0,
        }
    }

    /// Planar pose (x, y, yaw about +z) lifted to 3D.
    pub fn from_planar(x: f64, y: f64, yaw: f64, frame_id: &str) -> Self {
        Self::new(
            Vector3::new(x, y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            frame_id,
        )
    }

    pub fn with_stamp(mut self, stamp: f64) -> Self {
        self.stamp = stamp;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.frame_id.is_empty() {
            return Err(GeometryError::InvalidPose("empty frame_id".into()));
        }
        let n = self.rotation.as_ref().norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose(format!(
                "quaternion norm {n} not within 1e-9 of 1"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation.transform_point(p) + self.translation
    }

    /// Inverse transform: maps `frame_id` coordinates back into the child frame.
    pub fn inverse_transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation
            .inverse_transform_point(&(p - self.translation).into())
    }

    /// `self` maps B -> A, `other` maps C -> B; result maps C -> A.
    pub fn compose(&self, other: &Pose3D) -> Pose3D {
        Pose3D {
            translation: self.rotation.transform_vector(&other.translation) + self.translation,
            rotation: self.rotation * other.rotation,
            frame_id: self.frame_id.clone(),
            stamp: self.stamp.max(other.stamp),
        }
    }

    pub fn inverse(&self) -> Pose3D {
        let inv_rot = self.rotation.inverse();
        Pose3D {
            translation: -(inv_rot.transform_vector(&self.translation)),
            rotation: inv_rot,
            frame_id: self.frame_id.clone(),
            stamp: self.stamp,
        }
    }
}

/// Apply a rigid transform to a point list. Output is in the pose's target frame.
pub fn transform_points(points: &[Point3<f64>], pose: &Pose3D) -> Vec<Point3<f64>> {
    points.iter().map(|p| pose.transform_point(p)).collect()
}

/// Pinhole camera intrinsics plus the camera-in-body extrinsic.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Pose of the camera frame in the body frame.
    pub extrinsic: Pose3D,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidCamera("focal length must be > 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be > 0".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 {
            return Err(GeometryError::InvalidCamera(format!(
                "cx {} outside [0, {})",
                self.cx, self.width
            )));
        }
        if self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(GeometryError::InvalidCamera(format!(
                "cy {} outside [0, {})",
                self.cy, self.height
            )));
        }
        self.extrinsic.validate()
    }

    /// Ray direction in the camera frame through continuous pixel coordinate (u, v).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }
}

/// Project a camera-frame point onto the image plane.
///
/// Returns `None` when the point is behind the near plane or the projection
/// falls outside the image; this is a normal outcome, not an error.
pub fn project_point(p_cam: &Point3<f64>, cam: &CameraModel) -> Option<(f64, f64)> {
    if p_cam.z <= NEAR_PLANE_Z {
        return None;
    }
    let u = cam.fx * p_cam.x / p_cam.z + cam.cx;
    let v = cam.fy * p_cam.y / p_cam.z + cam.cy;
    if u < 0.0 || u >= cam.width as f64 || v < 0.0 || v >= cam.height as f64 {
        return None;
    }
    Some((u, v))
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb3D {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb3D {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

/// Tight componentwise bounding box of a non-empty point list.
pub fn aabb_of(points: &[Point3<f64>]) -> Result<Aabb3D, GeometryError> {
    let first = points.first().ok_or(GeometryError::EmptyCluster)?;
    let mut min = *first;
    let mut max = *first;
    for p in &points[1..] {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        min.z = min.z.min(p.z);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
        max.z = max.z.max(p.z);
    }
    Ok(Aabb3D { min, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn test_cam() -> CameraModel {
        CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            extrinsic: Pose3D::identity(BODY_FRAME),
        }
    }

    #[test]
    fn identity_transform_keeps_points() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-4.0, 0.5, 0.0)];
        let out = transform_points(&pts, &Pose3D::identity(WORLD_FRAME));
        assert_eq!(out, pts);
    }

    #[test]
    fn pure_translation() {
        let pose = Pose3D::new(
            Vector3::new(1.0, 0.0, 0.0),
            UnitQuaternion::identity(),
            WORLD_FRAME,
        );
        let out = transform_points(&[Point3::origin()], &pose);
        assert_eq!(out[0], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_yaw() {
        let pose = Pose3D::from_planar(0.0, 0.0, FRAC_PI_2, WORLD_FRAME);
        let out = pose.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(out.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn principal_point_projection() {
        let cam = test_cam();
        assert_eq!(
            project_point(&Point3::new(0.0, 0.0, 1.0), &cam),
            Some((320.0, 240.0))
        );
    }

    #[test]
    fn off_axis_projection() {
        // u = 100 * 0.5/2 + 320 = 345
        let cam = test_cam();
        assert_eq!(
            project_point(&Point3::new(0.5, 0.0, 2.0), &cam),
            Some((345.0, 240.0))
        );
    }

    #[test]
    fn behind_camera_not_visible() {
        let cam = test_cam();
        assert_eq!(project_point(&Point3::new(0.0, 0.0, -1.0), &cam), None);
    }

    #[test]
    fn outside_image_not_visible() {
        let cam = test_cam();
        assert_eq!(project_point(&Point3::new(10.0, 0.0, 1.0), &cam), None);
    }

    #[test]
    fn aabb_examples() {
        let p = Point3::new(1.0, 2.0, 3.0);
        let b = aabb_of(&[p]).unwrap();
        assert_eq!(b.min, p);
        assert_eq!(b.max, p);

        let b = aabb_of(&[Point3::origin(), Point3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(b.min, Point3::origin());
        assert_eq!(b.max, Point3::new(1.0, 2.0, 3.0));

        let b = aabb_of(&[
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(-1.0, -1.0, -1.0),
            Point3::origin(),
        ])
        .unwrap();
        assert_eq!(b.min, Point3::new(-1.0, -1.0, -1.0));
        assert_eq!(b.max, Point3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn aabb_of_empty_is_error() {
        assert_eq!(aabb_of(&[]), Err(GeometryError::EmptyCluster));
    }

    #[test]
    fn camera_validation_rejects_bad_intrinsics() {
        let mut cam = test_cam();
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
        let mut cam = test_cam();
        cam.cx = 640.0;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn heading_wraps_into_half_open_interval() {
        assert_abs_diff_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_abs_diff_eq!(
            wrap_angle(-std::f64::consts::PI),
            std::f64::consts::PI,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(wrap_angle(0.5), 0.5);
    }

    fn arb_pose() -> impl Strategy<Value = Pose3D> {
        (
            prop::array::uniform3(-50.0f64..50.0),
            -3.1f64..3.1,
            -1.5f64..1.5,
            -3.1f64..3.1,
        )
            .prop_map(|(t, roll, pitch, yaw)| {
                Pose3D::new(
                    Vector3::new(t[0], t[1], t[2]),
                    UnitQuaternion::from_euler_angles(roll, pitch, yaw),
                    WORLD_FRAME,
                )
            })
    }

    fn arb_points() -> impl Strategy<Value = Vec<Point3<f64>>> {
        prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 1..40)
            .prop_map(|v| v.into_iter().map(|a| Point3::new(a[0], a[1], a[2])).collect())
    }

    proptest! {
        #[test]
        fn transform_roundtrip(pose in arb_pose(), pts in arb_points()) {
            let fwd = transform_points(&pts, &pose);
            let back = transform_points(&fwd, &pose.inverse());
            for (a, b) in pts.iter().zip(back.iter()) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn projection_scale_invariant(
            x in -2.0f64..2.0, y in -1.5f64..1.5, z in 0.5f64..10.0, s in 1.0f64..20.0
        ) {
            let cam = test_cam();
            let p = Point3::new(x, y, z);
            let ps = Point3::new(x * s, y * s, z * s);
            if let (Some((u1, v1)), Some((u2, v2))) = (project_point(&p, &cam), project_point(&ps, &cam)) {
                prop_assert!((u1 - u2).abs() < 1e-9);
                prop_assert!((v1 - v2).abs() < 1e-9);
            }
        }

        #[test]
        fn aabb_contains_all_inputs(pts in arb_points()) {
            let b = aabb_of(&pts).unwrap();
            for p in &pts {
                prop_assert!(b.contains(p));
            }
        }
    }
}
