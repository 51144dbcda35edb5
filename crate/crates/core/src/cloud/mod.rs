//! Scan-to-labeled-cloud pipeline: projection labeling, ground removal,
//! clustering, threshold-gated majority voting, and static/dynamic splitting.

mod dbscan;
mod ground;
mod io;

pub use dbscan::dbscan;
pub use ground::{remove_ground, GroundParams};
pub use io::{read_cloud_file, write_cloud_file, CloudRecord};

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{aabb_of, project_point, Aabb3D, CameraModel, Pose3D};
use crate::panoptic::{ClassId, ClassRegistry, PanopticMask, UNKNOWN_CLASS};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("frame mismatch: expected '{expected}', got '{got}'")]
    FrameMismatch { expected: String, got: String },
    #[error("degenerate cloud: cannot fit a plane")]
    DegenerateCloud,
    #[error("cloud io error: {0}")]
    Io(String),
    #[error("cloud parse error: {0}")]
    Parse(String),
}

/// One LiDAR sweep: points in the sensor frame plus the sensor's world pose.
#[derive(Debug, Clone)]
pub struct LidarScan {
    pub points: Vec<Point3<f64>>,
    pub stamp: f64,
    pub sensor_pose: Pose3D,
}

/// World-frame points with a class label per point (0 = unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Point3<f64>>,
    pub labels: Vec<ClassId>,
    pub stamp: f64,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A voted point cluster from one scan.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub point_indices: Vec<usize>,
    pub label: ClassId,
    pub vote_ratio: f64,
    pub bbox: Aabb3D,
}

/// Result of splitting a labeled cloud around its clusters.
#[derive(Debug, Clone)]
pub struct SplitClouds {
    pub static_indices: Vec<usize>,
    pub dynamic_indices: Vec<usize>,
    pub detections: Vec<crate::tracker::Detection>,
}

/// Round-half-up pixel snapping, applied to u and v independently.
#[inline]
fn nearest_pixel(u: f64, v: f64) -> (i64, i64) {
    ((u + 0.5).floor() as i64, (v + 0.5).floor() as i64)
}

/// Label every scan point from the segmentation mask.
///
/// Each point is transformed into the camera frame and projected; visible
/// points take the class of the nearest pixel, everything else gets the
/// unknown label. Output points are in the world frame.
pub fn label_points(
    scan: &LidarScan,
    mask: &PanopticMask,
    cam: &CameraModel,
    body_pose: &Pose3D,
) -> Result<LabeledPointCloud, CloudError> {
    if scan.sensor_pose.frame_id != body_pose.frame_id {
        return Err(CloudError::FrameMismatch {
            expected: body_pose.frame_id.clone(),
            got: scan.sensor_pose.frame_id.clone(),
        });
    }
    let cam_in_world = body_pose.compose(&cam.extrinsic);
    let world_from_sensor = &scan.sensor_pose;
    let cam_inv = cam_in_world.inverse();

    let mut points = Vec::with_capacity(scan.points.len());
    let mut labels = Vec::with_capacity(scan.points.len());
    for p in &scan.points {
        let pw = world_from_sensor.transform_point(p);
        let pc = cam_inv.transform_point(&pw);
        let label = match project_point(&pc, cam) {
            Some((u, v)) => {
                let (pu, pv) = nearest_pixel(u, v);
                if pu >= 0 && pv >= 0 && (pu as u32) < mask.width && (pv as u32) < mask.height {
                    mask.class_at(pu as u32, pv as u32)
                } else {
                    UNKNOWN_CLASS
                }
            }
            None => UNKNOWN_CLASS,
        };
        points.push(pw);
        labels.push(label);
    }
    Ok(LabeledPointCloud {
        points,
        labels,
        stamp: scan.stamp,
    })
}

/// Majority vote over a cluster's point labels.
///
/// The modal class wins iff its share of the *total* cluster size reaches
/// `vote_threshold`; ties and inconclusive votes yield unknown. The returned
/// ratio is the modal share either way.
pub fn vote_label(labels: &[ClassId], vote_threshold: f64) -> (ClassId, f64) {
    assert!(!labels.is_empty(), "vote over empty label list");
    let mut counts = [0u32; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let mut top_class = UNKNOWN_CLASS;
    let mut top_count = 0u32;
    let mut tied = false;
    for (c, &count) in counts.iter().enumerate() {
        if count > top_count {
            top_count = count;
            top_class = c as ClassId;
            tied = false;
        } else if count == top_count && count > 0 {
            tied = true;
        }
    }
    let ratio = top_count as f64 / labels.len() as f64;
    if tied || top_class == UNKNOWN_CLASS || ratio < vote_threshold {
        (UNKNOWN_CLASS, ratio)
    } else {
        (top_class, ratio)
    }
}

/// Cluster the nonground points geometrically, then vote each cluster's label.
pub fn make_clusters(
    cloud: &LabeledPointCloud,
    nonground: &[usize],
    eps: f64,
    min_pts: usize,
    vote_threshold: f64,
) -> Vec<Cluster> {
    if nonground.is_empty() {
        return Vec::new();
    }
    let pts: Vec<Point3<f64>> = nonground.iter().map(|&i| cloud.points[i]).collect();
    let assignment = dbscan(&pts, eps, min_pts);
    let n_clusters = assignment.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (local, &cluster) in assignment.iter().enumerate() {
        if let Some(c) = cluster {
            members[c].push(nonground[local]);
        }
    }
    members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|point_indices| {
            let labels: Vec<ClassId> = point_indices.iter().map(|&i| cloud.labels[i]).collect();
            let (label, vote_ratio) = vote_label(&labels, vote_threshold);
            let pts: Vec<Point3<f64>> = point_indices.iter().map(|&i| cloud.points[i]).collect();
            let bbox = aabb_of(&pts).expect("cluster is non-empty");
            Cluster {
                point_indices,
                label,
                vote_ratio,
                bbox,
            }
        })
        .collect()
}

/// Split the cloud into static and dynamic parts.
///
/// Every point inside the bounding box of a thing-labeled or unknown-labeled
/// cluster goes to the dynamic cloud (ground points included); everything
/// else, stuff clusters included, stays static. One detection is emitted per
/// dynamic cluster.
pub fn split_clouds(
    cloud: &LabeledPointCloud,
    clusters: &[Cluster],
    registry: &ClassRegistry,
) -> SplitClouds {
    let mut dynamic_boxes: Vec<&Cluster> = Vec::new();
    for c in clusters {
        if c.label == UNKNOWN_CLASS || registry.is_thing(c.label) {
            dynamic_boxes.push(c);
        }
    }
    let detections = dynamic_boxes
        .iter()
        .map(|c| crate::tracker::Detection {
            bbox: c.bbox,
            label: c.label,
            stamp: cloud.stamp,
        })
        .collect();

    let mut static_indices = Vec::new();
    let mut dynamic_indices = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        if dynamic_boxes.iter().any(|c| c.bbox.contains(p)) {
            dynamic_indices.push(i);
        } else {
            static_indices.push(i);
        }
    }
    SplitClouds {
        static_indices,
        dynamic_indices,
        detections,
    }
}

/// Materialize a sub-cloud from indices.
pub fn select_points(cloud: &LabeledPointCloud, indices: &[usize]) -> LabeledPointCloud {
    LabeledPointCloud {
        points: indices.iter().map(|&i| cloud.points[i]).collect(),
        labels: indices.iter().map(|&i| cloud.labels[i]).collect(),
        stamp: cloud.stamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose3D, BODY_FRAME, WORLD_FRAME};
    use crate::panoptic::PanopticMask;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::*;

    fn forward_camera() -> CameraModel {
        // Camera at the body origin looking along body +x; +x right, +y down.
        let rot = UnitQuaternion::from_basis_unchecked(&[
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(1.0, 0.0, 0.0),
        ]);
        CameraModel {
            fx: 50.0,
            fy: 50.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
            extrinsic: Pose3D::new(Vector3::zeros(), rot, BODY_FRAME),
        }
    }

    fn scan_at_origin(points: Vec<Point3<f64>>) -> LidarScan {
        LidarScan {
            points,
            stamp: 0.0,
            sensor_pose: Pose3D::identity(WORLD_FRAME),
        }
    }

    #[test]
    fn visible_point_takes_pixel_class() {
        let cam = forward_camera();
        let mask = PanopticMask::filled(100, 100, 0.0, 3);
        let scan = scan_at_origin(vec![Point3::new(5.0, 0.0, 0.0)]);
        let cloud =
            label_points(&scan, &mask, &cam, &Pose3D::identity(WORLD_FRAME)).unwrap();
        assert_eq!(cloud.labels, vec![3]);
    }

    #[test]
    fn point_behind_camera_is_unknown() {
        let cam = forward_camera();
        let mask = PanopticMask::filled(100, 100, 0.0, 3);
        let scan = scan_at_origin(vec![Point3::new(-5.0, 0.0, 0.0)]);
        let cloud =
            label_points(&scan, &mask, &cam, &Pose3D::identity(WORLD_FRAME)).unwrap();
        assert_eq!(cloud.labels, vec![UNKNOWN_CLASS]);
    }

    #[test]
    fn nearest_pixel_rounds_half_up() {
        assert_eq!(nearest_pixel(345.4, 240.2), (345, 240));
        assert_eq!(nearest_pixel(345.5, 240.5), (346, 241));
        assert_eq!(nearest_pixel(345.49, 239.9), (345, 240));
    }

    #[test]
    fn rounded_projection_hits_checkerboard_cell() {
        // Checkerboard mask: class = (u + v) % 2 + 1. A point that projects
        // to (52.4, 50.2) must take the class of pixel (52, 50).
        let cam = forward_camera();
        let mut mask = PanopticMask::filled(100, 100, 0.0, 0);
        for v in 0..100u32 {
            for u in 0..100u32 {
                let idx = mask.index(u, v);
                mask.classes[idx] = ((u + v) % 2 + 1) as ClassId;
            }
        }
        // Camera frame: x right = -body y, y down = -body z, z fwd = body x.
        // Pick a camera-frame target pixel (52.4, 50.2) at depth 5.
        let u = 52.4;
        let v = 50.2;
        let x_cam = (u - 50.0) / 50.0 * 5.0;
        let y_cam = (v - 50.0) / 50.0 * 5.0;
        let p_body = Point3::new(5.0, -x_cam, -y_cam);
        let scan = scan_at_origin(vec![p_body]);
        let cloud =
            label_points(&scan, &mask, &cam, &Pose3D::identity(WORLD_FRAME)).unwrap();
        assert_eq!(cloud.labels[0], mask.class_at(52, 50));
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let cam = forward_camera();
        let mask = PanopticMask::filled(100, 100, 0.0, 3);
        let mut scan = scan_at_origin(vec![Point3::new(5.0, 0.0, 0.0)]);
        scan.sensor_pose.frame_id = "odom".into();
        let err = label_points(&scan, &mask, &cam, &Pose3D::identity(WORLD_FRAME)).unwrap_err();
        assert!(matches!(err, CloudError::FrameMismatch { .. }));
    }

    #[test]
    fn vote_unanimous() {
        assert_eq!(vote_label(&[20; 10], 0.6), (20, 1.0));
    }

    #[test]
    fn vote_majority_with_unknowns_in_denominator() {
        let mut labels = vec![20u8; 7];
        labels.extend([UNKNOWN_CLASS; 3]);
        assert_eq!(vote_label(&labels, 0.6), (20, 0.7));
    }

    #[test]
    fn vote_tie_goes_unknown() {
        let mut labels = vec![20u8; 5];
        labels.extend([12u8; 5]);
        assert_eq!(vote_label(&labels, 0.6), (UNKNOWN_CLASS, 0.5));
    }

    #[test]
    fn vote_below_threshold_goes_unknown() {
        let mut labels = vec![20u8; 5];
        labels.extend([12u8; 4]);
        let (label, ratio) = vote_label(&labels, 0.6);
        assert_eq!(label, UNKNOWN_CLASS);
        assert!((ratio - 5.0 / 9.0).abs() < 1e-12);
    }

    fn plane_with_cluster() -> (LabeledPointCloud, Vec<usize>) {
        // Gravel plane plus a compact elevated "person" cluster at (2, 2).
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                points.push(Point3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0));
                labels.push(3u8); // gravel
            }
        }
        let base = points.len();
        for k in 0..8 {
            points.push(Point3::new(2.0 + 0.05 * k as f64, 2.0, 0.5 + 0.1 * k as f64));
            labels.push(20u8); // person
        }
        let nonground = (base..points.len()).collect();
        (
            LabeledPointCloud {
                points,
                labels,
                stamp: 0.0,
            },
            nonground,
        )
    }

    #[test]
    fn person_cluster_pulls_ground_points_into_dynamic() {
        let registry = ClassRegistry::default_construction();
        let (cloud, nonground) = plane_with_cluster();
        let clusters = make_clusters(&cloud, &nonground, 0.5, 3, 0.6);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].label, 20);
        let split = split_clouds(&cloud, &clusters, &registry);
        assert_eq!(split.detections.len(), 1);
        assert_eq!(split.detections[0].label, 20);
        // The ground point exactly at (2, 2, 0) is inside the person bbox? The
        // bbox spans z in [0.5, 1.2], so it is not; all cluster points are.
        assert_eq!(
            split.static_indices.len() + split.dynamic_indices.len(),
            cloud.len()
        );
        for &i in &split.dynamic_indices {
            assert!(clusters[0].bbox.contains(&cloud.points[i]));
        }
        assert_eq!(split.dynamic_indices.len(), 8);
    }

    #[test]
    fn ground_points_inside_box_go_dynamic() {
        // Extend the person cluster down to the ground so the bbox overlaps it.
        let registry = ClassRegistry::default_construction();
        let (mut cloud, mut nonground) = plane_with_cluster();
        nonground.push(cloud.len());
        cloud.points.push(Point3::new(2.0, 2.0, 0.0));
        cloud.labels.push(20);
        let clusters = make_clusters(&cloud, &nonground, 0.6, 3, 0.6);
        assert_eq!(clusters.len(), 1);
        let split = split_clouds(&cloud, &clusters, &registry);
        // The gravel plane point at (2, 2, 0) now falls inside the box.
        let inside_plane_pt = cloud
            .points
            .iter()
            .position(|p| *p == Point3::new(2.0, 2.0, 0.0))
            .unwrap();
        assert!(split.dynamic_indices.contains(&inside_plane_pt));
    }

    #[test]
    fn stuff_cluster_stays_static_with_no_detection() {
        let registry = ClassRegistry::default_construction();
        let (mut cloud, nonground) = plane_with_cluster();
        for &i in &nonground {
            cloud.labels[i] = 12; // fence
        }
        let clusters = make_clusters(&cloud, &nonground, 0.5, 3, 0.6);
        let split = split_clouds(&cloud, &clusters, &registry);
        assert!(split.detections.is_empty());
        assert_eq!(split.static_indices.len(), cloud.len());
    }

    #[test]
    fn unknown_cluster_is_dynamic_with_detection() {
        let registry = ClassRegistry::default_construction();
        let (mut cloud, nonground) = plane_with_cluster();
        for &i in &nonground {
            cloud.labels[i] = UNKNOWN_CLASS;
        }
        let clusters = make_clusters(&cloud, &nonground, 0.5, 3, 0.6);
        let split = split_clouds(&cloud, &clusters, &registry);
        assert_eq!(split.detections.len(), 1);
        assert_eq!(split.detections[0].label, UNKNOWN_CLASS);
        assert!(!split.dynamic_indices.is_empty());
    }

    #[test]
    fn uniform_mask_labels_all_visible_points() {
        let cam = forward_camera();
        let mask = PanopticMask::filled(100, 100, 0.0, 4);
        let mut pts = Vec::new();
        for i in 0..20 {
            pts.push(Point3::new(2.0 + i as f64 * 0.3, 0.2 * (i % 5) as f64, -0.4));
            pts.push(Point3::new(-2.0 - i as f64 * 0.3, 0.0, 0.0)); // behind
        }
        let scan = scan_at_origin(pts);
        let cloud =
            label_points(&scan, &mask, &cam, &Pose3D::identity(WORLD_FRAME)).unwrap();
        for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
            if p.x > 0.0 {
                assert_eq!(l, 4);
            } else {
                assert_eq!(l, UNKNOWN_CLASS);
            }
        }
    }

    proptest! {
        // Static + dynamic is a partition of the input indices.
        #[test]
        fn split_partitions_cloud(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let registry = ClassRegistry::default_construction();
            let n = rng.random_range(1..80);
            let mut points = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..n {
                points.push(Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..2.0),
                ));
                labels.push(rng.random_range(0..35) as ClassId);
            }
            let cloud = LabeledPointCloud { points, labels, stamp: 0.0 };
            let nonground: Vec<usize> = (0..cloud.len()).filter(|i| cloud.points[*i].z > 0.2).collect();
            let clusters = make_clusters(&cloud, &nonground, 0.8, 2, 0.6);
            let split = split_clouds(&cloud, &clusters, &registry);
            let mut seen = vec![false; cloud.len()];
            for &i in split.static_indices.iter().chain(&split.dynamic_indices) {
                prop_assert!(!seen[i], "index {} appears twice", i);
                seen[i] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
            // A conclusive label always carries a ratio at or above threshold.
            for c in &clusters {
                if c.label != UNKNOWN_CLASS {
                    prop_assert!(c.vote_ratio >= 0.6);
                }
            }
        }
    }
}
