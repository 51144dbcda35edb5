//! Ground coverage densification between adjacent LiDAR returns.
//!
//! Point rasterization alone leaves unknown rings between ground returns of
//! adjacent channels (the radial gap grows quadratically with range), and
//! unknown cells are treated as occupied. Adjacent beams that both hit
//! near-ground, conclusively labeled surface swept the quad between them, so
//! that quad is filled with synthetic labeled ground points before the
//! static-layer update. Occlusions break the fill: a quad is only filled
//! when all four corners are ground-height returns with known labels.
//!
//! The fill is recomputed from the labeled cloud itself (no renderer state),
//! so recorded scans replay to the identical result.

use nalgebra::{Point3, Vector2};
use serde::{Deserialize, Serialize};

use super::sensors::LidarPattern;
use crate::cloud::LabeledPointCloud;
use crate::geometry::Pose3D;
use crate::panoptic::{ClassId, UNKNOWN_CLASS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundFillConfig {
    pub enabled: bool,
    /// Max |z| of a corner point for it to count as ground, meters.
    pub ground_tol: f64,
    /// Skip quads with any side longer than this, meters.
    pub max_quad_side: f64,
    /// Synthetic sample spacing, meters; keep below the map resolution.
    pub sample_spacing: f64,
}

impl Default for GroundFillConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            ground_tol: 0.25,
            max_quad_side: 16.0,
            sample_spacing: 0.16,
        }
    }
}

/// Synthetic labeled ground points filling the swept quads of a scan.
///
/// Corners must be conclusively labeled with a traversable terrain class:
/// low returns on obstacle faces (a container bottom sits near z = 0 too)
/// must break the quad, not smear their class over real ground.
pub fn ground_fill(
    cloud: &LabeledPointCloud,
    sensor_pose: &Pose3D,
    pattern: &LidarPattern,
    cfg: &GroundFillConfig,
    registry: &crate::panoptic::ClassRegistry,
) -> LabeledPointCloud {
    let mut out = LabeledPointCloud {
        points: Vec::new(),
        labels: Vec::new(),
        stamp: cloud.stamp,
    };
    if !cfg.enabled || pattern.channels < 2 {
        return out;
    }

    // Re-bin points into the scan grid from their sensor-frame direction.
    let channels = pattern.channels as usize;
    let steps = pattern.azimuth_steps as usize;
    let mut grid: Vec<Option<u32>> = vec![None; channels * steps];
    let elev_span = pattern.elev_max - pattern.elev_min;
    let two_pi = 2.0 * std::f64::consts::PI;
    for (i, p) in cloud.points.iter().enumerate() {
        let ps = sensor_pose.inverse_transform_point(p);
        let r = ps.coords.norm();
        if r < 1e-9 {
            continue;
        }
        let elev = (ps.z / r).asin();
        let az = ps.y.atan2(ps.x).rem_euclid(two_pi);
        let cf = (elev - pattern.elev_min) / elev_span * (pattern.channels - 1) as f64;
        let af = az / two_pi * pattern.azimuth_steps as f64;
        let c = cf.round();
        let a = af.round();
        if (cf - c).abs() > 0.25 || (af - a).abs() > 0.25 {
            continue; // not on the scan grid
        }
        let c = c as i64;
        let a = (a as i64).rem_euclid(steps as i64);
        if c < 0 || c >= channels as i64 {
            continue;
        }
        grid[c as usize * steps + a as usize] = Some(i as u32);
    }

    let corner = |c: usize, a: usize| -> Option<(Vector2<f64>, ClassId)> {
        let idx = grid[c * steps + a % steps]? as usize;
        let p = &cloud.points[idx];
        if p.z.abs() > cfg.ground_tol {
            return None;
        }
        let label = cloud.labels[idx];
        if label == UNKNOWN_CLASS || !registry.traversable(label) {
            return None;
        }
        Some((Vector2::new(p.x, p.y), label))
    };

    for c in 0..channels - 1 {
        for a in 0..steps {
            let Some((p00, l00)) = corner(c, a) else { continue };
            let Some((p10, l10)) = corner(c + 1, a) else { continue };
            let Some((p01, l01)) = corner(c, a + 1) else { continue };
            let Some((p11, l11)) = corner(c + 1, a + 1) else { continue };
            let radial = (p10 - p00).norm().max((p11 - p01).norm());
            let tangential = (p01 - p00).norm().max((p11 - p10).norm());
            if radial > cfg.max_quad_side || tangential > cfg.max_quad_side {
                continue;
            }
            let ns = (radial / cfg.sample_spacing).ceil().max(1.0) as usize;
            let nt = (tangential / cfg.sample_spacing).ceil().max(1.0) as usize;
            for i in 0..=ns {
                let s = i as f64 / ns as f64;
                for j in 0..=nt {
                    let t = j as f64 / nt as f64;
                    let p = p00 * (1.0 - s) * (1.0 - t)
                        + p10 * s * (1.0 - t)
                        + p01 * (1.0 - s) * t
                        + p11 * s * t;
                    let label = match (s < 0.5, t < 0.5) {
                        (true, true) => l00,
                        (false, true) => l10,
                        (true, false) => l01,
                        (false, false) => l11,
                    };
                    out.points.push(Point3::new(p.x, p.y, 0.0));
                    out.labels.push(label);
                }
            }
        }
    }
    out
}
