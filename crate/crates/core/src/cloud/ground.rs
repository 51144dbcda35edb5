//! Ground plane removal: fixed-height slab or RANSAC plane fit.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CloudError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GroundParams {
    /// Points with |z - z_ground| <= tol are ground (world frame).
    FixedHeight { z_ground: f64, tol: f64 },
    /// RANSAC plane fit; inliers within `inlier_tol` of the best
    /// near-horizontal plane are ground.
    Ransac {
        iterations: u32,
        inlier_tol: f64,
        seed: u64,
    },
}

impl Default for GroundParams {
    fn default() -> Self {
        GroundParams::FixedHeight {
            z_ground: 0.0,
            tol: 0.15,
        }
    }
}

/// Partition point indices into (ground, nonground).
pub fn remove_ground(
    points: &[Point3<f64>],
    params: &GroundParams,
) -> Result<(Vec<usize>, Vec<usize>), CloudError> {
    match *params {
        GroundParams::FixedHeight { z_ground, tol } => {
            let mut ground = Vec::new();
            let mut nonground = Vec::new();
            for (i, p) in points.iter().enumerate() {
                if (p.z - z_ground).abs() <= tol {
                    ground.push(i);
                } else {
                    nonground.push(i);
                }
            }
            Ok((ground, nonground))
        }
        GroundParams::Ransac {
            iterations,
            inlier_tol,
            seed,
        } => ransac_ground(points, iterations, inlier_tol, seed),
    }
}

fn ransac_ground(
    points: &[Point3<f64>],
    iterations: u32,
    inlier_tol: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), CloudError> {
    if points.len() < 3 {
        return Err(CloudError::DegenerateCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vector3<f64>, f64, usize)> = None; // normal, d, inliers
    for _ in 0..iterations {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        let k = rng.random_range(0..points.len());
        if i == j || j == k || i == k {
            continue;
        }
        let n = (points[j] - points[i]).cross(&(points[k] - points[i]));
        let norm = n.norm();
        if norm < 1e-9 {
            continue; // collinear sample
        }
        let mut n = n / norm;
        if n.z < 0.0 {
            n = -n;
        }
        // Reject steep planes; the ground of a drivable site is near-horizontal.
        if n.z < 0.5 {
            continue;
        }
        let d = n.dot(&points[i].coords);
        let inliers = points
            .iter()
            .filter(|p| (n.dot(&p.coords) - d).abs() <= inlier_tol)
            .count();
        if best.as_ref().map_or(true, |b| inliers > b.2) {
            best = Some((n, d, inliers));
        }
    }
    let (n, d, _) = best.ok_or(CloudError::DegenerateCloud)?;
    let mut ground = Vec::new();
    let mut nonground = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if (n.dot(&p.coords) - d).abs() <= inlier_tol {
            ground.push(i);
        } else {
            nonground.push(i);
        }
    }
    Ok((ground, nonground))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_cloud_single_outlier() {
        let mut pts: Vec<Point3<f64>> = (0..50)
            .map(|i| Point3::new((i % 10) as f64, (i / 10) as f64, 0.0))
            .collect();
        pts.push(Point3::new(2.0, 2.0, 1.0));
        let (ground, nonground) = remove_ground(
            &pts,
            &GroundParams::FixedHeight {
                z_ground: 0.0,
                tol: 0.15,
            },
        )
        .unwrap();
        assert_eq!(nonground, vec![50]);
        assert_eq!(ground.len(), 50);
    }

    #[test]
    fn all_ground_leaves_empty_nonground() {
        let pts: Vec<Point3<f64>> = (0..20)
            .map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.02))
            .collect();
        let (_, nonground) = remove_ground(&pts, &GroundParams::default()).unwrap();
        assert!(nonground.is_empty());
        assert!(crate::cloud::dbscan(&[], 0.5, 5).is_empty());
    }

    #[test]
    fn ransac_recovers_tilted_plane() {
        // z = 0.1 x plus a handful of elevated outliers.
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..10 {
                let x = i as f64 * 0.25;
                let y = j as f64 * 0.5;
                pts.push(Point3::new(x, y, 0.1 * x));
            }
        }
        let n_plane = pts.len();
        for k in 0..8 {
            pts.push(Point3::new(2.0 + k as f64 * 0.1, 2.0, 1.5));
        }
        let (ground, _) = remove_ground(
            &pts,
            &GroundParams::Ransac {
                iterations: 200,
                inlier_tol: 0.05,
                seed: 1,
            },
        )
        .unwrap();
        let plane_as_ground = ground.iter().filter(|&&i| i < n_plane).count();
        assert!(plane_as_ground as f64 >= 0.99 * n_plane as f64);
        assert!(ground.iter().all(|&i| i < n_plane));
    }

    #[test]
    fn ransac_needs_three_points() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let err = remove_ground(
            &pts,
            &GroundParams::Ransac {
                iterations: 10,
                inlier_tol: 0.05,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, CloudError::DegenerateCloud));
    }
}
