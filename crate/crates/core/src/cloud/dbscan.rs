//! Density-based clustering over 3D points.
//!
//! Semantics: a point is core when it has at least `min_pts` neighbors within
//! `eps` (inclusive of itself and of the boundary distance). Clusters are the
//! connected components of the core-point graph; border points attach to the
//! cluster of their lowest-index core neighbor. Output is deterministic for a
//! fixed input order.

use std::collections::HashMap;

use nalgebra::Point3;

/// Cluster id per point; `None` marks noise.
pub fn dbscan(points: &[Point3<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0, "eps must be > 0");
    assert!(min_pts >= 1, "min_pts must be >= 1");
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }

    // Bucket points into an eps-sized grid so neighborhood queries only touch
    // the 27 surrounding cells.
    let cell_of = |p: &Point3<f64>| {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(i as u32);
    }

    let eps2 = eps * eps;
    let neighbors = |i: usize, out: &mut Vec<u32>| {
        out.clear();
        let (cx, cy, cz) = cell_of(&points[i]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if (points[i] - points[j as usize]).norm_squared() <= eps2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    };

    let mut nbuf = Vec::new();
    let mut core = vec![false; n];
    let mut neighbor_lists: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        neighbors(i, &mut nbuf);
        if nbuf.len() >= min_pts {
            core[i] = true;
            neighbor_lists[i] = nbuf.clone();
        } else {
            neighbor_lists[i] = nbuf.clone();
        }
    }

    // BFS over core points in index order.
    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut next_cluster = 0usize;
    let mut queue = Vec::new();
    for i in 0..n {
        if !core[i] || assignment[i].is_some() {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        assignment[i] = Some(cluster);
        queue.clear();
        queue.push(i as u32);
        while let Some(cur) = queue.pop() {
            for &j in &neighbor_lists[cur as usize] {
                let j = j as usize;
                if core[j] && assignment[j].is_none() {
                    assignment[j] = Some(cluster);
                    queue.push(j as u32);
                }
            }
        }
    }

    // Border points: lowest-index core neighbor decides the cluster.
    for i in 0..n {
        if core[i] {
            continue;
        }
        if let Some(&first_core) = neighbor_lists[i].iter().find(|&&j| core[j as usize]) {
            assignment[i] = assignment[first_core as usize];
        }
    }

    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64, f64)]) -> Vec<Point3<f64>> {
        v.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()
    }

    #[test]
    fn two_close_points_cluster_far_one_is_noise() {
        let p = pts(&[(0.0, 0.0, 0.0), (0.1, 0.0, 0.0), (5.0, 5.0, 5.0)]);
        let a = dbscan(&p, 0.5, 2);
        assert_eq!(a[0], a[1]);
        assert!(a[0].is_some());
        assert_eq!(a[2], None);
    }

    #[test]
    fn empty_input() {
        assert!(dbscan(&[], 0.5, 2).is_empty());
    }

    #[test]
    fn single_point_below_density_is_noise() {
        let a = dbscan(&pts(&[(0.0, 0.0, 0.0)]), 0.5, 2);
        assert_eq!(a, vec![None]);
    }

    #[test]
    fn single_point_min_pts_one_is_cluster() {
        let a = dbscan(&pts(&[(0.0, 0.0, 0.0)]), 0.5, 1);
        assert_eq!(a, vec![Some(0)]);
    }

    #[test]
    fn boundary_distance_is_inclusive() {
        let p = pts(&[(0.0, 0.0, 0.0), (0.5, 0.0, 0.0)]);
        let a = dbscan(&p, 0.5, 2);
        assert_eq!(a[0], a[1]);
        assert!(a[0].is_some());
    }

    #[test]
    fn two_separate_clusters_numbered_by_first_member() {
        let p = pts(&[
            (10.0, 0.0, 0.0),
            (10.1, 0.0, 0.0),
            (0.0, 0.0, 0.0),
            (0.1, 0.0, 0.0),
        ]);
        let a = dbscan(&p, 0.5, 2);
        assert_eq!(a[0], Some(0));
        assert_eq!(a[1], Some(0));
        assert_eq!(a[2], Some(1));
        assert_eq!(a[3], Some(1));
    }
}
