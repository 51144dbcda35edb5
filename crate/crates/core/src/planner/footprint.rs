//! Oriented-rectangle footprint sampling over the grid map.

use serde::{Deserialize, Serialize};

use crate::semantic_map::MapSnapshot;

/// Vehicle footprint: a pose-relative rectangle sampled on a regular grid.
/// The stride must not exceed the map resolution so no covered cell is
/// skipped between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
    pub stride: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            length: 4.0,
            width: 3.0,
            stride: 0.2,
        }
    }
}

/// Precomputed sample offsets for a footprint, in the robot frame
/// (+x forward along the heading).
#[derive(Debug, Clone)]
pub struct FootprintSampler {
    offsets: Vec<(f64, f64)>,
}

impl FootprintSampler {
    pub fn new(fp: &Footprint) -> Self {
        assert!(fp.length > 0.0 && fp.width > 0.0 && fp.stride > 0.0);
        let nx = (fp.length / fp.stride).ceil() as usize;
        let ny = (fp.width / fp.stride).ceil() as usize;
        let mut offsets = Vec::with_capacity((nx + 1) * (ny + 1));
        for i in 0..=nx {
            let ox = -fp.length / 2.0 + fp.length * i as f64 / nx as f64;
            for j in 0..=ny {
                let oy = -fp.width / 2.0 + fp.width * j as f64 / ny as f64;
                offsets.push((ox, oy));
            }
        }
        Self { offsets }
    }

    pub fn offsets(&self) -> &[(f64, f64)] {
        &self.offsets
    }

    /// Visit the world position of every footprint sample at a pose.
    #[inline]
    pub fn for_each_sample<F: FnMut(f64, f64)>(&self, x: f64, y: f64, heading: f64, mut f: F) {
        let (s, c) = heading.sin_cos();
        for &(ox, oy) in &self.offsets {
            f(x + ox * c - oy * s, y + ox * s + oy * c);
        }
    }
}

/// True iff every sampled cell under the oriented footprint rectangle is
/// free. Cells outside the map count as occupied.
pub fn footprint_valid(snap: &MapSnapshot, x: f64, y: f64, heading: f64, fp: &Footprint) -> bool {
    footprint_valid_sampled(snap, x, y, heading, &FootprintSampler::new(fp))
}

pub fn footprint_valid_sampled(
    snap: &MapSnapshot,
    x: f64,
    y: f64,
    heading: f64,
    sampler: &FootprintSampler,
) -> bool {
    let mut ok = true;
    sampler.for_each_sample(x, y, heading, |wx, wy| {
        if ok && snap.occupied_at(wx, wy) {
            ok = false;
        }
    });
    ok
}

/// Generation-stamped visited marks for cheap per-pose cell deduplication.
#[derive(Debug, Clone, Default)]
pub struct CellScratch {
    gen: u32,
    marks: Vec<u32>,
}

impl CellScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn begin(&mut self, n_cells: usize) -> u32 {
        if self.marks.len() < n_cells {
            self.marks = vec![0; n_cells];
            self.gen = 0;
        }
        self.gen = match self.gen.checked_add(1) {
            Some(g) => g,
            None => {
                self.marks.fill(0);
                1
            }
        };
        self.gen
    }
}

/// Mean cost over the distinct cells under the footprint at a pose.
/// Infinite when any cell carries the occupied sentinel or lies outside
/// the map.
pub fn footprint_cell_average(
    snap: &MapSnapshot,
    x: f64,
    y: f64,
    heading: f64,
    sampler: &FootprintSampler,
    scratch: &mut CellScratch,
) -> f64 {
    let gen = scratch.begin(snap.geom.len());
    let mut outside = false;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut blocked = false;
    sampler.for_each_sample(x, y, heading, |wx, wy| {
        if outside || blocked {
            return;
        }
        match snap.geom.cell_of(wx, wy) {
            Some((r, c)) => {
                let idx = snap.geom.index(r, c);
                if scratch.marks[idx] != gen {
                    scratch.marks[idx] = gen;
                    let cost = snap.cost[idx];
                    if cost.is_infinite() || snap.occupancy[idx] != 0 {
                        blocked = true;
                        return;
                    }
                    sum += cost;
                    count += 1;
                }
            }
            None => outside = true,
        }
    });
    if outside || blocked || count == 0 {
        return f64::INFINITY;
    }
    sum / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic_map::GridGeometry;
    use nalgebra::Vector2;

    pub(crate) fn uniform_snapshot(rows: usize, cols: usize, res: f64, cost: f64) -> MapSnapshot {
        MapSnapshot {
            geom: GridGeometry {
                resolution: res,
                origin: Vector2::new(0.0, 0.0),
                rows,
                cols,
            },
            occupancy: vec![0; rows * cols],
            cost: vec![cost; rows * cols],
            stamp: 0.0,
        }
    }

    fn small_fp() -> Footprint {
        Footprint {
            length: 1.0,
            width: 1.0,
            stride: 0.2,
        }
    }

    #[test]
    fn all_free_map_valid_anywhere_inside() {
        let snap = uniform_snapshot(100, 100, 0.2, 0.0);
        assert!(footprint_valid(&snap, 10.0, 10.0, 0.3, &small_fp()));
        assert!(footprint_valid(&snap, 2.0, 17.0, -1.2, &small_fp()));
    }

    #[test]
    fn occupied_cell_under_center_invalidates() {
        let mut snap = uniform_snapshot(100, 100, 0.2, 0.0);
        let (r, c) = snap.geom.cell_of(10.0, 10.0).unwrap();
        let idx = snap.geom.index(r, c);
        snap.occupancy[idx] = 1;
        assert!(!footprint_valid(&snap, 10.0, 10.0, 0.0, &small_fp()));
        assert!(footprint_valid(&snap, 14.0, 14.0, 0.0, &small_fp()));
    }

    #[test]
    fn border_straddle_is_invalid() {
        let snap = uniform_snapshot(100, 100, 0.2, 0.0);
        assert!(!footprint_valid(&snap, 0.1, 10.0, 0.0, &small_fp()));
        assert!(!footprint_valid(&snap, 19.9, 10.0, 0.0, &small_fp()));
    }

    #[test]
    fn cell_average_on_uniform_terrain() {
        let snap = uniform_snapshot(100, 100, 0.2, 2.0);
        let sampler = FootprintSampler::new(&small_fp());
        let mut scratch = CellScratch::new();
        let avg = footprint_cell_average(&snap, 10.0, 10.0, 0.7, &sampler, &mut scratch);
        assert!((avg - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cell_average_propagates_infinity() {
        let mut snap = uniform_snapshot(100, 100, 0.2, 2.0);
        let (r, c) = snap.geom.cell_of(10.0, 10.0).unwrap();
        let idx = snap.geom.index(r, c);
        snap.cost[idx] = f64::INFINITY;
        let sampler = FootprintSampler::new(&small_fp());
        let mut scratch = CellScratch::new();
        let avg = footprint_cell_average(&snap, 10.0, 10.0, 0.0, &sampler, &mut scratch);
        assert!(avg.is_infinite());
    }
}
