//! Two-layer 2D semantic grid map with derived occupancy and cost layers.
//!
//! The static layer accumulates terrain/structure classes and never forgets;
//! the dynamic layer is rewritten every cycle from the tracked objects. The
//! merged layer is dynamic-over-static, occupancy comes from class metadata
//! (never-observed cells count as occupied), and the cost layer carries the
//! per-class traversal costs with an infinite sentinel on occupied cells.

mod io;

pub use io::{export_apriori, export_layers, import_apriori, import_layers, MapMeta};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::LabeledPointCloud;
use crate::panoptic::{ClassId, ClassRegistry, UNKNOWN_CLASS, UNKNOWN_OBJECT_CLASS};
use crate::tracker::Track;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("map io error: {0}")]
    Io(String),
    #[error("map parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Cell edge length in meters.
    pub resolution: f64,
    /// World coordinates of the corner of cell (0, 0).
    pub origin: Vector2<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl GridGeometry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Cell containing a world point, or None when outside the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin.x) / self.resolution).floor();
        let r = ((y - self.origin.y) / self.resolution).floor();
        if r < 0.0 || c < 0.0 || r >= self.rows as f64 || c >= self.cols as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.resolution
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.resolution
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapStats {
    pub out_of_bounds_dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGridMap {
    pub geom: GridGeometry,
    pub static_class: Vec<ClassId>,
    pub dynamic_class: Vec<ClassId>,
    pub merged_class: Vec<ClassId>,
    pub occupancy: Vec<u8>,
    pub cost: Vec<f64>,
    pub stamp: f64,
    pub stats: MapStats,
}

/// Immutable occupancy + cost view handed to the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSnapshot {
    pub geom: GridGeometry,
    pub occupancy: Vec<u8>,
    pub cost: Vec<f64>,
    pub stamp: f64,
}

impl MapSnapshot {
    /// Occupancy lookup that treats everything outside the grid as occupied.
    #[inline]
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        match self.geom.cell_of(x, y) {
            Some((r, c)) => self.occupancy[self.geom.index(r, c)] != 0,
            None => true,
        }
    }

    #[inline]
    pub fn cost_at(&self, x: f64, y: f64) -> f64 {
        match self.geom.cell_of(x, y) {
            Some((r, c)) => self.cost[self.geom.index(r, c)],
            None => f64::INFINITY,
        }
    }
}

/// A-priori occupancy raster with its own geo-reference.
#[derive(Debug, Clone, PartialEq)]
pub struct AprioriMap {
    pub geom: GridGeometry,
    pub occupancy: Vec<u8>,
}

impl LayeredGridMap {
    pub fn new(geom: GridGeometry) -> Self {
        let n = geom.len();
        Self {
            geom,
            static_class: vec![UNKNOWN_CLASS; n],
            dynamic_class: vec![UNKNOWN_CLASS; n],
            merged_class: vec![UNKNOWN_CLASS; n],
            occupancy: vec![1; n],
            cost: vec![f64::INFINITY; n],
            stamp: 0.0,
            stats: MapStats::default(),
        }
    }

    /// Square map of `size_m` per side centered on a world point, with the
    /// origin snapped to the resolution grid so cells stay world-aligned.
    pub fn new_centered(center: Vector2<f64>, size_m: f64, resolution: f64) -> Self {
        let cells = (size_m / resolution).round() as usize;
        let snap = |v: f64| (v / resolution).round() * resolution;
        let origin = Vector2::new(
            snap(center.x - size_m / 2.0),
            snap(center.y - size_m / 2.0),
        );
        Self::new(GridGeometry {
            resolution,
            origin,
            rows: cells,
            cols: cells,
        })
    }

    /// Rasterize a static labeled cloud. Each cell hit this scan takes the
    /// modal label of its points; unknown-labeled points never displace a
    /// known class, and modal ties resolve to no-change.
    pub fn update_static(&mut self, cloud: &LabeledPointCloud) {
        // (cell<<8 | label) keys so one sort yields per-cell label runs.
        let mut keys: Vec<u64> = Vec::with_capacity(cloud.len());
        for (p, &l) in cloud.points.iter().zip(&cloud.labels) {
            match self.geom.cell_of(p.x, p.y) {
                Some((r, c)) => keys.push(((self.geom.index(r, c) as u64) << 8) | l as u64),
                None => self.stats.out_of_bounds_dropped += 1,
            }
        }
        keys.sort_unstable();

        let mut i = 0;
        while i < keys.len() {
            let cell = keys[i] >> 8;
            let mut best_label = UNKNOWN_CLASS;
            let mut best_count = 0usize;
            let mut tied = false;
            let mut j = i;
            while j < keys.len() && keys[j] >> 8 == cell {
                let label = (keys[j] & 0xff) as ClassId;
                let mut k = j;
                while k < keys.len() && keys[k] == keys[j] {
                    k += 1;
                }
                let count = k - j;
                if count > best_count {
                    best_count = count;
                    best_label = label;
                    tied = false;
                } else if count == best_count {
                    tied = true;
                }
                j = k;
            }
            if !tied && best_label != UNKNOWN_CLASS {
                self.static_class[cell as usize] = best_label;
            }
            i = j;
        }
        self.stamp = cloud.stamp;
    }

    /// Clear and re-rasterize the dynamic layer from the confirmed tracks.
    ///
    /// Each track stamps its inflated bbox footprint; unknown-labeled tracks
    /// use the reserved unknown-object id. Overlaps resolve to the lower
    /// track id.
    pub fn update_dynamic(&mut self, tracks: &[Track], inflation_radius: f64) {
        self.dynamic_class.fill(UNKNOWN_CLASS);
        let mut order: Vec<&Track> = tracks.iter().collect();
        // Write in descending id order so the lowest id lands last and wins.
        order.sort_by(|a, b| b.id.cmp(&a.id));
        for t in order {
            let label = if t.label == UNKNOWN_CLASS {
                UNKNOWN_OBJECT_CLASS
            } else {
                t.label
            };
            let bbox = t.bbox();
            let min_x = bbox.min.x - inflation_radius;
            let min_y = bbox.min.y - inflation_radius;
            let max_x = bbox.max.x + inflation_radius;
            let max_y = bbox.max.y + inflation_radius;
            self.stamp_rect(min_x, min_y, max_x, max_y, label);
        }
    }

    fn stamp_rect(&mut self, min_x: f64, min_y: f64, max_x: f64, max_y: f64, label: ClassId) {
        let res = self.geom.resolution;
        let c0 = ((min_x - self.geom.origin.x) / res).floor().max(0.0) as usize;
        let r0 = ((min_y - self.geom.origin.y) / res).floor().max(0.0) as usize;
        let c1 = ((max_x - self.geom.origin.x) / res).floor() as i64;
        let r1 = ((max_y - self.geom.origin.y) / res).floor() as i64;
        if c1 < 0 || r1 < 0 {
            return;
        }
        let c1 = (c1 as usize).min(self.geom.cols.saturating_sub(1));
        let r1 = (r1 as usize).min(self.geom.rows.saturating_sub(1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                let idx = self.geom.index(r, c);
                self.dynamic_class[idx] = label;
            }
        }
    }

    /// Refresh the merged layer: dynamic supersedes static.
    pub fn merge_layers(&mut self) {
        for i in 0..self.merged_class.len() {
            self.merged_class[i] = if self.dynamic_class[i] != UNKNOWN_CLASS {
                self.dynamic_class[i]
            } else {
                self.static_class[i]
            };
        }
    }

    /// Occupancy from class metadata. Never-observed cells, unknown objects,
    /// and non-traversable classes are occupied.
    pub fn derive_occupancy(&mut self, registry: &ClassRegistry) {
        for i in 0..self.occupancy.len() {
            let class = self.merged_class[i];
            self.occupancy[i] = if class == UNKNOWN_CLASS {
                1
            } else if registry.traversable(class) {
                0
            } else {
                1
            };
        }
    }

    /// Cost from class metadata; occupied cells carry the infinite sentinel.
    /// Run after `derive_occupancy` (and `union_apriori`, when present).
    pub fn derive_cost(&mut self, registry: &ClassRegistry) {
        for i in 0..self.cost.len() {
            self.cost[i] = if self.occupancy[i] != 0 {
                f64::INFINITY
            } else {
                registry.cost(self.merged_class[i])
            };
        }
    }

    /// Union of occupied sets: a cell occupied in the a-priori raster is
    /// occupied here, regardless of semantics. Nearest-cell alignment.
    pub fn union_apriori(&mut self, apriori: &AprioriMap) -> Result<(), MapError> {
        if apriori.geom.resolution <= 0.0 || apriori.geom.is_empty() {
            return Err(MapError::GridMismatch(
                "a-priori raster is empty or has non-positive resolution".into(),
            ));
        }
        if apriori.occupancy.len() != apriori.geom.len() {
            return Err(MapError::GridMismatch(format!(
                "a-priori raster has {} cells but geometry says {}",
                apriori.occupancy.len(),
                apriori.geom.len()
            )));
        }
        for r in 0..self.geom.rows {
            for c in 0..self.geom.cols {
                let (x, y) = self.geom.center(r, c);
                if let Some((ar, ac)) = apriori.geom.cell_of(x, y) {
                    let occupied = apriori.occupancy[apriori.geom.index(ar, ac)] != 0;
                    if occupied {
                        self.occupancy[self.geom.index(r, c)] = 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Scroll the grid so it stays centered near the robot, preserving all
    /// world-aligned content that remains inside the window. Returns true if
    /// the grid moved.
    pub fn re_anchor(&mut self, center: Vector2<f64>) -> bool {
        let res = self.geom.resolution;
        let snap = |v: f64| (v / res).round() * res;
        let desired = Vector2::new(
            snap(center.x - self.geom.width_m() / 2.0),
            snap(center.y - self.geom.height_m() / 2.0),
        );
        let dc = ((desired.x - self.geom.origin.x) / res).round() as i64;
        let dr = ((desired.y - self.geom.origin.y) / res).round() as i64;
        if dc == 0 && dr == 0 {
            return false;
        }
        let rows = self.geom.rows as i64;
        let cols = self.geom.cols as i64;
        let remap = |src: &mut Vec<ClassId>, default: ClassId| {
            let mut out = vec![default; (rows * cols) as usize];
            for r in 0..rows {
                for c in 0..cols {
                    let sr = r + dr;
                    let sc = c + dc;
                    if sr >= 0 && sr < rows && sc >= 0 && sc < cols {
                        out[(r * cols + c) as usize] = src[(sr * cols + sc) as usize];
                    }
                }
            }
            *src = out;
        };
        remap(&mut self.static_class, UNKNOWN_CLASS);
        remap(&mut self.dynamic_class, UNKNOWN_CLASS);
        remap(&mut self.merged_class, UNKNOWN_CLASS);
        let mut occ = vec![1u8; (rows * cols) as usize];
        let mut cost = vec![f64::INFINITY; (rows * cols) as usize];
        for r in 0..rows {
            for c in 0..cols {
                let sr = r + dr;
                let sc = c + dc;
                if sr >= 0 && sr < rows && sc >= 0 && sc < cols {
                    occ[(r * cols + c) as usize] = self.occupancy[(sr * cols + sc) as usize];
                    cost[(r * cols + c) as usize] = self.cost[(sr * cols + sc) as usize];
                }
            }
        }
        self.occupancy = occ;
        self.cost = cost;
        self.geom.origin = desired;
        true
    }

    pub fn snapshot(&self) -> MapSnapshot {
        MapSnapshot {
            geom: self.geom.clone(),
            occupancy: self.occupancy.clone(),
            cost: self.cost.clone(),
            stamp: self.stamp,
        }
    }
}
