//! Dynamic panoptic mapping and semantic navigation.
//!
//! The pipeline turns LiDAR scans plus 2D panoptic segmentation into labeled
//! point clouds, clusters and tracks movable objects, maintains a two-layer
//! semantic grid map with derived occupancy/cost layers, and replans with an
//! anytime RRT* under semantic trajectory costs. A deterministic simulation
//! harness closes the loop against synthetic worlds.

pub mod cloud;
pub mod geometry;
pub mod panoptic;
pub mod pgm;
pub mod planner;
pub mod semantic_map;
pub mod sim;
pub mod tracker;
