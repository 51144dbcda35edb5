//! Map layer export/import: class and occupancy layers as ASCII graymaps,
//! the cost layer as a text raster (infinities spelled "inf"), and a TOML
//! metadata sidecar. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{AprioriMap, GridGeometry, LayeredGridMap, MapError, MapStats};
use crate::pgm;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapMeta {
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub rows: usize,
    pub cols: usize,
    pub stamp: f64,
}

impl MapMeta {
    fn geometry(&self) -> GridGeometry {
        GridGeometry {
            resolution: self.resolution,
            origin: Vector2::new(self.origin_x, self.origin_y),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn write_meta(path: &Path, map_geom: &GridGeometry, stamp: f64) -> Result<(), MapError> {
    let meta = MapMeta {
        resolution: map_geom.resolution,
        origin_x: map_geom.origin.x,
        origin_y: map_geom.origin.y,
        rows: map_geom.rows,
        cols: map_geom.cols,
        stamp,
    };
    let text = toml::to_string(&meta).map_err(|e| MapError::Io(e.to_string()))?;
    fs::write(path, text).map_err(|e| MapError::Io(format!("{}: {e}", path.display())))
}

fn read_meta(path: &Path) -> Result<MapMeta, MapError> {
    let text =
        fs::read_to_string(path).map_err(|e| MapError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| MapError::Parse(format!("{}: {e}", path.display())))
}

fn write_cost(path: &Path, cols: usize, cost: &[f64]) -> Result<(), MapError> {
    let mut out = String::from("pannav-cost v1\n");
    for row in cost.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| MapError::Io(format!("{}: {e}", path.display())))
}

fn read_cost(path: &Path, expected: usize) -> Result<Vec<f64>, MapError> {
    let text =
        fs::read_to_string(path).map_err(|e| MapError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some("pannav-cost v1") {
        return Err(MapError::Parse(format!("{}: bad header", path.display())));
    }
    let mut cost = Vec::with_capacity(expected);
    for line in lines {
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|_| MapError::Parse(format!("bad cost value '{tok}'")))?;
            cost.push(v);
        }
    }
    if cost.len() != expected {
        return Err(MapError::Parse(format!(
            "cost raster has {} values, expected {expected}",
            cost.len()
        )));
    }
    Ok(cost)
}

fn as_u16(data: &[u8]) -> Vec<u16> {
    data.iter().map(|&v| v as u16).collect()
}

/// Write all five layers plus the metadata sidecar into a directory.
pub fn export_layers(dir: &Path, map: &LayeredGridMap) -> Result<(), MapError> {
    fs::create_dir_all(dir).map_err(|e| MapError::Io(format!("{}: {e}", dir.display())))?;
    let w = map.geom.cols as u32;
    let h = map.geom.rows as u32;
    let pg = |e: pgm::PgmError| MapError::Io(e.to_string());
    pgm::write_pgm(&dir.join("static.pgm"), w, h, 255, &as_u16(&map.static_class)).map_err(pg)?;
    pgm::write_pgm(&dir.join("dynamic.pgm"), w, h, 255, &as_u16(&map.dynamic_class)).map_err(pg)?;
    pgm::write_pgm(&dir.join("merged.pgm"), w, h, 255, &as_u16(&map.merged_class)).map_err(pg)?;
    pgm::write_pgm(&dir.join("occupancy.pgm"), w, h, 1, &as_u16(&map.occupancy)).map_err(pg)?;
    write_cost(&dir.join("cost.txt"), map.geom.cols, &map.cost)?;
    write_meta(&dir.join("meta.toml"), &map.geom, map.stamp)
}

/// Read a directory written by `export_layers`.
pub fn import_layers(dir: &Path) -> Result<LayeredGridMap, MapError> {
    let meta = read_meta(&dir.join("meta.toml"))?;
    let geom = meta.geometry();
    let expect = geom.len();
    let read_layer = |name: &str| -> Result<Vec<u8>, MapError> {
        let (w, h, _max, data) =
            pgm::read_pgm(&dir.join(name)).map_err(|e| MapError::Io(e.to_string()))?;
        if (w as usize, h as usize) != (geom.cols, geom.rows) {
            return Err(MapError::GridMismatch(format!(
                "{name}: raster is {w}x{h}, metadata says {}x{}",
                geom.cols, geom.rows
            )));
        }
        Ok(data.into_iter().map(|v| v as u8).collect())
    };
    let static_class = read_layer("static.pgm")?;
    let dynamic_class = read_layer("dynamic.pgm")?;
    let merged_class = read_layer("merged.pgm")?;
    let occupancy = read_layer("occupancy.pgm")?;
    let cost = read_cost(&dir.join("cost.txt"), expect)?;
    Ok(LayeredGridMap {
        geom,
        static_class,
        dynamic_class,
        merged_class,
        occupancy,
        cost,
        stamp: meta.stamp,
        stats: MapStats::default(),
    })
}

/// Read an a-priori occupancy raster (occupancy.pgm + meta.toml).
pub fn import_apriori(dir: &Path) -> Result<AprioriMap, MapError> {
    let meta = read_meta(&dir.join("meta.toml"))?;
    let geom = meta.geometry();
    let (w, h, _max, data) =
        pgm::read_pgm(&dir.join("occupancy.pgm")).map_err(|e| MapError::Io(e.to_string()))?;
    if (w as usize, h as usize) != (geom.cols, geom.rows) {
        return Err(MapError::GridMismatch(format!(
            "a-priori raster is {w}x{h}, metadata says {}x{}",
            geom.cols, geom.rows
        )));
    }
    Ok(AprioriMap {
        geom,
        occupancy: data.into_iter().map(|v| v as u8).collect(),
    })
}

/// Write an a-priori map in the import format.
pub fn export_apriori(dir: &Path, apriori: &AprioriMap) -> Result<(), MapError> {
    fs::create_dir_all(dir).map_err(|e| MapError::Io(format!("{}: {e}", dir.display())))?;
    pgm::write_pgm(
        &dir.join("occupancy.pgm"),
        apriori.geom.cols as u32,
        apriori.geom.rows as u32,
        1,
        &as_u16(&apriori.occupancy),
    )
    .map_err(|e| MapError::Io(e.to_string()))?;
    write_meta(&dir.join("meta.toml"), &apriori.geom, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::LabeledPointCloud;
    use crate::panoptic::ClassRegistry;
    use nalgebra::Point3;

    #[test]
    fn export_import_roundtrip_bit_exact() {
        let reg = ClassRegistry::default_construction();
        let mut map = LayeredGridMap::new_centered(Vector2::new(2.5, 2.5), 5.0, 0.25);
        map.update_static(&LabeledPointCloud {
            points: vec![
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(2.0, 3.0, 0.0),
                Point3::new(4.4, 0.2, 0.0),
            ],
            labels: vec![3, 8, 12],
            stamp: 7.25,
        });
        map.merge_layers();
        map.derive_occupancy(&reg);
        map.derive_cost(&reg);

        let dir = tempfile::tempdir().unwrap();
        export_layers(dir.path(), &map).unwrap();
        let back = import_layers(dir.path()).unwrap();
        assert_eq!(back.geom, map.geom);
        assert_eq!(back.static_class, map.static_class);
        assert_eq!(back.dynamic_class, map.dynamic_class);
        assert_eq!(back.merged_class, map.merged_class);
        assert_eq!(back.occupancy, map.occupancy);
        assert_eq!(back.stamp.to_bits(), map.stamp.to_bits());
        assert_eq!(back.cost.len(), map.cost.len());
        for (a, b) in back.cost.iter().zip(&map.cost) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn apriori_roundtrip() {
        let apriori = AprioriMap {
            geom: GridGeometry {
                resolution: 0.5,
                origin: Vector2::new(-1.0, -1.0),
                rows: 4,
                cols: 6,
            },
            occupancy: (0..24).map(|i| (i % 3 == 0) as u8).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        export_apriori(dir.path(), &apriori).unwrap();
        let back = import_apriori(dir.path()).unwrap();
        assert_eq!(back, apriori);
    }
}
