//! Plain-text point cloud records for tests and the CLI record/replay mode.
//!
//! Layout: a header line
//! `pannav-cloud v1 frame=<id> stamp=<t> [pose=x,y,z,qw,qx,qy,qz]`
//! followed by one `x y z label` line per point. Floats are written in
//! shortest-roundtrip form so files re-read bit-exactly.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use super::{CloudError, LabeledPointCloud, LidarScan};
use crate::geometry::Pose3D;
use crate::panoptic::ClassId;

/// A parsed cloud file: labeled points plus optional sensor pose.
#[derive(Debug, Clone)]
pub struct CloudRecord {
    pub frame_id: String,
    pub stamp: f64,
    pub pose: Option<Pose3D>,
    pub points: Vec<Point3<f64>>,
    pub labels: Vec<ClassId>,
}

impl CloudRecord {
    pub fn from_scan(scan: &LidarScan) -> Self {
        Self {
            frame_id: scan.sensor_pose.frame_id.clone(),
            stamp: scan.stamp,
            pose: Some(scan.sensor_pose.clone()),
            points: scan.points.clone(),
            labels: vec![0; scan.points.len()],
        }
    }

    pub fn from_cloud(cloud: &LabeledPointCloud, frame_id: &str) -> Self {
        Self {
            frame_id: frame_id.to_string(),
            stamp: cloud.stamp,
            pose: None,
            points: cloud.points.clone(),
            labels: cloud.labels.clone(),
        }
    }

    pub fn into_scan(self) -> Result<LidarScan, CloudError> {
        let pose = self.pose.ok_or_else(|| {
            CloudError::Parse("scan record is missing a pose= header token".into())
        })?;
        Ok(LidarScan {
            points: self.points,
            stamp: self.stamp,
            sensor_pose: pose,
        })
    }
}

pub fn write_cloud_file(path: &Path, record: &CloudRecord) -> Result<(), CloudError> {
    let mut out = String::new();
    out.push_str(&format!(
        "pannav-cloud v1 frame={} stamp={:?}",
        record.frame_id, record.stamp
    ));
    if let Some(pose) = &record.pose {
        let q = pose.rotation.as_ref();
        out.push_str(&format!(
            " pose={:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            pose.translation.x, pose.translation.y, pose.translation.z, q.w, q.i, q.j, q.k
        ));
    }
    out.push('\n');
    for (p, l) in record.points.iter().zip(&record.labels) {
        out.push_str(&format!("{:?} {:?} {:?} {}\n", p.x, p.y, p.z, l));
    }
    fs::write(path, out).map_err(|e| CloudError::Io(format!("{}: {e}", path.display())))
}

pub fn read_cloud_file(path: &Path) -> Result<CloudRecord, CloudError> {
    let text =
        fs::read_to_string(path).map_err(|e| CloudError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CloudError::Parse("empty cloud file".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("pannav-cloud") || tokens.next() != Some("v1") {
        return Err(CloudError::Parse(format!(
            "{}: bad header '{header}'",
            path.display()
        )));
    }
    let mut frame_id = String::new();
    let mut stamp = 0.0f64;
    let mut pose = None;
    for tok in tokens {
        if let Some(v) = tok.strip_prefix("frame=") {
            frame_id = v.to_string();
        } else if let Some(v) = tok.strip_prefix("stamp=") {
            stamp = v
                .parse()
                .map_err(|_| CloudError::Parse(format!("bad stamp '{v}'")))?;
        } else if let Some(v) = tok.strip_prefix("pose=") {
            let vals: Vec<f64> = v
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CloudError::Parse(format!("bad pose '{v}'")))?;
            if vals.len() != 7 {
                return Err(CloudError::Parse(format!("pose needs 7 values, got {}", vals.len())));
            }
            pose = Some((
                Vector3::new(vals[0], vals[1], vals[2]),
                Quaternion::new(vals[3], vals[4], vals[5], vals[6]),
            ));
        }
    }
    if frame_id.is_empty() {
        return Err(CloudError::Parse("header missing frame=".into()));
    }
    let pose = pose.map(|(t, q)| {
        Pose3D::new(t, UnitQuaternion::new_unchecked(q), &frame_id).with_stamp(stamp)
    });

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(CloudError::Parse(format!("line {}: want 4 fields", ln + 2)));
        }
        let x = parts[0].parse().map_err(|_| CloudError::Parse(format!("line {}", ln + 2)))?;
        let y = parts[1].parse().map_err(|_| CloudError::Parse(format!("line {}", ln + 2)))?;
        let z = parts[2].parse().map_err(|_| CloudError::Parse(format!("line {}", ln + 2)))?;
        let l: u8 = parts[3].parse().map_err(|_| CloudError::Parse(format!("line {}", ln + 2)))?;
        points.push(Point3::new(x, y, z));
        labels.push(l);
    }
    Ok(CloudRecord {
        frame_id,
        stamp,
        pose,
        points,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WORLD_FRAME;

    #[test]
    fn scan_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.txt");
        let scan = LidarScan {
            points: vec![
                Point3::new(0.1, -2.25, 1.0 / 3.0),
                Point3::new(std::f64::consts::PI, 0.0, -0.0),
            ],
            stamp: 12.700000000000001,
            sensor_pose: Pose3D::from_planar(1.5, -2.5, 0.7, WORLD_FRAME).with_stamp(12.7),
        };
        write_cloud_file(&path, &CloudRecord::from_scan(&scan)).unwrap();
        let back = read_cloud_file(&path).unwrap().into_scan().unwrap();
        assert_eq!(back.points, scan.points);
        assert_eq!(back.stamp.to_bits(), scan.stamp.to_bits());
        assert_eq!(back.sensor_pose.translation, scan.sensor_pose.translation);
        assert_eq!(
            back.sensor_pose.rotation.as_ref().coords,
            scan.sensor_pose.rotation.as_ref().coords
        );
    }

    #[test]
    fn labeled_cloud_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.txt");
        let cloud = LabeledPointCloud {
            points: vec![Point3::new(1.0, 2.0, 3.0)],
            labels: vec![17],
            stamp: 0.5,
        };
        write_cloud_file(&path, &CloudRecord::from_cloud(&cloud, WORLD_FRAME)).unwrap();
        let rec = read_cloud_file(&path).unwrap();
        assert_eq!(rec.labels, vec![17]);
        assert_eq!(rec.points, cloud.points);
        assert!(rec.pose.is_none());
    }
}
