//! Mask sources: the seam that replaces the segmentation network.
//!
//! `FileMaskSource` reads recorded frames from disk; the simulator-backed
//! source lives in the sim module. The on-disk layout per frame is three
//! ASCII graymaps (class id, instance id, max-class confidence) plus an
//! `index.txt` mapping frame basenames to stamps.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::frame::PanopticFrame;
use super::registry::{ClassId, UNKNOWN_CLASS};
use crate::pgm;

#[derive(Debug, Error)]
pub enum MaskSourceError {
    #[error("end of stream")]
    EndOfStream,
    #[error("corrupt mask file {path}: {msg}")]
    CorruptMaskFile { path: PathBuf, msg: String },
    #[error("requested stamp {requested} but next frame is stamped {got} (period {period})")]
    StampMismatch {
        requested: f64,
        got: f64,
        period: f64,
    },
}

/// Pull-based source of soft segmentation frames, consumed in stamp order.
pub trait MaskSource {
    fn next_mask(&mut self, stamp: f64) -> Result<PanopticFrame, MaskSourceError>;
}

/// Write one frame as class/instance/confidence rasters.
///
/// Only the argmax class and its probability are stored; this is lossless
/// with respect to thresholding, which never looks past the maximum.
pub fn write_frame_files(
    dir: &Path,
    basename: &str,
    frame: &PanopticFrame,
) -> Result<(), MaskSourceError> {
    let n = frame.len();
    let mut classes = vec![0u16; n];
    let mut instances = vec![0u16; n];
    let mut conf = vec![0u16; n];
    for idx in 0..n {
        if let Some((c, p)) = frame.argmax(idx) {
            classes[idx] = c as u16;
            conf[idx] = (p * 255.0).round() as u16;
            instances[idx] = frame.instance(idx) as u16;
        }
    }
    let wrap = |e: pgm::PgmError| MaskSourceError::CorruptMaskFile {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    };
    pgm::write_pgm(&dir.join(format!("{basename}_class.pgm")), frame.width, frame.height, 255, &classes).map_err(wrap)?;
    pgm::write_pgm(&dir.join(format!("{basename}_inst.pgm")), frame.width, frame.height, 65535, &instances).map_err(wrap)?;
    pgm::write_pgm(&dir.join(format!("{basename}_conf.pgm")), frame.width, frame.height, 255, &conf).map_err(wrap)?;
    Ok(())
}

/// Append an index line for a recorded frame.
pub fn append_index_line(dir: &Path, basename: &str, stamp: f64) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("index.txt"))?;
    writeln!(f, "{basename} {stamp:?}")
}

/// Reads frames recorded by `write_frame_files` in index order.
pub struct FileMaskSource {
    dir: PathBuf,
    entries: Vec<(String, f64)>,
    cursor: usize,
    period: f64,
}

impl FileMaskSource {
    pub fn open(dir: &Path) -> Result<Self, MaskSourceError> {
        let index_path = dir.join("index.txt");
        let text = fs::read_to_string(&index_path).map_err(|e| MaskSourceError::CorruptMaskFile {
            path: index_path.clone(),
            msg: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next();
            let stamp = parts.next().and_then(|s| s.parse::<f64>().ok());
            match (name, stamp) {
                (Some(n), Some(s)) => entries.push((n.to_string(), s)),
                _ => {
                    return Err(MaskSourceError::CorruptMaskFile {
                        path: index_path,
                        msg: format!("bad index line {}", ln + 1),
                    })
                }
            }
        }
        let period = if entries.len() >= 2 {
            entries[1].1 - entries[0].1
        } else {
            f64::INFINITY
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            entries,
            cursor: 0,
            period,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn read_frame(&self, basename: &str, stamp: f64) -> Result<PanopticFrame, MaskSourceError> {
        let read = |suffix: &str| -> Result<(u32, u32, Vec<u16>), MaskSourceError> {
            let path = self.dir.join(format!("{basename}_{suffix}.pgm"));
            let (w, h, _max, data) =
                pgm::read_pgm(&path).map_err(|e| MaskSourceError::CorruptMaskFile {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
            Ok((w, h, data))
        };
        let (w, h, classes) = read("class")?;
        let (wi, hi, instances) = read("inst")?;
        let conf_path = self.dir.join(format!("{basename}_conf.pgm"));
        let conf = if conf_path.exists() {
            let (wc, hc, data) = read("conf")?;
            if (wc, hc) != (w, h) {
                return Err(MaskSourceError::CorruptMaskFile {
                    path: conf_path,
                    msg: "confidence raster size mismatch".into(),
                });
            }
            Some(data)
        } else {
            None
        };
        if (wi, hi) != (w, h) {
            return Err(MaskSourceError::CorruptMaskFile {
                path: self.dir.join(format!("{basename}_inst.pgm")),
                msg: "instance raster size mismatch".into(),
            });
        }
        let mut frame = PanopticFrame::new_abstain(w, h, stamp);
        for v in 0..h {
            for u in 0..w {
                let idx = (v as usize) * (w as usize) + u as usize;
                let class = classes[idx] as ClassId;
                if class == UNKNOWN_CLASS {
                    continue;
                }
                let p = conf.as_ref().map_or(1.0, |c| c[idx] as f32 / 255.0);
                frame
                    .set_pixel(u, v, &[(class, p)], instances[idx] as u32)
                    .map_err(|e| MaskSourceError::CorruptMaskFile {
                        path: self.dir.join(format!("{basename}_class.pgm")),
                        msg: e.to_string(),
                    })?;
            }
        }
        Ok(frame)
    }
}

impl MaskSource for FileMaskSource {
    fn next_mask(&mut self, stamp: f64) -> Result<PanopticFrame, MaskSourceError> {
        let (name, frame_stamp) = self
            .entries
            .get(self.cursor)
            .cloned()
            .ok_or(MaskSourceError::EndOfStream)?;
        if self.period.is_finite() && (frame_stamp - stamp).abs() > self.period {
            return Err(MaskSourceError::StampMismatch {
                requested: stamp,
                got: frame_stamp,
                period: self.period,
            });
        }
        let frame = self.read_frame(&name, frame_stamp)?;
        self.cursor += 1;
        Ok(frame)
    }
}
