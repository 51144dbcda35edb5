//! Minimal ASCII (P2) portable graymap reader/writer.
//!
//! Used for mask rasters and map layer exports. Values up to 65535 per the
//! PGM maxval rules; everything is plain text so recorded runs diff cleanly.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed pgm {path}: {msg}")]
    Malformed { path: String, msg: String },
}

pub fn write_pgm(path: &Path, width: u32, height: u32, maxval: u16, data: &[u16]) -> Result<(), PgmError> {
    assert_eq!(data.len(), (width * height) as usize);
    let mut out = String::with_capacity(data.len() * 4 + 32);
    out.push_str(&format!("P2\n{width} {height}\n{maxval}\n"));
    for row in data.chunks(width as usize) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(out.as_bytes()).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_pgm(path: &Path) -> Result<(u32, u32, u16, Vec<u16>), PgmError> {
    let text = fs::read_to_string(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |msg: &str| PgmError::Malformed {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    if tokens.next() != Some("P2") {
        return Err(malformed("missing P2 magic"));
    }
    let mut next_num = |name: &str| -> Result<u64, PgmError> {
        tokens
            .next()
            .ok_or_else(|| malformed(&format!("missing {name}")))?
            .parse::<u64>()
            .map_err(|_| malformed(&format!("bad {name}")))
    };
    let width = next_num("width")? as u32;
    let height = next_num("height")? as u32;
    let maxval = next_num("maxval")? as u16;
    let n = (width as usize) * (height as usize);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(next_num("pixel")? as u16);
    }
    Ok((width, height, maxval, data))
}
