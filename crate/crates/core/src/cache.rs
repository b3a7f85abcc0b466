//! Content-addressed on-disk cache for expensive reference values.
//!
//! File layout: 8-byte magic, little-endian `u32` version, `u64` count,
//! then `count` little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QMCFBREF";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.bin"))
}

pub fn encode(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err("not a reference cache file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format!("cache version {version}, expected {VERSION}"));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[HEADER..];
    if body.len() != 8 * count {
        return Err(format!("truncated: {} bytes for {count} values", body.len()));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Returns the cached values for `key`, computing and storing them if the
/// file is missing or unreadable.
pub fn load_or_compute(dir: &Path, key: &str, compute: impl FnOnce() -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let path = cache_path(dir, key);
    if let Ok(bytes) = fs::read(&path) {
        match decode(&bytes) {
            Ok(values) => {
                log::debug!("reference cache hit {}", path.display());
                return Ok(values);
            }
            Err(reason) => log::warn!("ignoring cache {}: {reason}", path.display()),
        }
    }
    let values = compute()?;
    let wrap = |e: std::io::Error| Error::Cache {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(wrap)?;
    // Write to a sibling file first so readers never see a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(wrap)?;
    file.write_all(&encode(&values)).map_err(wrap)?;
    drop(file);
    fs::rename(&tmp, &path).map_err(wrap)?;
    Ok(values)
}
