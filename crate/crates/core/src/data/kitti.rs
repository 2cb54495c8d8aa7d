use std::path::Path;

use super::RemapTable;
use crate::geometry::{norm, PointCloud, IGNORE_LABEL};
use crate::{Error, Result};

const SCAN_RECORD: usize = 16;
const LABEL_RECORD: usize = 4;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_records(path: &Path, len: usize, record: usize) -> Result<()> {
    if len % record != 0 {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            offset: (len - len % record) as u64,
            msg: format!("length {len} is not a multiple of {record}-byte records"),
        });
    }
    Ok(())
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Reads packed little-endian `(x, y, z, intensity)` `f32` records.
/// Features are `[intensity, range]` with `range = |p|`.
pub fn read_kitti_scan(path: &Path) -> Result<PointCloud> {
    let bytes = read_file(path)?;
    check_records(path, bytes.len(), SCAN_RECORD)?;
    let n = bytes.len() / SCAN_RECORD;
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(2 * n);
    for (i, rec) in bytes.chunks_exact(SCAN_RECORD).enumerate() {
        let p = [f32_at(rec, 0) as f64, f32_at(rec, 4) as f64, f32_at(rec, 8) as f64];
        let intensity = f32_at(rec, 12) as f64;
        if !(p.iter().all(|v| v.is_finite()) && intensity.is_finite()) {
            return Err(Error::CorruptFile {
                path: path.to_path_buf(),
                offset: (i * SCAN_RECORD) as u64,
                msg: "non-finite value".into(),
            });
        }
        positions.push(p);
        features.push(intensity);
        features.push(norm(&p));
    }
    PointCloud::new(positions, features, 2, None)
}

/// Writes positions and the first feature channel as intensity.
pub fn write_kitti_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * SCAN_RECORD);
    for i in 0..cloud.len() {
        for v in cloud.positions[i] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let intensity = cloud.feature_row(i).first().copied().unwrap_or(0.0);
        out.extend_from_slice(&(intensity as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw `u32` label records, all 32 bits.
pub fn read_raw_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = read_file(path)?;
    check_records(path, bytes.len(), LABEL_RECORD)?;
    Ok(bytes
        .chunks_exact(LABEL_RECORD)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

/// Remapped labels plus the number of raw ids missing from the table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRead {
    pub labels: Vec<u32>,
    pub unknown: usize,
}

/// Reads a label file, keeps the low 16 bits and remaps them. Ids absent from
/// the table become [`IGNORE_LABEL`] and are counted. When `scan` is given
/// (path and point count) the label count must match it.
pub fn read_kitti_labels(
    path: &Path,
    remap: &RemapTable,
    scan: Option<(&Path, usize)>,
) -> Result<LabelRead> {
    let raw = read_raw_labels(path)?;
    if let Some((scan_path, n)) = scan {
        if raw.len() != n {
            return Err(Error::CorruptPair {
                scan: scan_path.to_path_buf(),
                labels: path.to_path_buf(),
                scan_points: n,
                label_count: raw.len(),
            });
        }
    }
    let mut unknown = 0;
    let labels = raw
        .iter()
        .map(|&r| {
            remap.remap(r & 0xffff).unwrap_or_else(|| {
                unknown += 1;
                IGNORE_LABEL
            })
        })
        .collect();
    if unknown > 0 {
        log::warn!("{}: {unknown} labels with ids missing from the remap table", path.display());
    }
    Ok(LabelRead { labels, unknown })
}

/// Writes raw `u32` label records.
pub fn write_kitti_labels(path: &Path, raw: &[u32]) -> Result<()> {
    let out: Vec<u8> = raw.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
