use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Per-class RGB colours; class ids wrap around.
pub const PALETTE: [[u8; 3]; 20] = [
    [128, 128, 128],
    [220, 20, 60],
    [30, 144, 255],
    [255, 165, 0],
    [50, 205, 50],
    [148, 0, 211],
    [255, 215, 0],
    [0, 206, 209],
    [255, 0, 255],
    [139, 69, 19],
    [0, 128, 0],
    [70, 130, 180],
    [244, 164, 96],
    [0, 0, 128],
    [255, 105, 180],
    [107, 142, 35],
    [210, 105, 30],
    [112, 128, 144],
    [255, 250, 205],
    [0, 0, 0],
];

/// Per-vertex payload of a PLY export.
#[derive(Clone, Copy, Debug)]
pub enum PlyAttribute<'a> {
    /// Class ids rendered through [`PALETTE`].
    Labels(&'a [u32]),
    /// One float property named `scalar`.
    Scalar(&'a [f64]),
}

impl PlyAttribute<'_> {
    fn len(&self) -> usize {
        match self {
            PlyAttribute::Labels(v) => v.len(),
            PlyAttribute::Scalar(v) => v.len(),
        }
    }
}

/// Writes an ASCII PLY with `x y z` and either RGB colours or a scalar.
pub fn write_ply(path: &Path, cloud: &PointCloud, attr: PlyAttribute<'_>) -> Result<()> {
    if attr.len() != cloud.len() {
        return Err(Error::invalid(
            "write_ply",
            format!("{} values for {} points", attr.len(), cloud.len()),
        ));
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    match attr {
        PlyAttribute::Labels(_) => {
            s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        }
        PlyAttribute::Scalar(_) => s.push_str("property float scalar\n"),
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.positions.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
        match attr {
            PlyAttribute::Labels(l) => {
                let [r, g, b] = PALETTE[l[i] as usize % PALETTE.len()];
                let _ = writeln!(s, " {r} {g} {b}");
            }
            PlyAttribute::Scalar(v) => {
                let _ = writeln!(s, " {}", v[i] as f32);
            }
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
