//! Dataset readers, synthetic scenes and PLY export.

mod kitti;
mod manifest;
mod ply;
mod remap;
mod synthetic;

pub use kitti::{
    read_kitti_labels, read_kitti_scan, read_raw_labels, write_kitti_labels, write_kitti_scan,
    LabelRead,
};
pub use manifest::{DatasetManifest, ScanPair, Split};
pub use ply::{write_ply, PlyAttribute, PALETTE};
pub use remap::RemapTable;
pub use synthetic::{
    generate_scene, SceneSpec, BOX, CLASS_NAMES as SYNTHETIC_CLASS_NAMES, GROUND, POLE, WALL,
};
