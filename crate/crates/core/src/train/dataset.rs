use std::path::Path;

use super::{DataConfig, DataSource, NetworkConfig};
use crate::data::{generate_scene, DatasetManifest, RemapTable, Split, SYNTHETIC_CLASS_NAMES};
use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Seed distance between training and validation scenes.
pub const VALIDATION_SEED_OFFSET: u64 = 1000;

/// The configured remap table (bundled one when no path is given).
pub fn remap_table(data: &DataConfig) -> Result<RemapTable> {
    if data.remap.is_empty() {
        Ok(RemapTable::default())
    } else {
        RemapTable::load(Path::new(&data.remap))
    }
}

/// Clouds of one split as described by `config.data`.
pub fn load_split(config: &NetworkConfig, split: Split) -> Result<Vec<PointCloud>> {
    let data = &config.data;
    match data.source {
        DataSource::Synthetic => {
            let (count, base) = match split {
                Split::Train => (data.train_scenes, data.scene_seed),
                Split::Validation => (
                    data.validation_scenes,
                    data.scene_seed + VALIDATION_SEED_OFFSET,
                ),
            };
            (0..count as u64)
                .map(|i| generate_scene(&data.scene.clone().with_seed(base + i)))
                .collect()
        }
        DataSource::Kitti => {
            if data.kitti_root.is_empty() {
                return Err(Error::Config(
                    "data.source = \"kitti\" needs data.kitti_root".into(),
                ));
            }
            let manifest = DatasetManifest::new(&data.kitti_root, remap_table(data)?);
            let mut pairs = manifest.pairs(split)?;
            if data.max_scans > 0 {
                pairs.truncate(data.max_scans);
            }
            pairs.iter().map(|p| p.load(&manifest.remap)).collect()
        }
    }
}

/// Display names of the model's classes.
pub fn class_names(config: &NetworkConfig) -> Result<Vec<String>> {
    let n = config.model.n_classes;
    let known: Vec<String> = match config.data.source {
        DataSource::Synthetic => SYNTHETIC_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        DataSource::Kitti => remap_table(&config.data)?.class_names().to_vec(),
    };
    Ok((0..n)
        .map(|c| known.get(c).cloned().unwrap_or_else(|| format!("class{c}")))
        .collect())
}
