use std::path::{Path, PathBuf};

use super::{read_kitti_labels, read_kitti_scan, RemapTable};
use crate::geometry::PointCloud;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// A scan file and its label file (which may not exist for test sequences).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPair {
    pub sequence: u32,
    pub scan: PathBuf,
    pub labels: PathBuf,
}

impl ScanPair {
    /// Reads the scan and, when present, its remapped labels.
    pub fn load(&self, remap: &RemapTable) -> Result<PointCloud> {
        let mut cloud = read_kitti_scan(&self.scan)?;
        if self.labels.exists() {
            let read = read_kitti_labels(&self.labels, remap, Some((&self.scan, cloud.len())))?;
            cloud.labels = Some(read.labels);
        }
        Ok(cloud)
    }
}

/// SemanticKITTI layout `root/sequences/NN/{velodyne/*.bin,labels/*.label}`
/// with the standard split: sequences 00-10 train except 08, which validates.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub remap: RemapTable,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, remap: RemapTable) -> Self {
        DatasetManifest {
            root: root.into(),
            train: (0..=10).filter(|&s| s != 8).collect(),
            validation: vec![8],
            remap,
        }
    }

    pub fn sequence_dir(&self, seq: u32) -> PathBuf {
        self.root.join("sequences").join(format!("{seq:02}"))
    }

    pub fn split_of(&self, seq: u32) -> Option<Split> {
        if self.train.contains(&seq) {
            Some(Split::Train)
        } else if self.validation.contains(&seq) {
            Some(Split::Validation)
        } else {
            None
        }
    }

    /// Scan/label pairs of every sequence in the split that exists on disk,
    /// sorted by sequence then file name.
    pub fn pairs(&self, split: Split) -> Result<Vec<ScanPair>> {
        let seqs = match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
        };
        let mut out = Vec::new();
        for &seq in seqs {
            let dir = self.sequence_dir(seq);
            let velodyne = dir.join("velodyne");
            if !velodyne.is_dir() {
                continue;
            }
            out.extend(list_scans(&velodyne)?.into_iter().map(|scan| {
                let stem = scan.file_stem().unwrap_or_default().to_owned();
                let labels = dir.join("labels").join(stem).with_extension("label");
                ScanPair {
                    sequence: seq,
                    scan,
                    labels,
                }
            }));
        }
        Ok(out)
    }
}

fn list_scans(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut scans: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    scans.sort();
    Ok(scans)
}
