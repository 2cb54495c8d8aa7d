use std::collections::HashMap;

use super::{NeighborIndex, PointCloud, IGNORE_LABEL};
use crate::{Error, Result};

/// Output of [`voxel_grid_subsample`]: one representative per occupied cell
/// and the input points pooled into each.
#[derive(Clone, Debug)]
pub struct Subsampled {
    pub cloud: PointCloud,
    /// Query `i` lists the input indices that fed output point `i`.
    pub pool: NeighborIndex,
}

/// Replaces the points of every occupied cell by their centroid, averaging
/// features and taking the majority label (ties to the smallest id).
///
/// Output points appear in order of the first input point of each cell.
pub fn voxel_grid_subsample(cloud: &PointCloud, cell: f64) -> Result<Subsampled> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(Error::invalid(
            "voxel_grid_subsample",
            format!("cell size must be positive, got {cell}"),
        ));
    }
    let mut slot: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let k = [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ];
        let s = *slot.entry(k).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[s].push(i);
    }

    let f = cloud.n_features;
    let mut positions = Vec::with_capacity(members.len());
    let mut features = Vec::with_capacity(members.len() * f);
    let mut labels = cloud.labels.as_ref().map(|_| Vec::with_capacity(members.len()));
    for ids in &members {
        let n = ids.len() as f64;
        let mut c = [0.0; 3];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in ids {
            let p = cloud.positions[i];
            for a in 0..3 {
                c[a] += p[a];
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        // Clamping keeps rounding from moving a centroid out of its cell.
        for a in 0..3 {
            c[a] = (c[a] / n).clamp(lo[a], hi[a]);
        }
        positions.push(c);

        let start = features.len();
        features.resize(start + f, 0.0);
        for &i in ids {
            for (acc, v) in features[start..].iter_mut().zip(cloud.feature_row(i)) {
                *acc += v;
            }
        }
        for v in &mut features[start..] {
            *v /= n;
        }

        if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels.as_ref()) {
            out.push(majority_label(ids.iter().map(|&i| src[i])));
        }
    }

    Ok(Subsampled {
        cloud: PointCloud {
            positions,
            features,
            n_features: f,
            labels,
        },
        pool: NeighborIndex::from_lists(members, cell, cloud.len()),
    })
}

fn majority_label(labels: impl Iterator<Item = u32>) -> u32 {
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for l in labels.filter(|&l| l != IGNORE_LABEL) {
        match counts.iter_mut().find(|(c, _)| *c == l) {
            Some((_, n)) => *n += 1,
            None => counts.push((l, 1)),
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .unwrap_or(IGNORE_LABEL)
}
