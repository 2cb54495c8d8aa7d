use std::sync::Arc;

use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::geometry::{
    nearest_upsample_map, radius_neighbors, voxel_grid_subsample, NeighborIndex, Point3,
    PointCloud,
};
use crate::{Error, Result};

/// Flattened neighbour pairs of one encoder level with their offsets.
///
/// Built once per level and shared by every branch of that level.
#[derive(Clone, Debug)]
pub struct PairGeometry {
    pub offsets: Arc<[usize]>,
    /// Query point of every pair.
    pub queries: Arc<[usize]>,
    /// Neighbour (support) point of every pair.
    pub supports: Arc<[usize]>,
    /// `p_support - p_query` for every pair.
    pub deltas: Vec<Point3>,
}

impl PairGeometry {
    pub fn new(queries: &[Point3], supports: &[Point3], neighbors: &NeighborIndex) -> Self {
        let q = neighbors.pair_queries();
        let deltas = q
            .iter()
            .zip(&neighbors.indices)
            .map(|(&i, &j)| {
                let (a, b) = (&queries[i], &supports[j]);
                [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
            })
            .collect();
        PairGeometry {
            offsets: neighbors.offsets.clone().into(),
            queries: q.into(),
            supports: neighbors.indices.clone().into(),
            deltas,
        }
    }

    pub fn n_points(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_pairs(&self) -> usize {
        self.deltas.len()
    }

    pub fn delta_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.deltas.len(), 3],
            self.deltas.iter().flat_map(|d| d.iter().copied()).collect(),
        )
        .expect("E x 3")
    }
}

/// One resolution of the subsampling pyramid.
#[derive(Clone, Debug)]
pub struct Level {
    pub positions: Vec<Point3>,
    pub cell: f64,
    pub conv_radius: f64,
    pub neighbors: NeighborIndex,
    /// Points of the previous (finer) level pooled into each point here.
    pub pool: Option<NeighborIndex>,
    /// Nearest point of the next (coarser) level for each point here.
    pub up_map: Option<Vec<usize>>,
}

impl Level {
    pub fn pairs(&self) -> PairGeometry {
        PairGeometry::new(&self.positions, &self.positions, &self.neighbors)
    }
}

/// Index structures for one forward pass: grid-subsampled levels with their
/// radius neighbourhoods, pooling groups and upsampling maps.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub input_positions: Vec<Point3>,
    pub levels: Vec<Level>,
    /// Input features averaged onto level 0 (`n0 x width`).
    pub features: Tensor,
    /// Nearest level-0 point for every input point.
    pub head_map: Vec<usize>,
}

impl Pyramid {
    pub fn build(cloud: &PointCloud, cfg: &ModelConfig) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::invalid("network_forward", "empty point cloud"));
        }
        if cloud.n_features != cfg.in_features {
            return Err(Error::invalid(
                "network_forward",
                format!(
                    "cloud has {} features, model expects {}",
                    cloud.n_features, cfg.in_features
                ),
            ));
        }
        let with_const;
        let source = if cfg.constant_channel {
            with_const = cloud.with_constant_channel();
            &with_const
        } else {
            cloud
        };
        let stripped = PointCloud {
            positions: source.positions.clone(),
            features: source.features.clone(),
            n_features: source.n_features,
            labels: None,
        };
        let base = voxel_grid_subsample(&stripped, cfg.cell_0)?;
        let features = Tensor::new(
            vec![base.cloud.len(), base.cloud.n_features],
            base.cloud.features.clone(),
        )?;

        let mut levels: Vec<Level> = Vec::with_capacity(cfg.n_layers);
        let mut positions = base.cloud.positions;
        let mut pool = None;
        for l in 0..cfg.n_layers {
            if l > 0 {
                let prev = PointCloud {
                    positions: positions.clone(),
                    features: Vec::new(),
                    n_features: 0,
                    labels: None,
                };
                let sub = voxel_grid_subsample(&prev, cfg.cell(l))?;
                positions = sub.cloud.positions;
                pool = Some(sub.pool);
            }
            let r = cfg.conv_radius(l);
            let neighbors = radius_neighbors(&positions, &positions, r, cfg.neighbor_cap)?;
            levels.push(Level {
                positions: positions.clone(),
                cell: cfg.cell(l),
                conv_radius: r,
                neighbors,
                pool: pool.take(),
                up_map: None,
            });
        }
        for l in 0..levels.len().saturating_sub(1) {
            let map = nearest_upsample_map(&levels[l].positions, &levels[l + 1].positions)?;
            levels[l].up_map = Some(map);
        }
        let head_map = nearest_upsample_map(&cloud.positions, &levels[0].positions)?;
        Ok(Pyramid {
            input_positions: cloud.positions.clone(),
            levels,
            features,
            head_map,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.input_positions.len()
    }

    /// Same index structures with every position shifted by `t`.
    pub fn translated(&self, t: Point3) -> Pyramid {
        let shift = |ps: &[Point3]| -> Vec<Point3> {
            ps.iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect()
        };
        let mut out = self.clone();
        out.input_positions = shift(&self.input_positions);
        for lv in &mut out.levels {
            lv.positions = shift(&lv.positions);
        }
        out
    }
}
