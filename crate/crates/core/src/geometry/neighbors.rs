use super::grid::{cmp_candidate, HashGrid};
use super::Point3;
use crate::{par, Error, Result};

/// Variable-length neighbour lists in compressed form.
///
/// Query `i` owns `indices[offsets[i]..offsets[i + 1]]`, each an index into
/// the support set, ordered by increasing distance (ties by index).
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub radius: f64,
    pub n_supports: usize,
}

impl NeighborIndex {
    /// Builds an index from per-query lists.
    pub fn from_lists(lists: Vec<Vec<usize>>, radius: f64, n_supports: usize) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let total = lists.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(total);
        for l in lists {
            indices.extend(l);
            offsets.push(indices.len());
        }
        NeighborIndex {
            offsets,
            indices,
            radius,
            n_supports,
        }
    }

    pub fn n_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_pairs(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Query index of every stored pair, aligned with `indices`.
    pub fn pair_queries(&self) -> Vec<usize> {
        let mut q = Vec::with_capacity(self.n_pairs());
        for i in 0..self.n_queries() {
            q.extend(std::iter::repeat_n(i, self.offsets[i + 1] - self.offsets[i]));
        }
        q
    }

    /// Checks the structural invariants (monotone offsets, indices in range).
    pub fn validate(&self) -> Result<()> {
        if self.offsets.first() != Some(&0) || self.offsets.last() != Some(&self.indices.len()) {
            return Err(Error::invalid("NeighborIndex", "offsets do not span indices"));
        }
        if self.offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("NeighborIndex", "offsets not monotone"));
        }
        if let Some(&j) = self.indices.iter().find(|&&j| j >= self.n_supports) {
            return Err(Error::invalid(
                "NeighborIndex",
                format!("index {j} outside support set of {}", self.n_supports),
            ));
        }
        Ok(())
    }
}

/// Every support within `radius` of each query (inclusive), nearest first,
/// truncated to the `cap` nearest. Ties are broken by support index. A query
/// that also appears among the supports finds itself at distance zero.
pub fn radius_neighbors(
    queries: &[Point3],
    supports: &[Point3],
    radius: f64,
    cap: usize,
) -> Result<NeighborIndex> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(
            "radius_neighbors",
            format!("radius must be positive, got {radius}"),
        ));
    }
    if cap == 0 {
        return Err(Error::invalid("radius_neighbors", "cap must be at least 1"));
    }
    if supports.is_empty() {
        return Ok(NeighborIndex::from_lists(
            vec![Vec::new(); queries.len()],
            radius,
            0,
        ));
    }
    // Slightly oversized cells keep every in-radius support within one ring.
    let grid = HashGrid::new(supports, radius * (1.0 + 1e-9));
    let r2 = radius * radius;
    let lists = par::map_collect(queries.len(), |i| {
        let mut found = grid.within(supports, &queries[i], r2, 1);
        found.sort_by(cmp_candidate);
        found.truncate(cap);
        found.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
    });
    Ok(NeighborIndex::from_lists(lists, radius, supports.len()))
}

fn knn_cell(supports: &[Point3], k: usize) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in supports {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let ext: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-6)).collect();
    let max_ext = ext.iter().cloned().fold(0.0, f64::max);
    // Aim for roughly k points per cell, assuming the cloud fills its box
    // along its two largest extents (LiDAR scenes are mostly surfaces).
    let mut e = ext.clone();
    e.sort_by(f64::total_cmp);
    let area = e[1] * e[2];
    let cell = (area * k.max(1) as f64 / supports.len() as f64).sqrt();
    cell.clamp(max_ext * 1e-4, max_ext.max(1e-6))
}

/// The `k` nearest supports of each query (fewer when the support set is
/// smaller), sorted by distance with ties broken by index.
pub fn knn(queries: &[Point3], supports: &[Point3], k: usize) -> NeighborIndex {
    knn_impl(queries, supports, k, false)
}

/// k-nearest neighbours of each point among the other points of the same set.
pub fn knn_excluding_self(points: &[Point3], k: usize) -> NeighborIndex {
    knn_impl(points, points, k, true)
}

fn knn_impl(queries: &[Point3], supports: &[Point3], k: usize, skip_self: bool) -> NeighborIndex {
    if supports.is_empty() || k == 0 {
        return NeighborIndex::from_lists(vec![Vec::new(); queries.len()], f64::INFINITY, supports.len());
    }
    let grid = HashGrid::new(supports, knn_cell(supports, k));
    let lists = par::map_collect(queries.len(), |i| {
        let skip = skip_self.then_some(i);
        grid.nearest(supports, &queries[i], k, skip)
            .into_iter()
            .map(|(_, j)| j)
            .collect::<Vec<_>>()
    });
    NeighborIndex::from_lists(lists, f64::INFINITY, supports.len())
}

/// Index of the closest coarse point for every fine point (ties to the
/// smallest index).
pub fn nearest_upsample_map(fine: &[Point3], coarse: &[Point3]) -> Result<Vec<usize>> {
    if coarse.is_empty() {
        return Err(Error::invalid(
            "nearest_upsample_map",
            "coarse point set is empty",
        ));
    }
    Ok(knn(fine, coarse, 1).indices)
}
