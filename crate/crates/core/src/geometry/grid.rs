use std::collections::HashMap;

use super::{dist2, Point3};

type CellKey = [i64; 3];

/// Uniform hash grid over a fixed support set.
///
/// Each occupied cell keeps its member indices in ascending order so scans
/// visit supports deterministically.
#[derive(Debug, Clone)]
pub struct HashGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
    lo: CellKey,
    hi: CellKey,
}

impl HashGrid {
    pub fn new(points: &[Point3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i);
        }
        HashGrid { cell, cells, lo, hi }
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    /// All supports with squared distance `<= r2` from `q`, scanning `reach`
    /// cells in every direction. Returned as `(d2, index)` pairs, unsorted.
    pub fn within(&self, points: &[Point3], q: &Point3, r2: f64, reach: i64) -> Vec<(f64, usize)> {
        let c = key(q, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in ids {
                            let d = dist2(q, &points[j]);
                            if d <= r2 {
                                out.push((d, j));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// The `k` nearest supports of `q`, sorted by `(d2, index)`, skipping
    /// index `skip` when given.
    pub fn nearest(
        &self,
        points: &[Point3],
        q: &Point3,
        k: usize,
        skip: Option<usize>,
    ) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 8);
        if k == 0 || self.cells.is_empty() {
            return best;
        }
        let c = key(q, self.cell);
        // Rings beyond this radius cannot contain any occupied cell.
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut ring = 0i64;
        loop {
            if ring > 0 && 6 * (2 * ring + 1) * (2 * ring + 1) > self.cells.len() as i64 {
                // The ring would touch more cells than are occupied: finish
                // with a direct scan of every support.
                best = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| Some(j) != skip)
                    .map(|(j, p)| (dist2(q, p), j))
                    .collect();
                best.sort_by(cmp_candidate);
                best.truncate(k);
                break;
            }
            self.scan_ring(points, q, c, ring, skip, &mut best);
            best.sort_by(cmp_candidate);
            best.truncate(k);
            if ring >= max_ring {
                break;
            }
            if best.len() == k {
                // Unvisited supports are farther than `ring * cell` along some axis.
                let bound = ring as f64 * self.cell;
                if best[k - 1].0 < bound * bound * (1.0 - 1e-12) {
                    break;
                }
            }
            ring += 1;
        }
        best
    }

    fn scan_ring(
        &self,
        points: &[Point3],
        q: &Point3,
        c: CellKey,
        ring: i64,
        skip: Option<usize>,
        out: &mut Vec<(f64, usize)>,
    ) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &j in ids {
                            if Some(j) != skip {
                                out.push((dist2(q, &points[j]), j));
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn cmp_candidate(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[inline]
fn key(p: &Point3, cell: f64) -> CellKey {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}
