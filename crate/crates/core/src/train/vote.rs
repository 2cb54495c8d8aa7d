use crate::geometry::{voxel_grid_subsample, HashGrid, Point3, PointCloud};
use crate::layers::{Network, Pyramid};
use crate::loss::{ConfusionMatrix, IouReport};
use crate::{par, Error, Result};

/// Averaged class probabilities from overlapping sphere crops.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteResult {
    pub n_classes: usize,
    /// Renormalised probabilities, `N x n_classes` row-major.
    pub probs: Vec<f64>,
    /// Crops that covered each point.
    pub counts: Vec<u32>,
    pub n_crops: usize,
}

impl VoteResult {
    /// Arg-max class per point (ties to the smallest id).
    pub fn predictions(&self) -> Vec<u32> {
        self.probs
            .chunks(self.n_classes)
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Membership queries for spheres of a fixed radius.
struct SphereIndex<'a> {
    points: &'a [Point3],
    grid: HashGrid,
    r2: f64,
}

impl<'a> SphereIndex<'a> {
    fn new(points: &'a [Point3], radius: f64) -> Self {
        let cell = if radius > 0.0 { radius * (1.0 + 1e-9) } else { 1.0 };
        SphereIndex {
            points,
            grid: HashGrid::new(points, cell),
            r2: radius * radius,
        }
    }

    fn members(&self, c: &Point3) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .grid
            .within(self.points, c, self.r2, 1)
            .into_iter()
            .map(|(_, j)| j)
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Greedy sphere tiling until every point is covered `votes` times.
///
/// Pass `v` proposes centres at the centroids of a grid of cell `radius / 2`
/// (shifted by a fixed fraction of a cell on later passes) and keeps a centre
/// if it covers any point still short of `v + 1` votes. Points left short are
/// then used as centres themselves. Returns the parent ids of each crop.
pub fn plan_crops(positions: &[Point3], radius: f64, votes: usize) -> Result<Vec<Vec<usize>>> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::invalid("evaluate", format!("sphere radius {radius} is invalid")));
    }
    if positions.is_empty() {
        return Ok(Vec::new());
    }
    let index = SphereIndex::new(positions, radius);
    let cell = if radius > 0.0 { radius / 2.0 } else { 1.0 };
    let mut counts = vec![0usize; positions.len()];
    let mut crops = Vec::new();
    let mut take = |ids: Vec<usize>, counts: &mut Vec<usize>, need: usize| {
        if ids.iter().any(|&i| counts[i] < need) {
            for &i in &ids {
                counts[i] += 1;
            }
            crops.push(ids);
        }
    };
    for pass in 0..votes {
        let need = pass + 1;
        let shift = (pass as f64 * 0.618_033_988_749_895).fract() * cell;
        let shifted = PointCloud {
            positions: positions.iter().map(|p| [p[0] + shift, p[1] + shift, p[2] + shift]).collect(),
            features: Vec::new(),
            n_features: 0,
            labels: None,
        };
        let centres = voxel_grid_subsample(&shifted, cell)?.cloud.positions;
        for c in centres {
            let c = [c[0] - shift, c[1] - shift, c[2] - shift];
            take(index.members(&c), &mut counts, need);
        }
        for i in 0..positions.len() {
            if counts[i] < need {
                take(index.members(&positions[i]), &mut counts, need);
            }
        }
    }
    let uncovered = counts.iter().filter(|&&c| c < votes).count();
    if uncovered > 0 {
        return Err(Error::Coverage {
            uncovered,
            total: positions.len(),
        });
    }
    Ok(crops)
}

/// Runs every crop (in parallel), adds its softmax probabilities to its
/// points in crop order and renormalises each point's sum.
pub fn accumulate_votes(net: &Network, cloud: &PointCloud, crops: &[Vec<usize>]) -> Result<VoteResult> {
    let nc = net.n_classes();
    let per_crop: Vec<Result<Vec<f64>>> = par::map_collect(crops.len(), |c| {
        let crop = cloud.select(&crops[c]);
        let pyramid = Pyramid::build(&crop, &net.config)?;
        net.predict_proba_pyramid(&pyramid)
    });
    let mut probs = vec![0.0; cloud.len() * nc];
    let mut counts = vec![0u32; cloud.len()];
    for (ids, p) in crops.iter().zip(per_crop) {
        let p = p?;
        for (k, &i) in ids.iter().enumerate() {
            counts[i] += 1;
            for c in 0..nc {
                probs[i * nc + c] += p[k * nc + c];
            }
        }
    }
    let uncovered = counts.iter().filter(|&&c| c == 0).count();
    if uncovered > 0 {
        return Err(Error::Coverage {
            uncovered,
            total: cloud.len(),
        });
    }
    for row in probs.chunks_mut(nc) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(VoteResult {
        n_classes: nc,
        probs,
        counts,
        n_crops: crops.len(),
    })
}

/// Sphere-crop voting inference over a whole cloud.
pub fn vote_probabilities(net: &Network, cloud: &PointCloud, radius: f64, votes: usize) -> Result<VoteResult> {
    let crops = plan_crops(&cloud.positions, radius, votes)?;
    accumulate_votes(net, cloud, &crops)
}

/// Plain single-pass probabilities (the whole cloud as one crop).
pub fn forward_probabilities(net: &Network, cloud: &PointCloud) -> Result<Vec<f64>> {
    net.predict_proba(cloud)
}

/// Voting predictions for each labelled cloud, pooled into one report.
pub fn evaluate(net: &Network, clouds: &[PointCloud], radius: f64, votes: usize) -> Result<IouReport> {
    let mut m = ConfusionMatrix::new(net.n_classes());
    for cloud in clouds {
        let labels = cloud
            .labels
            .as_deref()
            .ok_or_else(|| Error::invalid("evaluate", "validation cloud has no labels"))?;
        let v = vote_probabilities(net, cloud, radius, votes)?;
        m.merge(&ConfusionMatrix::from_predictions(&v.predictions(), labels, net.n_classes())?)?;
    }
    Ok(m.report())
}
