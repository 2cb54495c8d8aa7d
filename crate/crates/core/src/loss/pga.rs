use crate::autodiff::{Graph, Var};
use crate::geometry::{knn_excluding_self, NeighborIndex, PointCloud, IGNORE_LABEL};
use crate::{Error, Result};

/// Neighbour count used for scores unless configured otherwise.
pub const DEFAULT_PGA_K: usize = 16;

/// Per-point label-disagreement scores and the derived loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PgaField {
    pub scores: Vec<u32>,
    /// `eta + theta * score`.
    pub weights: Vec<f64>,
    pub eta: f64,
    pub theta: f64,
    pub k: usize,
}

/// Number of neighbours whose label differs from the point's own label.
///
/// Neighbours labelled [`IGNORE_LABEL`] are not counted; an ignored point
/// scores 0.
pub fn pga_score(labels: &[u32], neighbors: &NeighborIndex) -> Result<Vec<u32>> {
    if labels.len() != neighbors.n_queries() {
        return Err(Error::invalid(
            "pga_score",
            format!(
                "{} labels for {} neighbourhoods",
                labels.len(),
                neighbors.n_queries()
            ),
        ));
    }
    if labels.len() != neighbors.n_supports {
        return Err(Error::invalid(
            "pga_score",
            "neighbourhoods must index the labelled points themselves",
        ));
    }
    Ok(crate::par::map_collect(labels.len(), |i| {
        let own = labels[i];
        if own == IGNORE_LABEL {
            return 0;
        }
        neighbors
            .neighbors(i)
            .iter()
            .filter(|&&j| labels[j] != IGNORE_LABEL && labels[j] != own)
            .count() as u32
    }))
}

/// `eta + theta * score` for every point.
pub fn pga_weights(scores: &[u32], eta: f64, theta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("pga_weights", format!("eta must be positive, got {eta}")));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::invalid(
            "pga_weights",
            format!("theta must be non-negative, got {theta}"),
        ));
    }
    Ok(scores.iter().map(|&s| eta + theta * s as f64).collect())
}

/// Scores over the `k` nearest other points of a labelled cloud, plus weights.
pub fn pga_field(cloud: &PointCloud, k: usize, eta: f64, theta: f64) -> Result<PgaField> {
    let labels = cloud
        .labels
        .as_deref()
        .ok_or_else(|| Error::invalid("pga_score", "point cloud has no labels"))?;
    let neighbors = knn_excluding_self(&cloud.positions, k);
    let scores = pga_score(labels, &neighbors)?;
    let weights = pga_weights(&scores, eta, theta)?;
    Ok(PgaField {
        scores,
        weights,
        eta,
        theta,
        k,
    })
}

/// Weighted cross-entropy `-(1/N) sum_i w_i log p_i[label_i]` over the
/// labelled rows of `logits`. Points labelled [`IGNORE_LABEL`] are skipped;
/// the weights are constants.
pub fn pga_cross_entropy(g: &mut Graph, logits: Var, labels: &[u32], weights: &[f64]) -> Result<Var> {
    let n_classes = g.shape(logits).get(1).copied().unwrap_or(0);
    let mapped: Vec<Option<usize>> = labels
        .iter()
        .map(|&l| {
            if l == IGNORE_LABEL {
                Ok(None)
            } else if (l as usize) < n_classes {
                Ok(Some(l as usize))
            } else {
                Err(Error::invalid(
                    "pga_cross_entropy",
                    format!("label {l} outside [0, {n_classes})"),
                ))
            }
        })
        .collect::<Result<_>>()?;
    g.softmax_cross_entropy(logits, mapped, weights.to_vec())
}
