use super::Point3;
use crate::{Error, Result};

/// Label value for points excluded from loss and metrics.
pub const IGNORE_LABEL: u32 = u32::MAX;

/// Positions, per-point features and optional semantic labels of one scan or
/// crop. Features are stored row-major, `n_features` values per point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3>,
    pub features: Vec<f64>,
    pub n_features: usize,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Point3>,
        features: Vec<f64>,
        n_features: usize,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let cloud = PointCloud {
            positions,
            features,
            n_features,
            labels,
        };
        cloud.validate(None)?;
        Ok(cloud)
    }

    pub fn empty(n_features: usize) -> Self {
        PointCloud {
            positions: Vec::new(),
            features: Vec::new(),
            n_features,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Checks shape agreement, finiteness and (when `n_classes` is given)
    /// label range. [`IGNORE_LABEL`] is always accepted.
    pub fn validate(&self, n_classes: Option<usize>) -> Result<()> {
        let n = self.positions.len();
        if self.features.len() != n * self.n_features {
            return Err(Error::invalid(
                "PointCloud",
                format!(
                    "{} feature values for {} points of width {}",
                    self.features.len(),
                    n,
                    self.n_features
                ),
            ));
        }
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(
                "PointCloud",
                format!("non-finite position at point {i}"),
            ));
        }
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "PointCloud",
                format!("non-finite feature at point {}", i / self.n_features.max(1)),
            ));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::invalid(
                    "PointCloud",
                    format!("{} labels for {} points", labels.len(), n),
                ));
            }
            if let Some(nc) = n_classes {
                if let Some(i) = labels
                    .iter()
                    .position(|&l| l != IGNORE_LABEL && l as usize >= nc)
                {
                    return Err(Error::invalid(
                        "PointCloud",
                        format!("label {} at point {i} outside [0, {nc})", labels[i]),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sub-cloud made of the given point indices, in that order.
    pub fn select(&self, ids: &[usize]) -> PointCloud {
        let f = self.n_features;
        let mut features = Vec::with_capacity(ids.len() * f);
        for &i in ids {
            features.extend_from_slice(self.feature_row(i));
        }
        PointCloud {
            positions: ids.iter().map(|&i| self.positions[i]).collect(),
            features,
            n_features: f,
            labels: self
                .labels
                .as_ref()
                .map(|l| ids.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Copy with a constant `1.0` feature column prepended.
    pub fn with_constant_channel(&self) -> PointCloud {
        let f = self.n_features;
        let mut features = Vec::with_capacity(self.len() * (f + 1));
        for i in 0..self.len() {
            features.push(1.0);
            features.extend_from_slice(self.feature_row(i));
        }
        PointCloud {
            positions: self.positions.clone(),
            features,
            n_features: f + 1,
            labels: self.labels.clone(),
        }
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        let mut out = self.clone();
        for p in &mut out.positions {
            p[0] += t[0];
            p[1] += t[1];
            p[2] += t[2];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_features() {
        let err = PointCloud::new(vec![[0.0; 3]; 2], vec![1.0; 3], 2, None).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument { .. }));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]], vec![], 0, None).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]], vec![f64::INFINITY], 1, None).is_err());
    }

    #[test]
    fn label_range_checked_against_class_count() {
        let c = PointCloud::new(vec![[0.0; 3]; 2], vec![], 0, Some(vec![0, 3])).unwrap();
        assert!(c.validate(Some(4)).is_ok());
        assert!(c.validate(Some(3)).is_err());
        let c = PointCloud::new(vec![[0.0; 3]], vec![], 0, Some(vec![IGNORE_LABEL])).unwrap();
        assert!(c.validate(Some(2)).is_ok());
    }

    #[test]
    fn constant_channel_is_prepended() {
        let c = PointCloud::new(vec![[0.0; 3]; 2], vec![5.0, 6.0], 1, None).unwrap();
        let c1 = c.with_constant_channel();
        assert_eq!(c1.n_features, 2);
        assert_eq!(c1.features, vec![1.0, 5.0, 1.0, 6.0]);
    }
}
