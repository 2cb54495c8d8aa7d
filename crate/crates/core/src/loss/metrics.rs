use std::fmt::Write;

use crate::geometry::IGNORE_LABEL;
use crate::{Error, Result};

/// Counts indexed `[true_class][predicted_class]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Tallies every point whose true label is not [`IGNORE_LABEL`].
    pub fn from_predictions(predictions: &[u32], labels: &[u32], n_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::invalid(
                "iou_report",
                format!("{} predictions for {} labels", predictions.len(), labels.len()),
            ));
        }
        let mut m = ConfusionMatrix::new(n_classes);
        for (&p, &t) in predictions.iter().zip(labels) {
            if t == IGNORE_LABEL {
                continue;
            }
            m.add(t as usize, p as usize)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.n_classes || predicted >= self.n_classes {
            return Err(Error::invalid(
                "iou_report",
                format!(
                    "class pair ({truth}, {predicted}) outside [0, {})",
                    self.n_classes
                ),
            ));
        }
        self.counts[truth * self.n_classes + predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::invalid("iou_report", "class counts differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of points whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(c, p)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` when the denominator is zero.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let fn_ = self.support(c) - tp;
        let fp = (0..self.n_classes).map(|t| self.get(t, c)).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn report(&self) -> IouReport {
        let per_class: Vec<Option<f64>> = (0..self.n_classes).map(|c| self.iou(c)).collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        IouReport {
            per_class,
            support: (0..self.n_classes).map(|c| self.support(c)).collect(),
            miou,
        }
    }
}

/// Per-class IoU (absent classes are `None`) and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub support: Vec<u64>,
    /// Mean over classes with a defined IoU; `None` if there are none.
    pub miou: Option<f64>,
}

impl IouReport {
    pub fn miou_or_zero(&self) -> f64 {
        self.miou.unwrap_or(0.0)
    }

    /// Tab-separated table: one `class  iou  support` row per class, then
    /// the mean.
    pub fn to_table(&self, names: &[String]) -> String {
        let mut s = String::from("class\tiou\tsupport\n");
        for (c, (iou, sup)) in self.per_class.iter().zip(&self.support).enumerate() {
            let name = names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
            let iou = iou.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
            let _ = writeln!(s, "{name}\t{iou}\t{sup}");
        }
        let m = self.miou.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let total: u64 = self.support.iter().sum();
        let _ = writeln!(s, "mIoU\t{m}\t{total}");
        s
    }
}

/// Confusion matrix of `predictions` against `labels` and its IoU summary.
pub fn iou_report(predictions: &[u32], labels: &[u32], n_classes: usize) -> Result<IouReport> {
    Ok(ConfusionMatrix::from_predictions(predictions, labels, n_classes)?.report())
}
