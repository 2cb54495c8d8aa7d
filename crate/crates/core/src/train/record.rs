use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub millis: f64,
    /// Number of points in the training crop.
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub miou: f64,
}

/// Append-only record of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    /// Mean loss over the last `n` steps.
    pub fn tail_loss(&self, n: usize) -> Option<f64> {
        let k = n.min(self.steps.len());
        (k > 0).then(|| self.steps[self.steps.len() - k..].iter().map(|s| s.loss).sum::<f64>() / k as f64)
    }

    /// Tab-separated text: `step loss lr ms points val_miou`, with the
    /// validation column empty on steps without an evaluation. Losses are
    /// written with round-trip precision.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tloss\tlr\tms\tpoints\tval_miou\n");
        for r in &self.steps {
            let miou = self
                .evals
                .iter()
                .find(|e| e.step == r.step)
                .map(|e| format!("{:.6}", e.miou))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{}\t{:?}\t{:e}\t{:.3}\t{}\t{}",
                r.step, r.loss, r.lr, r.millis, r.points, miou
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}
