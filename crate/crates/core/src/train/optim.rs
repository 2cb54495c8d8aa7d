use std::collections::BTreeMap;

use super::{OptimizerConfig, OptimizerKind};
use crate::layers::ParamStore;

/// SGD with momentum or Adam over named parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    /// Per-parameter first and second moments (the second only for Adam).
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Optimizer {
            cfg,
            state: BTreeMap::new(),
            t: 0,
        }
    }

    /// Global L2 norm over every gradient.
    pub fn grad_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
        grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.t += 1;
        let clip = if self.cfg.clip_norm > 0.0 {
            let n = Self::grad_norm(grads);
            if n > self.cfg.clip_norm {
                self.cfg.clip_norm / n
            } else {
                1.0
            }
        } else {
            1.0
        };
        let (b1, b2) = (self.cfg.momentum, self.cfg.beta2);
        let t = self.t as i32;
        for (name, g) in grads {
            let Some(p) = store.params.get_mut(name) else {
                continue;
            };
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], Vec::new()));
            let values = p.data_mut();
            match self.cfg.kind {
                OptimizerKind::Sgd => {
                    for ((w, m), &g) in values.iter_mut().zip(m.iter_mut()).zip(g) {
                        *m = b1 * *m + clip * g;
                        *w -= lr * *m;
                    }
                }
                OptimizerKind::Adam => {
                    if v.is_empty() {
                        v.resize(g.len(), 0.0);
                    }
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for (((w, m), v), &g) in values.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        let g = clip * g;
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
    }
}
