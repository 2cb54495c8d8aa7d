use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Dense layer `x W + b` with `W: d_in x d_out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

pub fn linear(g: &mut Graph, x: Var, p: &Linear) -> Result<Var> {
    let y = g.matmul(x, p.w)?;
    g.add_row(y, p.b)
}

#[derive(Clone, Debug)]
pub struct BatchNormParams {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.batch_norm(
            x,
            self.gamma,
            self.beta,
            (&self.running_mean, &self.running_var),
        )
    }
}

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics). Iteration order is the name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

/// Rounds to the nearest `f32`; checkpoints store weights at that precision.
pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl ParamStore {
    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid("ParamStore", format!("missing parameter {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::invalid("ParamStore", format!("missing buffer {name}")))
    }

    pub fn n_trainable(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// He-uniform (fan-in) initialised tensor, rounded to `f32` precision.
    pub(crate) fn add_he(&mut self, rng: &mut ChaCha8Rng, name: String, shape: Vec<usize>, fan_in: usize) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| round_f32(rng.random_range(-bound..bound)))
            .collect();
        self.params
            .insert(name, Tensor::new(shape, data).expect("init shape"));
    }

    pub(crate) fn add_filled(&mut self, name: String, shape: Vec<usize>, v: f64) {
        self.params.insert(name, Tensor::filled(shape, v));
    }

    pub(crate) fn add_buffer(&mut self, name: String, shape: Vec<usize>, v: f64) {
        self.buffers.insert(name, Tensor::filled(shape, v));
    }

    /// Every tensor (params and buffers) keyed by name, for checkpoints.
    pub fn all(&self) -> BTreeMap<String, Tensor> {
        let mut out = self.params.clone();
        out.extend(self.buffers.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    /// Overwrites tensors from a checkpoint. Every entry must already exist
    /// with the same shape, and every existing entry must be provided.
    pub fn load_all(&mut self, mut records: BTreeMap<String, Tensor>) -> Result<()> {
        for map in [&mut self.params, &mut self.buffers] {
            for (name, t) in map.iter_mut() {
                let r = records.remove(name).ok_or_else(|| {
                    Error::Config(format!("checkpoint lacks tensor {name}"))
                })?;
                if r.shape() != t.shape() {
                    return Err(Error::Config(format!(
                        "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                        r.shape(),
                        t.shape()
                    )));
                }
                *t = r;
            }
        }
        if let Some(extra) = records.keys().next() {
            return Err(Error::Config(format!(
                "checkpoint has unexpected tensor {extra}"
            )));
        }
        Ok(())
    }

    /// Rounds every value to `f32` precision so a checkpoint round trip is
    /// lossless.
    pub fn round_to_f32(&mut self) {
        for t in self.params.values_mut().chain(self.buffers.values_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v = round_f32(*v));
        }
    }
}
