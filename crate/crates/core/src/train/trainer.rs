use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{evaluate, EvalRecord, NetworkConfig, Optimizer, StepRecord, TrainLog};
use crate::autodiff::{checkpoint, Graph, Mode};
use crate::geometry::{sample_sphere, PointCloud};
use crate::layers::{Network, Pyramid};
use crate::loss::{pga_cross_entropy, pga_field};
use crate::{Error, Result};

/// Seed offset separating crop sampling from weight initialisation.
const CROP_STREAM: u64 = 0x9e37_79b9;

/// Owns the network, optimiser state and crop sampler of one run.
pub struct Trainer {
    pub net: Network,
    pub config: NetworkConfig,
    pub log: TrainLog,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    step: usize,
    checkpoint_path: Option<PathBuf>,
}

/// Description of the crop used at one step, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct CropId {
    pub cloud: usize,
    pub center_point: usize,
    pub points: usize,
}

impl std::fmt::Display for CropId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cloud {} centre point {} ({} points)", self.cloud, self.center_point, self.points)
    }
}

impl Trainer {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let net = Network::new(config.model.clone(), config.seed)?;
        Ok(Self::from_network(net, config))
    }

    /// Continues from an existing network (for example a loaded checkpoint).
    pub fn from_network(net: Network, config: NetworkConfig) -> Self {
        Trainer {
            optimizer: Optimizer::new(config.optimizer.clone()),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ CROP_STREAM),
            log: TrainLog::default(),
            step: 0,
            checkpoint_path: None,
            net,
            config,
        }
    }

    /// Where periodic and final checkpoints go.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Draws the next random sphere crop from `clouds`.
    pub fn sample_crop(&mut self, clouds: &[PointCloud]) -> Result<(PointCloud, CropId)> {
        let non_empty: Vec<usize> = (0..clouds.len()).filter(|&i| !clouds[i].is_empty()).collect();
        if non_empty.is_empty() {
            return Err(Error::invalid("train", "no training points"));
        }
        let ci = non_empty[self.rng.random_range(0..non_empty.len())];
        let cloud = &clouds[ci];
        let p = self.rng.random_range(0..cloud.len());
        let (crop, _) = sample_sphere(cloud, cloud.positions[p], self.config.sphere_radius())?;
        let id = CropId {
            cloud: ci,
            center_point: p,
            points: crop.len(),
        };
        Ok((crop, id))
    }

    /// Loss of the current parameters on `crop` (training-mode graph, no
    /// update).
    pub fn crop_loss(&self, crop: &PointCloud) -> Result<f64> {
        let (g, loss, _) = self.forward_loss(crop)?;
        Ok(g.value(loss).item())
    }

    fn forward_loss(
        &self,
        crop: &PointCloud,
    ) -> Result<(Graph, crate::autodiff::Var, crate::layers::NetworkOutput)> {
        let labels = crop
            .labels
            .as_deref()
            .ok_or_else(|| Error::invalid("train", "training crop has no labels"))?;
        let pga = &self.config.pga;
        let field = pga_field(crop, pga.k, pga.eta, pga.effective_theta())?;
        let pyramid = Pyramid::build(crop, &self.config.model)?;
        let mut g = Graph::new(Mode::Training);
        let out = self.net.forward(&mut g, &pyramid)?;
        let loss = pga_cross_entropy(&mut g, out.logits, labels, &field.weights)?;
        Ok((g, loss, out))
    }

    /// One crop, forward, backward and update. Returns the loss.
    pub fn step(&mut self, clouds: &[PointCloud]) -> Result<f64> {
        let started = Instant::now();
        let (crop, id) = self.sample_crop(clouds)?;
        let (mut g, loss_var, out) = self.forward_loss(&crop)?;
        let loss = g.value(loss_var).item();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                crop: id.to_string(),
                detail: format!("loss = {loss}"),
            });
        }
        g.backward(loss_var)?;
        let grads = self.net.gradients(&mut g, &out);
        if let Some((name, _)) = grads.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                crop: id.to_string(),
                detail: format!("non-finite gradient for {name}"),
            });
        }
        let lr = self.config.optimizer.lr_at(self.step);
        self.optimizer.step(&mut self.net.store, &grads, lr);
        self.net.update_running_stats(&g, &out);
        self.log.steps.push(StepRecord {
            step: self.step,
            loss,
            lr,
            millis: started.elapsed().as_secs_f64() * 1e3,
            points: id.points,
        });
        self.step += 1;
        Ok(loss)
    }

    /// Runs the configured number of steps, validating and checkpointing as
    /// configured, and finishes with weights rounded to checkpoint precision.
    pub fn run(&mut self, clouds: &[PointCloud], validation: &[PointCloud]) -> Result<()> {
        let total = self.config.optimizer.steps;
        while self.step < total {
            let loss = self.step(clouds)?;
            let done = self.step;
            if done % 25 == 0 || done == total {
                log::info!("step {done}/{total} loss {loss:.5}");
            }
            if self.config.eval_every > 0 && done % self.config.eval_every == 0 && !validation.is_empty() {
                let report = evaluate(&self.net, validation, self.config.sphere_radius(), self.config.sampling.votes)?;
                self.log.evals.push(EvalRecord {
                    step: done - 1,
                    miou: report.miou_or_zero(),
                });
            }
            if self.config.checkpoint_every > 0 && done % self.config.checkpoint_every == 0 && done < total {
                if let Some(p) = &self.checkpoint_path {
                    save_network(&self.net, p)?;
                }
            }
        }
        self.net.store.round_to_f32();
        if let Some(p) = &self.checkpoint_path {
            save_network(&self.net, p)?;
        }
        Ok(())
    }
}

/// Trains a fresh network per `config` on `clouds`.
pub fn train(
    config: &NetworkConfig,
    clouds: &[PointCloud],
    validation: &[PointCloud],
    checkpoint_path: Option<&Path>,
) -> Result<(Network, TrainLog)> {
    let mut t = Trainer::new(config.clone())?;
    if let Some(p) = checkpoint_path {
        t = t.with_checkpoint(p);
    }
    t.run(clouds, validation)?;
    Ok((t.net, t.log))
}

/// Writes every parameter and buffer (rounded to `f32`).
pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    checkpoint::save(path, &net.store.all())
}

/// Builds the network for `config` and loads weights from `path`.
pub fn load_network(config: &NetworkConfig, path: &Path) -> Result<Network> {
    let mut net = Network::new(config.model.clone(), config.seed)?;
    let records = checkpoint::load(path)?;
    net.store.load_all(records)?;
    Ok(net)
}
