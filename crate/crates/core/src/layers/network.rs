use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    decoder_block, encoder_block, linear, AttentionBranch, AttentionParams, BatchNormParams,
    ConvUnit, EncoderParams, EncoderVersion, GlobalAttentionParams, LayerPlan, Linear, Mlp2,
    ModelConfig, ParamStore, Pyramid,
};
use crate::autodiff::{softmax_in_place, Graph, Mode, Tensor, Var};
use crate::geometry::{generate_kernel_disposition, KernelDisposition, PointCloud};
use crate::{Error, Result};

/// Override key for the level-0 input features in [`Network::forward_with`].
pub const INPUT_KEY: &str = "input";

/// Seed base for kernel dispositions. Fixed so checkpoints only depend on the
/// model configuration.
const KERNEL_SEED: u64 = 0x6b70;

/// Encoder/decoder segmentation network with named parameters.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub plans: Vec<LayerPlan>,
    /// Kernel dispositions per encoder: first unit and optional second unit.
    pub kernels: Vec<(KernelDisposition, Option<KernelDisposition>)>,
    pub store: ParamStore,
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// `N x n_classes` logits for the input points.
    pub logits: Var,
    /// Parameter leaves used in this pass.
    pub leaves: BTreeMap<String, Var>,
    /// Batch-norm outputs keyed by their parameter prefix.
    pub bn_taps: Vec<(String, Var)>,
    pub encoder_outputs: Vec<Var>,
}

struct Binder<'a> {
    store: &'a ParamStore,
    overrides: &'a BTreeMap<String, Var>,
    leaves: BTreeMap<String, Var>,
}

impl Binder<'_> {
    fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.overrides.get(name) {
            self.leaves.insert(name.to_string(), v);
            return Ok(v);
        }
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let t = self.store.param(name)?.clone();
        let v = match g.mode() {
            Mode::Training => g.param(t),
            Mode::Inference => g.constant(t),
        };
        self.leaves.insert(name.to_string(), v);
        Ok(v)
    }

    fn linear(&mut self, g: &mut Graph, prefix: &str) -> Result<Linear> {
        Ok(Linear {
            w: self.var(g, &format!("{prefix}.w"))?,
            b: self.var(g, &format!("{prefix}.b"))?,
        })
    }

    fn mlp2(&mut self, g: &mut Graph, prefix: &str) -> Result<Mlp2> {
        Ok(Mlp2 {
            w1: self.var(g, &format!("{prefix}.w1"))?,
            b1: self.var(g, &format!("{prefix}.b1"))?,
            w2: self.var(g, &format!("{prefix}.w2"))?,
            b2: self.var(g, &format!("{prefix}.b2"))?,
        })
    }

    fn bn(&mut self, g: &mut Graph, prefix: &str) -> Result<BatchNormParams> {
        Ok(BatchNormParams {
            gamma: self.var(g, &format!("{prefix}.gamma"))?,
            beta: self.var(g, &format!("{prefix}.beta"))?,
            running_mean: self
                .store
                .buffer(&format!("{prefix}.running_mean"))?
                .data()
                .to_vec(),
            running_var: self
                .store
                .buffer(&format!("{prefix}.running_var"))?
                .data()
                .to_vec(),
        })
    }
}

fn add_bn(store: &mut ParamStore, prefix: &str, c: usize) {
    store.add_filled(format!("{prefix}.gamma"), vec![c], 1.0);
    store.add_filled(format!("{prefix}.beta"), vec![c], 0.0);
    store.add_buffer(format!("{prefix}.running_mean"), vec![c], 0.0);
    store.add_buffer(format!("{prefix}.running_var"), vec![c], 1.0);
}

fn add_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d_in: usize, d_out: usize) {
    store.add_he(rng, format!("{prefix}.w"), vec![d_in, d_out], d_in);
    store.add_filled(format!("{prefix}.b"), vec![d_out], 0.0);
}

fn add_mlp2(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d_in: usize, d: usize) {
    store.add_he(rng, format!("{prefix}.w1"), vec![d_in, d], d_in);
    store.add_filled(format!("{prefix}.b1"), vec![d], 0.0);
    store.add_he(rng, format!("{prefix}.w2"), vec![d, d], d);
    store.add_filled(format!("{prefix}.b2"), vec![d], 0.0);
}

impl Network {
    /// Builds the layer plans, kernel dispositions and seeded initial weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let plans = config.plans()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let mut kernels = Vec::with_capacity(plans.len());
        for p in &plans {
            let l = p.index;
            let ka = &p.kernel_a;
            let disp_a = generate_kernel_disposition(
                ka.points,
                ka.radius_fraction * p.conv_radius,
                KERNEL_SEED + 2 * l as u64,
            )?;
            let disp_a = rescale_sigma(disp_a, config.sigma_ratio);
            store.add_he(
                &mut rng,
                format!("enc{l}.conv_a.w"),
                vec![ka.points, p.d_in, p.conv_width],
                ka.points * p.d_in,
            );
            let disp_b = match &p.kernel_b {
                Some(kb) => {
                    let d = generate_kernel_disposition(
                        kb.points,
                        kb.radius_fraction * p.conv_radius,
                        KERNEL_SEED + 2 * l as u64 + 1,
                    )?;
                    store.add_he(
                        &mut rng,
                        format!("enc{l}.conv_b.w"),
                        vec![kb.points, p.d_in, p.conv_width],
                        kb.points * p.d_in,
                    );
                    Some(rescale_sigma(d, config.sigma_ratio))
                }
                None => None,
            };
            kernels.push((disp_a, disp_b));

            let (cw, aw) = (p.conv_width, p.att_width);
            match p.version {
                EncoderVersion::ConvOnly => {}
                EncoderVersion::V1 | EncoderVersion::V2 => {
                    for w in ["wq", "wk", "wv"] {
                        store.add_he(&mut rng, format!("enc{l}.att.{w}"), vec![cw, aw], cw);
                    }
                    if p.version == EncoderVersion::V1 {
                        add_mlp2(&mut store, &mut rng, &format!("enc{l}.att.kappa"), aw, aw);
                        add_mlp2(&mut store, &mut rng, &format!("enc{l}.att.gamma"), 3, aw);
                    }
                }
            }
            add_bn(&mut store, &format!("enc{l}.bn_enc"), p.enc_width);
            add_linear(&mut store, &mut rng, &format!("enc{l}.mlp"), p.enc_width, p.f_out);
            add_bn(&mut store, &format!("enc{l}.bn_mlp"), p.f_out);
            if p.d_in != p.f_out {
                add_linear(&mut store, &mut rng, &format!("enc{l}.shortcut"), p.d_in, p.f_out);
            }
        }
        for l in 0..plans.len().saturating_sub(1) {
            let (fine, coarse) = (config.width(l), config.width(l + 1));
            add_linear(&mut store, &mut rng, &format!("dec{l}.lin"), coarse + fine, fine);
            add_bn(&mut store, &format!("dec{l}.bn"), fine);
        }
        let w0 = config.width(0);
        add_linear(&mut store, &mut rng, "head.fc1", w0, w0);
        add_bn(&mut store, "head.bn", w0);
        add_linear(&mut store, &mut rng, "head.fc2", w0, config.n_classes);
        Ok(Network {
            config,
            plans,
            kernels,
            store,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn forward(&self, g: &mut Graph, pyramid: &Pyramid) -> Result<NetworkOutput> {
        self.forward_with(g, pyramid, &BTreeMap::new())
    }

    /// Forward pass where any parameter (or [`INPUT_KEY`]) found in
    /// `overrides` is taken from there instead of the store.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        pyramid: &Pyramid,
        overrides: &BTreeMap<String, Var>,
    ) -> Result<NetworkOutput> {
        if pyramid.levels.len() != self.plans.len() {
            return Err(Error::invalid(
                "network_forward",
                format!(
                    "pyramid has {} levels, network {}",
                    pyramid.levels.len(),
                    self.plans.len()
                ),
            ));
        }
        let slope = self.config.leaky_slope;
        let mut b = Binder {
            store: &self.store,
            overrides,
            leaves: BTreeMap::new(),
        };
        let mut bn_taps = Vec::new();
        let input = match overrides.get(INPUT_KEY) {
            Some(&v) => v,
            None => g.constant(pyramid.features.clone()),
        };

        let mut enc_out: Vec<Var> = Vec::with_capacity(self.plans.len());
        for (p, level) in self.plans.iter().zip(&pyramid.levels) {
            let l = p.index;
            let x = match (&level.pool, enc_out.last()) {
                (Some(pool), Some(&prev)) => {
                    let grouped = g.gather_rows(prev, pool.indices.clone())?;
                    g.segment_max(grouped, &pool.offsets)?
                }
                _ => input,
            };
            let pairs = level.pairs();
            let (disp_a, disp_b) = &self.kernels[l];
            let conv_a = ConvUnit {
                disposition: disp_a,
                weights: b.var(g, &format!("enc{l}.conv_a.w"))?,
            };
            let conv_b = match disp_b {
                Some(d) => Some(ConvUnit {
                    disposition: d,
                    weights: b.var(g, &format!("enc{l}.conv_b.w"))?,
                }),
                None => None,
            };
            let attention = match p.version {
                EncoderVersion::ConvOnly => AttentionBranch::None,
                EncoderVersion::V1 => AttentionBranch::Local(AttentionParams {
                    w_q: b.var(g, &format!("enc{l}.att.wq"))?,
                    w_k: b.var(g, &format!("enc{l}.att.wk"))?,
                    w_v: b.var(g, &format!("enc{l}.att.wv"))?,
                    kappa: b.mlp2(g, &format!("enc{l}.att.kappa"))?,
                    gamma: b.mlp2(g, &format!("enc{l}.att.gamma"))?,
                    combine: self.config.combine,
                }),
                EncoderVersion::V2 => AttentionBranch::Global(GlobalAttentionParams {
                    w_q: b.var(g, &format!("enc{l}.att.wq"))?,
                    w_k: b.var(g, &format!("enc{l}.att.wk"))?,
                    w_v: b.var(g, &format!("enc{l}.att.wv"))?,
                }),
            };
            let params = EncoderParams {
                conv_a,
                conv_b,
                attention,
                bn_enc: b.bn(g, &format!("enc{l}.bn_enc"))?,
                mlp: b.linear(g, &format!("enc{l}.mlp"))?,
                bn_mlp: b.bn(g, &format!("enc{l}.bn_mlp"))?,
                shortcut: if p.d_in != p.f_out {
                    Some(b.linear(g, &format!("enc{l}.shortcut"))?)
                } else {
                    None
                },
            };
            let out = encoder_block(g, &pairs, x, p, &params, slope)?;
            bn_taps.push((format!("enc{l}.bn_enc"), out.bn_enc));
            bn_taps.push((format!("enc{l}.bn_mlp"), out.bn_mlp));
            enc_out.push(out.features);
        }

        let mut dec = *enc_out.last().expect("at least one encoder");
        for l in (0..self.plans.len() - 1).rev() {
            let map = pyramid.levels[l]
                .up_map
                .as_ref()
                .ok_or_else(|| Error::invalid("network_forward", "missing upsample map"))?;
            let lin = b.linear(g, &format!("dec{l}.lin"))?;
            let bn = b.bn(g, &format!("dec{l}.bn"))?;
            let (out, tap) = decoder_block(g, dec, enc_out[l], map, &lin, &bn, slope)?;
            bn_taps.push((format!("dec{l}.bn"), tap));
            dec = out;
        }

        let up = g.gather_rows(dec, pyramid.head_map.clone())?;
        let fc1 = b.linear(g, "head.fc1")?;
        let h = linear(g, up, &fc1)?;
        let bn = b.bn(g, "head.bn")?;
        let hn = bn.apply(g, h)?;
        bn_taps.push(("head.bn".to_string(), hn));
        let h = g.leaky_relu(hn, slope);
        let fc2 = b.linear(g, "head.fc2")?;
        let logits = linear(g, h, &fc2)?;
        debug_assert_eq!(g.shape(logits), &[pyramid.n_inputs(), self.config.n_classes]);

        Ok(NetworkOutput {
            logits,
            leaves: b.leaves,
            bn_taps,
            encoder_outputs: enc_out,
        })
    }

    /// Gradients of the last backward pass for every parameter used.
    pub fn gradients(&self, g: &mut Graph, out: &NetworkOutput) -> BTreeMap<String, Vec<f64>> {
        out.leaves
            .iter()
            .filter(|(name, _)| self.store.params.contains_key(*name))
            .filter_map(|(name, &v)| g.take_grad(v).map(|gr| (name.clone(), gr)))
            .collect()
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics: `running = m * running + (1 - m) * batch`.
    pub fn update_running_stats(&mut self, g: &Graph, out: &NetworkOutput) {
        let m = self.config.bn_momentum;
        for (prefix, v) in &out.bn_taps {
            let Some((mean, var)) = g.batch_stats(*v) else {
                continue;
            };
            for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                if let Some(t) = self.store.buffers.get_mut(&format!("{prefix}.{suffix}")) {
                    for (r, b) in t.data_mut().iter_mut().zip(batch) {
                        *r = m * *r + (1.0 - m) * b;
                    }
                }
            }
        }
    }

    /// Inference-mode class probabilities (`N x n_classes`, row-major).
    pub fn predict_proba(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let pyramid = Pyramid::build(cloud, &self.config)?;
        self.predict_proba_pyramid(&pyramid)
    }

    pub fn predict_proba_pyramid(&self, pyramid: &Pyramid) -> Result<Vec<f64>> {
        let mut g = Graph::new(Mode::Inference);
        let out = self.forward(&mut g, pyramid)?;
        let mut probs = g.value(out.logits).data().to_vec();
        for row in probs.chunks_mut(self.config.n_classes) {
            softmax_in_place(row);
        }
        Ok(probs)
    }

    /// Inference-mode logits as a tensor.
    pub fn logits(&self, pyramid: &Pyramid) -> Result<Tensor> {
        let mut g = Graph::new(Mode::Inference);
        let out = self.forward(&mut g, pyramid)?;
        Ok(g.value(out.logits).clone())
    }
}

fn rescale_sigma(d: KernelDisposition, ratio: f64) -> KernelDisposition {
    let s = ratio * d.radius;
    d.with_sigma(s)
}
