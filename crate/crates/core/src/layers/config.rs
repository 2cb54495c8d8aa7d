use serde::{Deserialize, Serialize};

use super::CombineOp;
use crate::{Error, Result};

/// Kernel-point count and influence radius as a fraction of the layer's
/// convolution radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub points: usize,
    pub radius_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderVersion {
    /// No attention branch: convolution only.
    ConvOnly,
    /// Local vector self-attention.
    V1,
    /// Global scaled dot-product attention (final encoder only).
    V2,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_classes: usize,
    /// Raw per-point feature count of the input clouds.
    pub in_features: usize,
    /// Prepend a constant 1.0 feature channel.
    pub constant_channel: bool,
    pub n_layers: usize,
    /// Output width of encoder 0; doubles with every layer.
    pub base_width: usize,
    /// Subsampling cell of level 0; doubles with every layer.
    pub cell_0: f64,
    /// Convolution radius as a multiple of the level's cell.
    pub radius_multiplier: f64,
    pub neighbor_cap: usize,
    pub kernel_a: KernelSpec,
    pub kernel_b: KernelSpec,
    pub second_conv: bool,
    /// Local attention branch in encoders (and the prerequisite of V2).
    pub attention: bool,
    /// Use global attention in the final encoder.
    pub final_v2: bool,
    pub combine: CombineOp,
    pub sigma_ratio: f64,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_classes: 2,
            in_features: 2,
            constant_channel: false,
            n_layers: 5,
            base_width: 64,
            cell_0: 0.06,
            radius_multiplier: 2.5,
            neighbor_cap: 40,
            kernel_a: KernelSpec {
                points: 9,
                radius_fraction: 0.75,
            },
            kernel_b: KernelSpec {
                points: 15,
                radius_fraction: 1.0,
            },
            second_conv: true,
            attention: true,
            final_v2: true,
            combine: CombineOp::Hadamard,
            sigma_ratio: crate::geometry::DEFAULT_SIGMA_RATIO,
            leaky_slope: 0.1,
            bn_momentum: 0.9,
        }
    }
}

/// Resolved shapes of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPlan {
    pub index: usize,
    pub is_final: bool,
    pub d_in: usize,
    pub f_out: usize,
    /// Width emitted by the convolution branch.
    pub conv_width: usize,
    /// Width emitted by the attention branch (0 without attention).
    pub att_width: usize,
    pub concat_width: usize,
    pub enc_width: usize,
    pub mlp_width: usize,
    pub cell: f64,
    pub conv_radius: f64,
    pub kernel_a: KernelSpec,
    pub kernel_b: Option<KernelSpec>,
    pub version: EncoderVersion,
}

impl ModelConfig {
    pub fn cell(&self, layer: usize) -> f64 {
        self.cell_0 * f64::powi(2.0, layer as i32)
    }

    pub fn conv_radius(&self, layer: usize) -> f64 {
        self.radius_multiplier * self.cell(layer)
    }

    pub fn width(&self, layer: usize) -> usize {
        self.base_width << layer
    }

    pub fn input_width(&self) -> usize {
        self.in_features + usize::from(self.constant_channel)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 {
            return err("model.n_classes must be at least 1".into());
        }
        if self.n_layers == 0 {
            return err("model.n_layers must be at least 1".into());
        }
        if self.n_layers > 12 {
            return err(format!("model.n_layers = {} is too deep", self.n_layers));
        }
        if self.input_width() == 0 {
            return err("model has no input features".into());
        }
        if self.base_width == 0 || self.base_width % 4 != 0 {
            return err(format!(
                "model.base_width must be a positive multiple of 4, got {}",
                self.base_width
            ));
        }
        if !(self.cell_0 > 0.0 && self.cell_0.is_finite()) {
            return err(format!("model.cell_0 must be positive, got {}", self.cell_0));
        }
        if !(self.radius_multiplier > 0.0 && self.radius_multiplier.is_finite()) {
            return err(format!(
                "model.radius_multiplier must be positive, got {}",
                self.radius_multiplier
            ));
        }
        if self.neighbor_cap == 0 {
            return err("model.neighbor_cap must be at least 1".into());
        }
        for (name, k) in [("kernel_a", self.kernel_a), ("kernel_b", self.kernel_b)] {
            if k.points == 0 {
                return err(format!("model.{name}.points must be at least 1"));
            }
            if !(k.radius_fraction > 0.0 && k.radius_fraction <= 1.0) {
                return err(format!(
                    "model.{name}.radius_fraction must lie in (0, 1], got {}",
                    k.radius_fraction
                ));
            }
        }
        if !(self.sigma_ratio > 0.0) {
            return err("model.sigma_ratio must be positive".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return err("model.bn_momentum must lie in [0, 1)".into());
        }
        if self.final_v2 && !self.attention {
            return err("model.final_v2 requires model.attention (no V2 without an attention branch)".into());
        }
        Ok(())
    }

    /// Per-layer shape plan; checks the concat/enc/mlp width contract.
    pub fn plans(&self) -> Result<Vec<LayerPlan>> {
        self.validate()?;
        let mut plans = Vec::with_capacity(self.n_layers);
        for l in 0..self.n_layers {
            let f_out = self.width(l);
            let is_final = l + 1 == self.n_layers;
            let version = if !self.attention {
                EncoderVersion::ConvOnly
            } else if is_final && self.final_v2 {
                EncoderVersion::V2
            } else {
                EncoderVersion::V1
            };
            let (conv_width, att_width) = match version {
                EncoderVersion::ConvOnly => (f_out / 2, 0),
                _ => (f_out / 4, f_out / 4),
            };
            let plan = LayerPlan {
                index: l,
                is_final,
                d_in: if l == 0 { self.input_width() } else { self.width(l - 1) },
                f_out,
                conv_width,
                att_width,
                concat_width: conv_width + att_width,
                enc_width: (conv_width + att_width) / 2,
                mlp_width: f_out,
                cell: self.cell(l),
                conv_radius: self.conv_radius(l),
                kernel_a: self.kernel_a,
                kernel_b: self.second_conv.then_some(self.kernel_b),
                version,
            };
            assert_eq!(plan.concat_width, f_out / 2, "concat width must be f_out/2");
            assert_eq!(plan.enc_width, f_out / 4, "encoded width must be f_out/4");
            assert_eq!(plan.mlp_width, f_out, "mlp width must be f_out");
            plans.push(plan);
        }
        Ok(plans)
    }
}
