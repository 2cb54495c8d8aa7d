//! Network building blocks and the full encoder/decoder model.
//!
//! Block functions take a [`Graph`](crate::autodiff::Graph) and parameter
//! handles ([`Var`](crate::autodiff::Var)) directly so they can be exercised
//! in isolation; [`Network`] owns the named parameters and wires the blocks
//! together.

mod attention;
mod config;
mod decoder;
mod encoder;
mod kpconv;
mod network;
mod params;
mod pyramid;

pub use attention::{
    global_self_attention, local_attention_weights, local_self_attention, AttentionParams,
    CombineOp, GlobalAttentionParams, Mlp2,
};
pub use config::{EncoderVersion, KernelSpec, LayerPlan, ModelConfig};
pub use decoder::decoder_block;
pub use encoder::{encoder_block, AttentionBranch, EncoderOutput, EncoderParams};
pub use kpconv::{inception_fusion, kp_convolution, ConvUnit};
pub use network::{Network, NetworkOutput, INPUT_KEY};
pub use params::{linear, BatchNormParams, Linear, ParamStore};
pub use pyramid::{Level, PairGeometry, Pyramid};
