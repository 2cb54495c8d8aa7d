use super::{
    global_self_attention, inception_fusion, linear, local_self_attention, AttentionParams,
    BatchNormParams, ConvUnit, EncoderVersion, GlobalAttentionParams, LayerPlan, Linear,
    PairGeometry,
};
use crate::autodiff::{Graph, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum AttentionBranch {
    None,
    Local(AttentionParams),
    Global(GlobalAttentionParams),
}

#[derive(Clone, Debug)]
pub struct EncoderParams<'a> {
    pub conv_a: ConvUnit<'a>,
    pub conv_b: Option<ConvUnit<'a>>,
    pub attention: AttentionBranch,
    pub bn_enc: BatchNormParams,
    pub mlp: Linear,
    pub bn_mlp: BatchNormParams,
    /// Projection for the residual path when `d_in != f_out`.
    pub shortcut: Option<Linear>,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub features: Var,
    pub bn_enc: Var,
    pub bn_mlp: Var,
}

/// Convolution and attention branches fused by concatenation, squeezed by
/// channel max-pooling, expanded by a shared MLP and added to the residual.
///
/// Widths: concat `f_out/2`, encoded `f_out/4`, MLP and output `f_out`.
pub fn encoder_block(
    g: &mut Graph,
    pairs: &PairGeometry,
    features: Var,
    plan: &LayerPlan,
    params: &EncoderParams<'_>,
    slope: f64,
) -> Result<EncoderOutput> {
    match (plan.version, &params.attention) {
        (EncoderVersion::V2, _) if !plan.is_final => {
            return Err(Error::Config(format!(
                "global attention requested on non-final encoder {}",
                plan.index
            )))
        }
        (EncoderVersion::ConvOnly, AttentionBranch::None)
        | (EncoderVersion::V1, AttentionBranch::Local(_))
        | (EncoderVersion::V2, AttentionBranch::Global(_)) => {}
        (v, _) => {
            return Err(Error::Config(format!(
                "encoder {} planned as {v:?} but given mismatched attention parameters",
                plan.index
            )))
        }
    }

    let f_conv = inception_fusion(g, pairs, features, &params.conv_a, params.conv_b.as_ref())?;
    let f_concat = match &params.attention {
        AttentionBranch::None => f_conv,
        AttentionBranch::Local(p) => {
            let f_att = local_self_attention(g, pairs, f_conv, p, slope)?;
            g.concat_lastdim(&[f_att, f_conv])?
        }
        AttentionBranch::Global(p) => {
            let f_att = global_self_attention(g, f_conv, p)?;
            g.concat_lastdim(&[f_att, f_conv])?
        }
    };
    check_width(g, f_concat, plan.concat_width, "concat")?;

    let pooled = g.max_pool_channels(f_concat)?;
    let bn_enc = params.bn_enc.apply(g, pooled)?;
    let f_enc = g.leaky_relu(bn_enc, slope);
    check_width(g, f_enc, plan.enc_width, "encoded")?;

    let h = linear(g, f_enc, &params.mlp)?;
    let bn_mlp = params.bn_mlp.apply(g, h)?;
    let f_mlp = g.leaky_relu(bn_mlp, slope);
    check_width(g, f_mlp, plan.mlp_width, "mlp")?;

    let residual = match &params.shortcut {
        Some(p) => linear(g, features, p)?,
        None => features,
    };
    let out = g.add(f_mlp, residual)?;
    Ok(EncoderOutput {
        features: out,
        bn_enc,
        bn_mlp,
    })
}

fn check_width(g: &Graph, v: Var, want: usize, what: &str) -> Result<()> {
    let got = g.shape(v)[1];
    if got != want {
        return Err(Error::invalid(
            "encoder_block",
            format!("{what} width {got}, expected {want}"),
        ));
    }
    Ok(())
}
