use super::{linear, BatchNormParams, Linear};
use crate::autodiff::{Graph, Var};
use crate::{Error, Result};

/// Nearest-neighbour upsampling followed by a skip concat and a shared
/// `Linear -> BatchNorm -> LeakyReLU`. Returns the output and the batch-norm
/// node.
pub fn decoder_block(
    g: &mut Graph,
    coarse: Var,
    skip: Var,
    upsample_map: &[usize],
    lin: &Linear,
    bn: &BatchNormParams,
    slope: f64,
) -> Result<(Var, Var)> {
    let skip_rows = g.shape(skip)[0];
    if upsample_map.len() != skip_rows {
        return Err(Error::invalid(
            "decoder_block",
            format!(
                "upsample map of {} entries for {skip_rows} skip rows",
                upsample_map.len()
            ),
        ));
    }
    let up = g.gather_rows(coarse, upsample_map.to_vec())?;
    let cat = g.concat_lastdim(&[up, skip])?;
    let h = linear(g, cat, lin)?;
    let n = bn.apply(g, h)?;
    Ok((g.leaky_relu(n, slope), n))
}
