use super::PairGeometry;
use crate::autodiff::{Graph, Var};
use crate::geometry::KernelDisposition;
use crate::{Error, Result};

/// One kernel-point convolution unit: a fixed disposition and its weights of
/// shape `N_k x d_in x d_out`.
#[derive(Clone, Copy, Debug)]
pub struct ConvUnit<'a> {
    pub disposition: &'a KernelDisposition,
    pub weights: Var,
}

/// Kernel-point convolution over feature differences:
///
/// `out_i = sum_k sum_{j in N(i)} h(p_j - p_i, k) * (f_j - f_i) W_k`
///
/// with the linear correlation `h = max(0, 1 - |dp - p_k| / sigma)`. Points
/// without neighbours get a zero row.
pub fn kp_convolution(
    g: &mut Graph,
    pairs: &PairGeometry,
    features: Var,
    unit: &ConvUnit<'_>,
) -> Result<Var> {
    let ws = g.shape(unit.weights).to_vec();
    let fs = g.shape(features).to_vec();
    let nk = unit.disposition.len();
    if ws.len() != 3 || ws[0] != nk {
        return Err(Error::invalid(
            "kp_convolution",
            format!("weights {ws:?} do not match {nk} kernel points"),
        ));
    }
    if fs.len() != 2 || fs[1] != ws[1] {
        return Err(Error::invalid(
            "kp_convolution",
            format!("features {fs:?} do not match weight input width {}", ws[1]),
        ));
    }
    if fs[0] != pairs.n_points() {
        return Err(Error::invalid(
            "kp_convolution",
            format!("{} feature rows for {} points", fs[0], pairs.n_points()),
        ));
    }
    let (d_in, d_out) = (ws[1], ws[2]);

    let mut influence = Vec::with_capacity(pairs.n_pairs() * nk);
    for d in &pairs.deltas {
        for k in 0..nk {
            influence.push(unit.disposition.influence(d, k));
        }
    }
    let fj = g.gather_rows(features, pairs.supports.clone())?;
    let fi = g.gather_rows(features, pairs.queries.clone())?;
    let df = g.sub(fj, fi)?;
    let agg = g.kernel_aggregate(df, influence, nk, pairs.offsets.clone())?;
    let w = g.reshape(unit.weights, vec![nk * d_in, d_out])?;
    g.matmul(agg, w)
}

/// Sum of two convolution units with different kernel parameters. With
/// `second = None` this is a single unit.
pub fn inception_fusion(
    g: &mut Graph,
    pairs: &PairGeometry,
    features: Var,
    first: &ConvUnit<'_>,
    second: Option<&ConvUnit<'_>>,
) -> Result<Var> {
    let a = kp_convolution(g, pairs, features, first)?;
    let Some(second) = second else {
        return Ok(a);
    };
    let (wa, wb) = (g.shape(first.weights).to_vec(), g.shape(second.weights).to_vec());
    if wa[1..] != wb[1..] {
        return Err(Error::invalid(
            "inception_fusion",
            format!("unit widths differ: {:?} vs {:?}", &wa[1..], &wb[1..]),
        ));
    }
    let b = kp_convolution(g, pairs, features, second)?;
    g.add(a, b)
}
