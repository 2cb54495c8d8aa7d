use serde::{Deserialize, Serialize};

use super::PairGeometry;
use crate::autodiff::{Graph, Var};
use crate::{Error, Result};

/// How the query and key vectors interact in local attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineOp {
    Hadamard,
    Add,
    Subtract,
}

impl CombineOp {
    pub const ALL: [CombineOp; 3] = [CombineOp::Subtract, CombineOp::Add, CombineOp::Hadamard];

    pub fn name(self) -> &'static str {
        match self {
            CombineOp::Hadamard => "hadamard",
            CombineOp::Add => "add",
            CombineOp::Subtract => "subtract",
        }
    }

    fn apply(self, g: &mut Graph, q: Var, k: Var) -> Result<Var> {
        match self {
            CombineOp::Hadamard => g.mul(q, k),
            CombineOp::Add => g.add(q, k),
            CombineOp::Subtract => g.sub(q, k),
        }
    }
}

impl std::str::FromStr for CombineOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hadamard" => Ok(CombineOp::Hadamard),
            "add" => Ok(CombineOp::Add),
            "subtract" => Ok(CombineOp::Subtract),
            _ => Err(Error::Config(format!("unknown combine op {s:?}"))),
        }
    }
}

/// Two-layer perceptron `Linear -> LeakyReLU -> Linear`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2 {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp2 {
    pub fn apply(&self, g: &mut Graph, x: Var, slope: f64) -> Result<Var> {
        let h = g.matmul(x, self.w1)?;
        let h = g.add_row(h, self.b1)?;
        let h = g.leaky_relu(h, slope);
        let y = g.matmul(h, self.w2)?;
        g.add_row(y, self.b2)
    }
}

/// Parameters of the local vector self-attention branch.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    /// Maps the combined query/key (plus positional term) to logits.
    pub kappa: Mlp2,
    /// Positional encoding of neighbour offsets, `3 -> d`.
    pub gamma: Mlp2,
    pub combine: CombineOp,
}

struct LocalParts {
    weights: Var,
    output: Var,
}

fn local_parts(
    g: &mut Graph,
    pairs: &PairGeometry,
    f_conv: Var,
    p: &AttentionParams,
    slope: f64,
) -> Result<LocalParts> {
    if g.shape(f_conv).first() != Some(&pairs.n_points()) {
        return Err(Error::invalid(
            "local_self_attention",
            format!(
                "features {:?} for {} points",
                g.shape(f_conv),
                pairs.n_points()
            ),
        ));
    }
    let q = g.matmul(f_conv, p.w_q)?;
    let k = g.matmul(f_conv, p.w_k)?;
    let v = g.matmul(f_conv, p.w_v)?;
    let qi = g.gather_rows(q, pairs.queries.clone())?;
    let kj = g.gather_rows(k, pairs.supports.clone())?;
    let vj = g.gather_rows(v, pairs.supports.clone())?;

    let dp = g.constant(pairs.delta_tensor());
    let pos = p.gamma.apply(g, dp, slope)?;

    let qk = p.combine.apply(g, qi, kj)?;
    let pre = g.add(qk, pos)?;
    let logits = p.kappa.apply(g, pre, slope)?;
    let weights = g.segment_softmax(logits, pairs.offsets.clone())?;

    let values = g.add(vj, pos)?;
    let weighted = g.mul(weights, values)?;
    let output = g.segment_sum(weighted, pairs.offsets.clone())?;
    Ok(LocalParts { weights, output })
}

/// Local vector self-attention over each point's neighbourhood.
///
/// Queries come from the point itself, keys and values from its neighbours;
/// logits `kappa(combine(q_i, k_j) + gamma(dp_ij))` are normalised per channel
/// over the neighbourhood and weight `v_j + gamma(dp_ij)`. Points with an
/// empty neighbourhood produce a zero row.
pub fn local_self_attention(
    g: &mut Graph,
    pairs: &PairGeometry,
    f_conv: Var,
    params: &AttentionParams,
    slope: f64,
) -> Result<Var> {
    let parts = local_parts(g, pairs, f_conv, params, slope)?;
    let empty = pairs.offsets.windows(2).filter(|w| w[0] == w[1]).count();
    if empty > 0 {
        log::warn!("local attention: {empty} points have no neighbours; emitting zero rows");
    }
    Ok(parts.output)
}

/// Per-pair, per-channel attention weights (`E x d`) of
/// [`local_self_attention`].
pub fn local_attention_weights(
    g: &mut Graph,
    pairs: &PairGeometry,
    f_conv: Var,
    params: &AttentionParams,
    slope: f64,
) -> Result<Var> {
    local_parts(g, pairs, f_conv, params, slope).map(|p| p.weights)
}

/// Projections of the global attention branch.
#[derive(Clone, Copy, Debug)]
pub struct GlobalAttentionParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// Scaled dot-product attention over all points:
/// `softmax(Q K^T / sqrt(d_q)) V`.
pub fn global_self_attention(
    g: &mut Graph,
    features: Var,
    params: &GlobalAttentionParams,
) -> Result<Var> {
    let q = g.matmul(features, params.w_q)?;
    let k = g.matmul(features, params.w_k)?;
    let v = g.matmul(features, params.w_v)?;
    let dq = g.shape(q)[1];
    if g.shape(k)[1] != dq {
        return Err(Error::invalid(
            "global_self_attention",
            format!("query width {dq} vs key width {}", g.shape(k)[1]),
        ));
    }
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (dq as f64).sqrt());
    let a = g.softmax_lastdim(s)?;
    g.matmul(a, v)
}
