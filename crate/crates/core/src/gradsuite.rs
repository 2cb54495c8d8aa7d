//! Central finite-difference checks of every graph op and network block.
//!
//! Each case builds random inputs from a seed, reduces the op output to a
//! scalar through a fixed random projection (so no gradient is identically
//! zero) and compares reverse-mode gradients against fourth-order central
//! differences. Parameters whose gradient vanishes identically (a bias
//! feeding batch norm or a softmax over neighbours) enter as constants, since
//! a relative error is meaningless there.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_report, GradCheckOptions, GradCheckReport, Graph, Mode, Tensor, Var};
use crate::geometry::{generate_kernel_disposition, radius_neighbors, Point3, PointCloud};
use crate::layers::{
    decoder_block, encoder_block, global_self_attention, inception_fusion, kp_convolution,
    local_self_attention, AttentionBranch, AttentionParams, BatchNormParams, CombineOp, ConvUnit,
    EncoderParams, GlobalAttentionParams, Linear, Mlp2, ModelConfig, Network, PairGeometry,
    Pyramid, INPUT_KEY,
};
use crate::loss::{pga_cross_entropy, pga_field};
use crate::Result;

/// Largest relative error accepted for a single op.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Largest relative error accepted for composed layers and the network.
pub const COMPOSED_TOLERANCE: f64 = 1e-4;

/// Step for ops, whose test inputs keep clear of kinks and ties.
const OP_STEP: f64 = 1e-4;
/// Smaller step for composed blocks, where internal activations can sit near
/// a leaky-ReLU kink.
const COMPOSED_STEP: f64 = 1e-5;
/// Gradients below these magnitudes are compared in absolute terms. Both sit
/// well above the roundoff of the difference quotients (about 1e-12 for ops
/// and 1e-8 for blocks, whose outputs are larger sums) and well below the
/// typical gradient size of order one.
const OP_FLOOR: f64 = 1e-5;
const COMPOSED_FLOOR: f64 = 1e-4;
const SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseKind {
    Op,
    Composed,
}

impl CaseKind {
    pub fn tolerance(self) -> f64 {
        match self {
            CaseKind::Op => OP_TOLERANCE,
            CaseKind::Composed => COMPOSED_TOLERANCE,
        }
    }
}

/// Worst result of one case over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub kind: CaseKind,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub coordinates: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.kind.tolerance()
    }
}

type CaseFn = fn(u64) -> Result<GradCheckReport>;

const CASES: &[(&str, CaseKind, CaseFn)] = &[
    ("matmul", CaseKind::Op, op_matmul),
    ("transpose", CaseKind::Op, op_transpose),
    ("add", CaseKind::Op, op_add),
    ("sub", CaseKind::Op, op_sub),
    ("mul", CaseKind::Op, op_mul),
    ("add_row", CaseKind::Op, op_add_row),
    ("scale", CaseKind::Op, op_scale),
    ("leaky_relu", CaseKind::Op, op_leaky_relu),
    ("softmax_lastdim", CaseKind::Op, op_softmax),
    ("gather_rows", CaseKind::Op, op_gather),
    ("segment_sum", CaseKind::Op, op_segment_sum),
    ("segment_max", CaseKind::Op, op_segment_max),
    ("segment_softmax", CaseKind::Op, op_segment_softmax),
    ("kernel_aggregate", CaseKind::Op, op_kernel_aggregate),
    ("concat_lastdim", CaseKind::Op, op_concat),
    ("batch_norm_training", CaseKind::Op, op_bn_training),
    ("batch_norm_inference", CaseKind::Op, op_bn_inference),
    ("max_pool_channels", CaseKind::Op, op_max_pool),
    ("reshape", CaseKind::Op, op_reshape),
    ("sum", CaseKind::Op, op_sum),
    ("softmax_cross_entropy", CaseKind::Op, op_cross_entropy),
    ("kp_convolution", CaseKind::Composed, layer_kpconv),
    ("inception_fusion", CaseKind::Composed, layer_inception),
    ("local_attention_hadamard", CaseKind::Composed, layer_local_hadamard),
    ("local_attention_add", CaseKind::Composed, layer_local_add),
    ("local_attention_subtract", CaseKind::Composed, layer_local_subtract),
    ("global_attention", CaseKind::Composed, layer_global),
    ("encoder_v1", CaseKind::Composed, layer_encoder_v1),
    ("encoder_v2", CaseKind::Composed, layer_encoder_v2),
    ("decoder", CaseKind::Composed, layer_decoder),
    ("pga_cross_entropy", CaseKind::Composed, layer_pga_loss),
    ("network", CaseKind::Composed, layer_network),
];

/// Names and kinds of every case, in run order.
pub fn case_names() -> Vec<(&'static str, CaseKind)> {
    CASES.iter().map(|&(n, k, _)| (n, k)).collect()
}

/// Runs one named case at one seed.
pub fn run_case(name: &str, seed: u64) -> Option<Result<GradCheckReport>> {
    CASES
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, f)| f(seed))
}

/// Runs every case at every seed and keeps the worst error per case.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<CaseResult>> {
    let mut out = Vec::with_capacity(CASES.len());
    for &(name, kind, f) in CASES {
        let mut res = CaseResult {
            name,
            kind,
            max_rel_error: 0.0,
            worst_seed: seeds.first().copied().unwrap_or(0),
            coordinates: 0,
        };
        for &seed in seeds {
            let r = f(seed)?;
            res.coordinates += r.coordinates_checked;
            if r.max_rel_error > res.max_rel_error {
                res.max_rel_error = r.max_rel_error;
                res.worst_seed = seed;
            }
        }
        out.push(res);
    }
    Ok(out)
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ salt)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn rand_t(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(r, shape, -1.0, 1.0)
}

/// Values bounded away from zero.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_t(r, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Distinct values at least `0.05` apart, randomly permuted.
fn separated(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let data = order.iter().map(|&k| -1.0 + 0.05 * k as f64 + r.random_range(0.0..0.01)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `sum(out * R)` with `R` drawn from a fixed stream, so repeated calls agree.
fn project(g: &mut Graph, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut r = ChaCha8Rng::seed_from_u64(0x5eed);
    let proj = uniform(&mut r, &shape, 0.5, 1.5);
    let c = g.constant(proj);
    let m = g.mul(out, c)?;
    Ok(g.sum(m))
}

fn check<F>(
    f: F,
    inputs: &[Tensor],
    mode: Mode,
    kind: CaseKind,
    seed: u64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let composed = kind == CaseKind::Composed;
    let opts = GradCheckOptions {
        eps: if composed { COMPOSED_STEP } else { OP_STEP },
        mode,
        max_coords_per_input: max_coords,
        seed,
        fourth_order: true,
        denominator_floor: if composed { COMPOSED_FLOOR } else { OP_FLOOR },
        second_step: composed,
    };
    finite_diff_report(f, inputs, opts)
}

/// Every coordinate of every input, op step.
fn check_all<F>(f: F, inputs: &[Tensor], seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check(f, inputs, Mode::Training, CaseKind::Op, seed, None)
}

/// Composed step, optionally sampling `max_coords` coordinates per input.
fn check_block<F>(f: F, inputs: &[Tensor], seed: u64, max_coords: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check(f, inputs, Mode::Training, CaseKind::Composed, seed, max_coords)
}

fn op_matmul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 1);
    let inputs = [rand_t(&mut r, &[4, 5]), rand_t(&mut r, &[5, 3])];
    check_all(|g, v| { let y = g.matmul(v[0], v[1])?; project(g, y) }, &inputs, seed)
}

fn op_transpose(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 2);
    let inputs = [rand_t(&mut r, &[3, 4])];
    check_all(|g, v| { let y = g.transpose(v[0])?; project(g, y) }, &inputs, seed)
}

fn op_add(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 3);
    let inputs = [rand_t(&mut r, &[4, 3]), rand_t(&mut r, &[4, 3])];
    check_all(|g, v| { let y = g.add(v[0], v[1])?; project(g, y) }, &inputs, seed)
}

fn op_sub(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 4);
    let inputs = [rand_t(&mut r, &[4, 3]), rand_t(&mut r, &[4, 3])];
    check_all(|g, v| { let y = g.sub(v[0], v[1])?; project(g, y) }, &inputs, seed)
}

fn op_mul(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 5);
    let inputs = [rand_t(&mut r, &[4, 3]), rand_t(&mut r, &[4, 3])];
    check_all(|g, v| { let y = g.mul(v[0], v[1])?; project(g, y) }, &inputs, seed)
}

fn op_add_row(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 6);
    let inputs = [rand_t(&mut r, &[4, 3]), rand_t(&mut r, &[3])];
    check_all(|g, v| { let y = g.add_row(v[0], v[1])?; project(g, y) }, &inputs, seed)
}

fn op_scale(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 7);
    let inputs = [rand_t(&mut r, &[4, 3])];
    check_all(|g, v| { let y = g.scale(v[0], -0.7); project(g, y) }, &inputs, seed)
}

fn op_leaky_relu(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 8);
    let inputs = [off_zero(&mut r, &[5, 4])];
    check_all(|g, v| { let y = g.leaky_relu(v[0], SLOPE); project(g, y) }, &inputs, seed)
}

fn op_softmax(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 9);
    let inputs = [uniform(&mut r, &[4, 5], -2.0, 2.0)];
    check_all(|g, v| { let y = g.softmax_lastdim(v[0])?; project(g, y) }, &inputs, seed)
}

fn op_gather(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 10);
    let inputs = [rand_t(&mut r, &[5, 3])];
    let idx: Vec<usize> = (0..8).map(|_| r.random_range(0..5)).collect();
    check_all(move |g, v| { let y = g.gather_rows(v[0], idx.clone())?; project(g, y) }, &inputs, seed)
}

const OFFSETS: [usize; 5] = [0, 2, 2, 5, 7];

fn op_segment_sum(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 11);
    let inputs = [rand_t(&mut r, &[7, 3])];
    check_all(|g, v| { let y = g.segment_sum(v[0], OFFSETS.to_vec())?; project(g, y) }, &inputs, seed)
}

fn op_segment_max(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 12);
    let inputs = [separated(&mut r, &[7, 3])];
    check_all(|g, v| { let y = g.segment_max(v[0], &OFFSETS)?; project(g, y) }, &inputs, seed)
}

fn op_segment_softmax(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 13);
    let inputs = [uniform(&mut r, &[7, 3], -2.0, 2.0)];
    check_all(|g, v| { let y = g.segment_softmax(v[0], OFFSETS.to_vec())?; project(g, y) }, &inputs, seed)
}

fn op_kernel_aggregate(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 14);
    let m = 4;
    let inputs = [rand_t(&mut r, &[7, 3])];
    let w: Vec<f64> = (0..7 * m).map(|_| r.random_range(0.0..1.0)).collect();
    check_all(
        move |g, v| {
            let y = g.kernel_aggregate(v[0], w.clone(), m, OFFSETS.to_vec())?;
            project(g, y)
        },
        &inputs,
        seed,
    )
}

fn op_concat(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 15);
    let inputs = [rand_t(&mut r, &[4, 2]), rand_t(&mut r, &[4, 3])];
    check_all(|g, v| { let y = g.concat_lastdim(&[v[0], v[1]])?; project(g, y) }, &inputs, seed)
}

fn op_bn_training(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 16);
    let inputs = [
        rand_t(&mut r, &[6, 3]),
        uniform(&mut r, &[3], 0.5, 1.5),
        rand_t(&mut r, &[3]),
    ];
    let running = (vec![0.0; 3], vec![1.0; 3]);
    check_all(
        move |g, v| {
            let y = g.batch_norm(v[0], v[1], v[2], (&running.0, &running.1))?;
            project(g, y)
        },
        &inputs,
        seed,
    )
}

fn op_bn_inference(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 17);
    let inputs = [
        rand_t(&mut r, &[6, 3]),
        uniform(&mut r, &[3], 0.5, 1.5),
        rand_t(&mut r, &[3]),
    ];
    let mean: Vec<f64> = (0..3).map(|_| r.random_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..3).map(|_| r.random_range(0.2..2.0)).collect();
    check(
        move |g, v| {
            let y = g.batch_norm(v[0], v[1], v[2], (&mean, &var))?;
            project(g, y)
        },
        &inputs,
        Mode::Inference,
        CaseKind::Op,
        seed,
        None,
    )
}

fn op_max_pool(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 18);
    let inputs = [separated(&mut r, &[4, 6])];
    check_all(|g, v| { let y = g.max_pool_channels(v[0])?; project(g, y) }, &inputs, seed)
}

fn op_reshape(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 19);
    let inputs = [rand_t(&mut r, &[2, 6])];
    check_all(|g, v| { let y = g.reshape(v[0], vec![3, 4])?; project(g, y) }, &inputs, seed)
}

fn op_sum(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 20);
    let inputs = [rand_t(&mut r, &[3, 3])];
    check_all(|g, v| Ok(g.sum(v[0])), &inputs, seed)
}

fn op_cross_entropy(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 21);
    let inputs = [uniform(&mut r, &[6, 4], -2.0, 2.0)];
    let mut labels: Vec<Option<usize>> = (0..6).map(|_| Some(r.random_range(0..4))).collect();
    labels[2] = None;
    let w: Vec<f64> = (0..6).map(|_| r.random_range(0.5..2.0)).collect();
    check_all(
        move |g, v| g.softmax_cross_entropy(v[0], labels.clone(), w.clone()),
        &inputs,
        seed,
    )
}

/// Random points in a unit cube with their radius neighbourhoods.
fn geometry(r: &mut ChaCha8Rng, n: usize) -> (Vec<Point3>, PairGeometry) {
    let pts: Vec<Point3> = (0..n)
        .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
        .collect();
    let nb = radius_neighbors(&pts, &pts, 0.45, 12).expect("valid radius");
    let pairs = PairGeometry::new(&pts, &pts, &nb);
    (pts, pairs)
}

fn layer_kpconv(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 30);
    let (_, pairs) = geometry(&mut r, 24);
    let kd = generate_kernel_disposition(5, 0.35, seed)?;
    let inputs = [rand_t(&mut r, &[24, 3]), rand_t(&mut r, &[5, 3, 4])];
    check_block(
        move |g, v| {
            let unit = ConvUnit { disposition: &kd, weights: v[1] };
            let y = kp_convolution(g, &pairs, v[0], &unit)?;
            project(g, y)
        },
        &inputs,
        seed,
        None,
    )
}

fn layer_inception(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 31);
    let (_, pairs) = geometry(&mut r, 24);
    let ka = generate_kernel_disposition(4, 0.3, seed)?;
    let kb = generate_kernel_disposition(6, 0.45, seed + 1)?;
    let inputs = [
        rand_t(&mut r, &[24, 3]),
        rand_t(&mut r, &[4, 3, 4]),
        rand_t(&mut r, &[6, 3, 4]),
    ];
    check_block(
        move |g, v| {
            let a = ConvUnit { disposition: &ka, weights: v[1] };
            let b = ConvUnit { disposition: &kb, weights: v[2] };
            let y = inception_fusion(g, &pairs, v[0], &a, Some(&b))?;
            project(g, y)
        },
        &inputs,
        seed,
        None,
    )
}

fn mlp_inputs(r: &mut ChaCha8Rng, d_in: usize, d: usize) -> [Tensor; 4] {
    [rand_t(r, &[d_in, d]), rand_t(r, &[d]), rand_t(r, &[d, d]), rand_t(r, &[d])]
}

fn mlp_from(v: &[Var]) -> Mlp2 {
    Mlp2 { w1: v[0], b1: v[1], w2: v[2], b2: v[3] }
}

/// Logit MLP whose output bias is a constant: the neighbourhood softmax
/// cancels it.
fn kappa_with(g: &mut Graph, v: &[Var], b2: &Tensor) -> Mlp2 {
    let b2 = g.constant(b2.clone());
    Mlp2 { w1: v[0], b1: v[1], w2: v[2], b2 }
}

fn layer_local(seed: u64, combine: CombineOp) -> Result<GradCheckReport> {
    let mut r = rng(seed, 32);
    let (_, pairs) = geometry(&mut r, 16);
    let d = 4;
    let mut inputs = vec![
        rand_t(&mut r, &[16, d]),
        rand_t(&mut r, &[d, d]),
        rand_t(&mut r, &[d, d]),
        rand_t(&mut r, &[d, d]),
    ];
    let [w1, b1, w2, kappa_b2] = mlp_inputs(&mut r, d, d);
    inputs.extend([w1, b1, w2]);
    inputs.extend(mlp_inputs(&mut r, 3, d));
    check_block(
        move |g, v| {
            let p = AttentionParams {
                w_q: v[1],
                w_k: v[2],
                w_v: v[3],
                kappa: kappa_with(g, &v[4..7], &kappa_b2),
                gamma: mlp_from(&v[7..11]),
                combine,
            };
            let y = local_self_attention(g, &pairs, v[0], &p, SLOPE)?;
            project(g, y)
        },
        &inputs,
        seed,
        Some(24),
    )
}

fn layer_local_hadamard(seed: u64) -> Result<GradCheckReport> {
    layer_local(seed, CombineOp::Hadamard)
}

fn layer_local_add(seed: u64) -> Result<GradCheckReport> {
    layer_local(seed, CombineOp::Add)
}

fn layer_local_subtract(seed: u64) -> Result<GradCheckReport> {
    layer_local(seed, CombineOp::Subtract)
}

fn layer_global(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 33);
    let inputs = [
        rand_t(&mut r, &[10, 4]),
        rand_t(&mut r, &[4, 3]),
        rand_t(&mut r, &[4, 3]),
        rand_t(&mut r, &[4, 4]),
    ];
    check_block(
        |g, v| {
            let p = GlobalAttentionParams { w_q: v[1], w_k: v[2], w_v: v[3] };
            let y = global_self_attention(g, v[0], &p)?;
            project(g, y)
        },
        &inputs,
        seed,
        None,
    )
}

fn layer_encoder(seed: u64, global: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed, 34);
    let n = 20;
    let (_, pairs) = geometry(&mut r, n);
    let cfg = ModelConfig {
        n_layers: 1,
        in_features: 3,
        base_width: 8,
        final_v2: global,
        ..ModelConfig::default()
    };
    let plan = cfg.plans()?.remove(0);
    let (d_in, cw, aw, f_out) = (plan.d_in, plan.conv_width, plan.att_width, plan.f_out);
    let ka = generate_kernel_disposition(4, 0.3, seed)?;
    let kb = generate_kernel_disposition(6, 0.45, seed + 1)?;

    // 0 features, 1-2 conv, 3-5 qkv, 6-7 bn_enc, 8 mlp, 9-10 bn_mlp,
    // 11-12 shortcut, then kappa and gamma
    let mut inputs = vec![
        rand_t(&mut r, &[n, d_in]),
        rand_t(&mut r, &[4, d_in, cw]),
        rand_t(&mut r, &[6, d_in, cw]),
        rand_t(&mut r, &[cw, aw]),
        rand_t(&mut r, &[cw, aw]),
        rand_t(&mut r, &[cw, aw]),
        uniform(&mut r, &[plan.enc_width], 0.5, 1.5),
        uniform(&mut r, &[plan.enc_width], -0.2, 0.2),
        rand_t(&mut r, &[plan.enc_width, f_out]),
        uniform(&mut r, &[f_out], 0.5, 1.5),
        uniform(&mut r, &[f_out], -0.2, 0.2),
        rand_t(&mut r, &[d_in, f_out]),
        rand_t(&mut r, &[f_out]),
    ];
    let mlp_b = rand_t(&mut r, &[f_out]);
    let [w1, b1, w2, kappa_b2] = mlp_inputs(&mut r, aw, aw);
    if !global {
        inputs.extend([w1, b1, w2]);
        inputs.extend(mlp_inputs(&mut r, 3, aw));
    }
    check_block(
        move |g, v| {
            let attention = if global {
                AttentionBranch::Global(GlobalAttentionParams { w_q: v[3], w_k: v[4], w_v: v[5] })
            } else {
                AttentionBranch::Local(AttentionParams {
                    w_q: v[3],
                    w_k: v[4],
                    w_v: v[5],
                    kappa: kappa_with(g, &v[13..16], &kappa_b2),
                    gamma: mlp_from(&v[16..20]),
                    combine: CombineOp::Hadamard,
                })
            };
            let mlp = Linear { w: v[8], b: g.constant(mlp_b.clone()) };
            let params = EncoderParams {
                conv_a: ConvUnit { disposition: &ka, weights: v[1] },
                conv_b: Some(ConvUnit { disposition: &kb, weights: v[2] }),
                attention,
                bn_enc: BatchNormParams {
                    gamma: v[6],
                    beta: v[7],
                    running_mean: vec![0.0; plan.enc_width],
                    running_var: vec![1.0; plan.enc_width],
                },
                mlp,
                bn_mlp: BatchNormParams {
                    gamma: v[9],
                    beta: v[10],
                    running_mean: vec![0.0; f_out],
                    running_var: vec![1.0; f_out],
                },
                shortcut: Some(Linear { w: v[11], b: v[12] }),
            };
            let y = encoder_block(g, &pairs, v[0], &plan, &params, SLOPE)?;
            project(g, y.features)
        },
        &inputs,
        seed,
        Some(16),
    )
}

fn layer_encoder_v1(seed: u64) -> Result<GradCheckReport> {
    layer_encoder(seed, false)
}

fn layer_encoder_v2(seed: u64) -> Result<GradCheckReport> {
    layer_encoder(seed, true)
}

fn layer_decoder(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 35);
    let map: Vec<usize> = (0..12).map(|_| r.random_range(0..5)).collect();
    let inputs = [
        rand_t(&mut r, &[5, 4]),
        rand_t(&mut r, &[12, 3]),
        rand_t(&mut r, &[7, 6]),
        uniform(&mut r, &[6], 0.5, 1.5),
        uniform(&mut r, &[6], -0.2, 0.2),
    ];
    let lin_b = rand_t(&mut r, &[6]);
    check_block(
        move |g, v| {
            let lin = Linear { w: v[2], b: g.constant(lin_b.clone()) };
            let bn = BatchNormParams {
                gamma: v[3],
                beta: v[4],
                running_mean: vec![0.0; 6],
                running_var: vec![1.0; 6],
            };
            let (y, _) = decoder_block(g, v[0], v[1], &map, &lin, &bn, SLOPE)?;
            project(g, y)
        },
        &inputs,
        seed,
        None,
    )
}

fn labelled_cloud(r: &mut ChaCha8Rng, n: usize, n_classes: u32, features: usize) -> Result<PointCloud> {
    let pts: Vec<Point3> = (0..n)
        .map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..0.3)])
        .collect();
    // Labels follow space so boundaries (and non-trivial weights) exist.
    let labels: Vec<u32> = pts
        .iter()
        .map(|p| ((p[0] * n_classes as f64) as u32).min(n_classes - 1))
        .collect();
    let feats: Vec<f64> = (0..n * features).map(|_| r.random_range(0.0..1.0)).collect();
    PointCloud::new(pts, feats, features, Some(labels))
}

fn layer_pga_loss(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 36);
    let cloud = labelled_cloud(&mut r, 40, 3, 1)?;
    let field = pga_field(&cloud, 8, 1.0, 1.0 / 8.0)?;
    let labels = cloud.labels.clone().expect("labels");
    let inputs = [uniform(&mut r, &[40, 3], -2.0, 2.0)];
    check_block(
        move |g, v| pga_cross_entropy(g, v[0], &labels, &field.weights),
        &inputs,
        seed,
        None,
    )
}

fn layer_network(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 37);
    let cfg = ModelConfig {
        n_classes: 3,
        in_features: 2,
        n_layers: 3,
        base_width: 8,
        cell_0: 0.08,
        neighbor_cap: 12,
        ..ModelConfig::default()
    };
    let net = Network::new(cfg.clone(), seed)?;
    let cloud = labelled_cloud(&mut r, 60, 3, 2)?;
    let pyramid = Pyramid::build(&cloud, &cfg)?;
    let field = pga_field(&cloud, 8, 1.0, 1.0 / 8.0)?;
    let labels = cloud.labels.clone().expect("labels");
    let names = [
        INPUT_KEY,
        "enc0.conv_a.w",
        "enc1.att.wq",
        "enc2.att.wv",
        "enc2.mlp.w",
        "dec0.lin.w",
        "head.fc2.w",
    ];
    let mut inputs = Vec::with_capacity(names.len());
    for name in names {
        inputs.push(if name == INPUT_KEY {
            pyramid.features.clone()
        } else {
            net.store.param(name)?.clone()
        });
    }
    check_block(
        move |g, v| {
            let overrides: BTreeMap<String, Var> =
                names.iter().zip(v).map(|(n, &var)| (n.to_string(), var)).collect();
            let out = net.forward_with(g, &pyramid, &overrides)?;
            pga_cross_entropy(g, out.logits, &labels, &field.weights)
        },
        &inputs,
        seed,
        Some(12),
    )
}
