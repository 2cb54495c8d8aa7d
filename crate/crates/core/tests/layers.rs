mod common;

use common::*;
use kpfusion::autodiff::{Graph, Mode, Tensor};
use kpfusion::geometry::{radius_neighbors, KernelDisposition, NeighborIndex, Point3, PointCloud};
use kpfusion::layers::*;
use rand::Rng;

fn lrelu(x: f64, s: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        s * x
    }
}

fn single_kernel(sigma: f64) -> KernelDisposition {
    KernelDisposition {
        points: vec![[0.0; 3]],
        radius: sigma,
        sigma,
    }
}

fn line_cloud() -> (Vec<Point3>, NeighborIndex) {
    let pos = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0]];
    let nb = radius_neighbors(&pos, &pos, 0.15, 40).unwrap();
    (pos, nb)
}

/// Direct evaluation of the kernel-point sum with scalar loops.
fn kpconv_oracle(
    pos: &[Point3],
    nb: &NeighborIndex,
    feats: &[f64],
    d_in: usize,
    disp: &KernelDisposition,
    w: &[f64],
    d_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; pos.len() * d_out];
    for i in 0..pos.len() {
        for &j in nb.neighbors(i) {
            let dp = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1], pos[j][2] - pos[i][2]];
            for (k, pk) in disp.points.iter().enumerate() {
                let dist = d2(&dp, pk).sqrt();
                let h = (1.0 - dist / disp.sigma).max(0.0);
                for c in 0..d_in {
                    let df = feats[j * d_in + c] - feats[i * d_in + c];
                    for o in 0..d_out {
                        out[i * d_out + o] += h * df * w[(k * d_in + c) * d_out + o];
                    }
                }
            }
        }
    }
    out
}

fn run_conv(
    pos: &[Point3],
    nb: &NeighborIndex,
    feats: Tensor,
    disp: &KernelDisposition,
    w: Tensor,
) -> Vec<f64> {
    let pairs = PairGeometry::new(pos, pos, nb);
    let mut g = Graph::new(Mode::Training);
    let f = g.constant(feats);
    let wv = g.constant(w);
    let unit = ConvUnit {
        disposition: disp,
        weights: wv,
    };
    let out = kp_convolution(&mut g, &pairs, f, &unit).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn kpconv_three_point_line_matches_scalar_oracle() {
    let (pos, nb) = line_cloud();
    let disp = single_kernel(0.15);
    let feats = [0.0, 1.0, 2.0];
    let got = run_conv(
        &pos,
        &nb,
        Tensor::matrix(3, 1, feats.to_vec()).unwrap(),
        &disp,
        Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap(),
    );
    let want = kpconv_oracle(&pos, &nb, &feats, 1, &disp, &[1.0], 1);
    assert!(max_abs_diff(&got, &want) < 1e-12, "{got:?} vs {want:?}");
    // neighbour at 0.1 under extent 0.15 contributes 1/3 of its difference
    assert!(max_abs_diff(&got, &[1.0 / 3.0, 0.0, -1.0 / 3.0]) < 1e-12);
}

#[test]
fn kpconv_random_matches_oracle() {
    let mut r = rng(7);
    let pos = random_points(&mut r, 60, 1.0);
    let nb = radius_neighbors(&pos, &pos, 0.3, 40).unwrap();
    let disp = kpfusion::geometry::generate_kernel_disposition(5, 0.25, 3)
        .unwrap()
        .with_sigma(0.1);
    let feats = random_tensor(&mut r, vec![60, 3], 1.0);
    let w = random_tensor(&mut r, vec![5, 3, 4], 1.0);
    let got = run_conv(&pos, &nb, feats.clone(), &disp, w.clone());
    let want = kpconv_oracle(&pos, &nb, feats.data(), 3, &disp, w.data(), 4);
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn kpconv_constant_features_and_zero_weights_give_zero() {
    let mut r = rng(1);
    let pos = random_points(&mut r, 40, 1.0);
    let nb = radius_neighbors(&pos, &pos, 0.4, 40).unwrap();
    let disp = kpfusion::geometry::generate_kernel_disposition(9, 0.3, 1).unwrap();
    let w = random_tensor(&mut r, vec![9, 2, 3], 1.0);
    let constant = Tensor::new(vec![40, 2], [0.7, -1.3].repeat(40)).unwrap();
    let out = run_conv(&pos, &nb, constant, &disp, w);
    assert!(out.iter().all(|&v| v == 0.0));

    let feats = random_tensor(&mut r, vec![40, 2], 1.0);
    let out = run_conv(&pos, &nb, feats, &disp, Tensor::zeros(vec![9, 2, 3]));
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn kpconv_is_translation_invariant() {
    let mut r = rng(2);
    let pos = random_points(&mut r, 50, 1.0);
    let nb = radius_neighbors(&pos, &pos, 0.3, 40).unwrap();
    let disp = kpfusion::geometry::generate_kernel_disposition(9, 0.3, 1).unwrap();
    let feats = random_tensor(&mut r, vec![50, 2], 1.0);
    let w = random_tensor(&mut r, vec![9, 2, 3], 1.0);
    let a = run_conv(&pos, &nb, feats.clone(), &disp, w.clone());
    // power-of-two shift keeps every difference exact
    let shifted: Vec<Point3> = pos.iter().map(|p| [p[0] + 4.0, p[1] - 8.0, p[2] + 16.0]).collect();
    let b = run_conv(&shifted, &nb, feats, &disp, w);
    assert!(max_abs_diff(&a, &b) <= 1e-12);
}

fn fusion(
    pos: &[Point3],
    nb: &NeighborIndex,
    feats: &Tensor,
    da: &KernelDisposition,
    wa: &Tensor,
    db: &KernelDisposition,
    wb: &Tensor,
) -> Vec<f64> {
    let pairs = PairGeometry::new(pos, pos, nb);
    let mut g = Graph::new(Mode::Training);
    let f = g.constant(feats.clone());
    let a = ConvUnit {
        disposition: da,
        weights: g.constant(wa.clone()),
    };
    let b = ConvUnit {
        disposition: db,
        weights: g.constant(wb.clone()),
    };
    let out = inception_fusion(&mut g, &pairs, f, &a, Some(&b)).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn inception_fusion_identities() {
    let mut r = rng(3);
    let pos = random_points(&mut r, 40, 1.0);
    let nb = radius_neighbors(&pos, &pos, 0.3, 40).unwrap();
    let da = kpfusion::geometry::generate_kernel_disposition(9, 0.225, 1).unwrap();
    let db = kpfusion::geometry::generate_kernel_disposition(15, 0.3, 2).unwrap();
    let feats = random_tensor(&mut r, vec![40, 2], 1.0);
    let wa = random_tensor(&mut r, vec![9, 2, 4], 1.0);
    let wb = random_tensor(&mut r, vec![15, 2, 4], 1.0);

    let single = run_conv(&pos, &nb, feats.clone(), &da, wa.clone());
    let zero_b = fusion(&pos, &nb, &feats, &da, &wa, &db, &Tensor::zeros(vec![15, 2, 4]));
    assert!(max_abs_diff(&single, &zero_b) == 0.0);

    let twice = fusion(&pos, &nb, &feats, &da, &wa, &da, &wa);
    let doubled: Vec<f64> = single.iter().map(|v| 2.0 * v).collect();
    assert!(max_abs_diff(&twice, &doubled) == 0.0);

    let both = fusion(&pos, &nb, &feats, &da, &wa, &db, &wb);
    let oa = kpconv_oracle(&pos, &nb, feats.data(), 2, &da, wa.data(), 4);
    let ob = kpconv_oracle(&pos, &nb, feats.data(), 2, &db, wb.data(), 4);
    let sum: Vec<f64> = oa.iter().zip(&ob).map(|(a, b)| a + b).collect();
    assert!(max_abs_diff(&both, &sum) < 1e-12);
}

#[test]
fn inception_fusion_default_pair_on_line_cloud() {
    let (pos, nb) = line_cloud();
    let cfg = ModelConfig::default();
    let r = 0.15;
    let da = kpfusion::geometry::generate_kernel_disposition(cfg.kernel_a.points, cfg.kernel_a.radius_fraction * r, 1)
        .unwrap();
    let db = kpfusion::geometry::generate_kernel_disposition(cfg.kernel_b.points, cfg.kernel_b.radius_fraction * r, 2)
        .unwrap();
    assert_eq!((da.len(), db.len()), (9, 15));
    let feats = Tensor::matrix(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
    let wa = Tensor::filled(vec![9, 1, 1], 1.0);
    let wb = Tensor::filled(vec![15, 1, 1], 1.0);
    let got = fusion(&pos, &nb, &feats, &da, &wa, &db, &wb);
    let oa = kpconv_oracle(&pos, &nb, feats.data(), 1, &da, wa.data(), 1);
    let ob = kpconv_oracle(&pos, &nb, feats.data(), 1, &db, wb.data(), 1);
    let sum: Vec<f64> = oa.iter().zip(&ob).map(|(a, b)| a + b).collect();
    assert!(max_abs_diff(&got, &sum) < 1e-12);
}

#[test]
fn inception_fusion_rejects_width_mismatch() {
    let (pos, nb) = line_cloud();
    let pairs = PairGeometry::new(&pos, &pos, &nb);
    let disp = single_kernel(0.15);
    let mut g = Graph::new(Mode::Training);
    let f = g.constant(Tensor::zeros(vec![3, 1]));
    let a = ConvUnit {
        disposition: &disp,
        weights: g.constant(Tensor::zeros(vec![1, 1, 2])),
    };
    let b = ConvUnit {
        disposition: &disp,
        weights: g.constant(Tensor::zeros(vec![1, 1, 3])),
    };
    assert!(inception_fusion(&mut g, &pairs, f, &a, Some(&b)).is_err());
}

struct DenseMlp {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl DenseMlp {
    fn random(r: &mut rand_chacha::ChaCha8Rng, d_in: usize, d: usize, scale: f64) -> Self {
        DenseMlp {
            w1: random_tensor(r, vec![d_in, d], scale),
            b1: random_tensor(r, vec![d], scale),
            w2: random_tensor(r, vec![d, d], scale),
            b2: random_tensor(r, vec![d], scale),
        }
    }

    fn zero(d_in: usize, d: usize) -> Self {
        DenseMlp {
            w1: Tensor::zeros(vec![d_in, d]),
            b1: Tensor::zeros(vec![d]),
            w2: Tensor::zeros(vec![d, d]),
            b2: Tensor::zeros(vec![d]),
        }
    }

    fn eval(&self, x: &[f64], slope: f64) -> Vec<f64> {
        let (d_in, d) = (self.w1.rows(), self.w1.cols());
        let mut h = mm(x, self.w1.data(), 1, d_in, d);
        for (v, b) in h.iter_mut().zip(self.b1.data()) {
            *v = lrelu(*v + b, slope);
        }
        let mut y = mm(&h, self.w2.data(), 1, d, d);
        for (v, b) in y.iter_mut().zip(self.b2.data()) {
            *v += b;
        }
        y
    }

    fn bind(&self, g: &mut Graph) -> Mlp2 {
        Mlp2 {
            w1: g.constant(self.w1.clone()),
            b1: g.constant(self.b1.clone()),
            w2: g.constant(self.w2.clone()),
            b2: g.constant(self.b2.clone()),
        }
    }
}

struct DenseAttention {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    kappa: DenseMlp,
    gamma: DenseMlp,
    combine: CombineOp,
}

const SLOPE: f64 = 0.1;

impl DenseAttention {
    fn random(r: &mut rand_chacha::ChaCha8Rng, d_in: usize, d: usize, combine: CombineOp) -> Self {
        DenseAttention {
            wq: random_tensor(r, vec![d_in, d], 1.0),
            wk: random_tensor(r, vec![d_in, d], 1.0),
            wv: random_tensor(r, vec![d_in, d], 1.0),
            kappa: DenseMlp::random(r, d, d, 0.7),
            gamma: DenseMlp::random(r, 3, d, 0.7),
            combine,
        }
    }

    fn bind(&self, g: &mut Graph) -> AttentionParams {
        AttentionParams {
            w_q: g.constant(self.wq.clone()),
            w_k: g.constant(self.wk.clone()),
            w_v: g.constant(self.wv.clone()),
            kappa: self.kappa.bind(g),
            gamma: self.gamma.bind(g),
            combine: self.combine,
        }
    }

    /// Per-neighbourhood evaluation: returns (output rows, per-pair weights).
    fn oracle(&self, pos: &[Point3], nb: &NeighborIndex, f: &[f64], d_in: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.wq.cols();
        let n = pos.len();
        let mut out = vec![0.0; n * d];
        let mut all_w = Vec::new();
        for i in 0..n {
            let fi = &f[i * d_in..(i + 1) * d_in];
            let q = mm(fi, self.wq.data(), 1, d_in, d);
            let mut logits = Vec::new();
            let mut values = Vec::new();
            for &j in nb.neighbors(i) {
                let fj = &f[j * d_in..(j + 1) * d_in];
                let k = mm(fj, self.wk.data(), 1, d_in, d);
                let v = mm(fj, self.wv.data(), 1, d_in, d);
                let dp = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1], pos[j][2] - pos[i][2]];
                let pe = self.gamma.eval(&dp, SLOPE);
                let pre: Vec<f64> = (0..d)
                    .map(|c| {
                        let qk = match self.combine {
                            CombineOp::Hadamard => q[c] * k[c],
                            CombineOp::Add => q[c] + k[c],
                            CombineOp::Subtract => q[c] - k[c],
                        };
                        qk + pe[c]
                    })
                    .collect();
                logits.push(self.kappa.eval(&pre, SLOPE));
                values.push((0..d).map(|c| v[c] + pe[c]).collect::<Vec<_>>());
            }
            let m = logits.len();
            let mut w = vec![vec![0.0; d]; m];
            for c in 0..d {
                let mx = logits.iter().map(|l| l[c]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l[c] - mx).exp()).sum();
                for e in 0..m {
                    w[e][c] = (logits[e][c] - mx).exp() / z;
                    out[i * d + c] += w[e][c] * values[e][c];
                }
            }
            all_w.extend(w);
        }
        (out, all_w)
    }
}

fn run_local(
    pos: &[Point3],
    nb: &NeighborIndex,
    f: &Tensor,
    att: &DenseAttention,
) -> (Vec<f64>, Vec<f64>) {
    let pairs = PairGeometry::new(pos, pos, nb);
    let mut g = Graph::new(Mode::Training);
    let fv = g.constant(f.clone());
    let p = att.bind(&mut g);
    let out = local_self_attention(&mut g, &pairs, fv, &p, SLOPE).unwrap();
    let w = local_attention_weights(&mut g, &pairs, fv, &p, SLOPE).unwrap();
    (g.value(out).data().to_vec(), g.value(w).data().to_vec())
}

#[test]
fn local_attention_matches_dense_oracle_for_every_combine() {
    for (s, combine) in CombineOp::ALL.into_iter().enumerate() {
        let mut r = rng(20 + s as u64);
        let pos = random_points(&mut r, 10, 1.0);
        let nb = radius_neighbors(&pos, &pos, 0.6, 40).unwrap();
        let f = random_tensor(&mut r, vec![10, 3], 1.0);
        let att = DenseAttention::random(&mut r, 3, 4, combine);
        let (got, weights) = run_local(&pos, &nb, &f, &att);
        let (want, want_w) = att.oracle(&pos, &nb, f.data(), 3);
        assert!(max_abs_diff(&got, &want) < 1e-12, "{combine:?}");
        let flat: Vec<f64> = want_w.concat();
        assert!(max_abs_diff(&weights, &flat) < 1e-12);
    }
}

#[test]
fn local_attention_weights_normalised_and_nonnegative() {
    let mut r = rng(31);
    let pos = random_points(&mut r, 80, 1.0);
    let nb = radius_neighbors(&pos, &pos, 0.3, 40).unwrap();
    let f = random_tensor(&mut r, vec![80, 4], 2.0);
    let att = DenseAttention::random(&mut r, 4, 6, CombineOp::Hadamard);
    let (_, w) = run_local(&pos, &nb, &f, &att);
    for i in 0..80 {
        for c in 0..6 {
            let s: f64 = (nb.offsets[i]..nb.offsets[i + 1]).map(|e| w[e * 6 + c]).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
    assert!(w.iter().all(|&v| v >= 0.0));
}

#[test]
fn local_attention_single_point_returns_value_row() {
    let pos = vec![[0.3, 0.1, -0.2]];
    let nb = radius_neighbors(&pos, &pos, 0.5, 40).unwrap();
    let mut r = rng(4);
    let f = random_tensor(&mut r, vec![1, 3], 1.0);
    let mut att = DenseAttention::random(&mut r, 3, 4, CombineOp::Hadamard);
    att.gamma = DenseMlp::zero(3, 4);
    let (got, _) = run_local(&pos, &nb, &f, &att);
    let v = mm(f.data(), att.wv.data(), 1, 3, 4);
    assert!(max_abs_diff(&got, &v) < 1e-15);
}

#[test]
fn local_attention_uniform_weights_average_values() {
    let mut r = rng(5);
    let pos = random_points(&mut r, 12, 0.5);
    let nb = radius_neighbors(&pos, &pos, 0.4, 40).unwrap();
    let f = random_tensor(&mut r, vec![12, 3], 1.0);
    let mut att = DenseAttention::random(&mut r, 3, 4, CombineOp::Hadamard);
    att.kappa = DenseMlp::zero(4, 4);
    att.gamma = DenseMlp::zero(3, 4);
    att.wk = Tensor::zeros(vec![3, 4]);
    let (got, _) = run_local(&pos, &nb, &f, &att);
    let v = mm(f.data(), att.wv.data(), 12, 3, 4);
    for i in 0..12 {
        let ns = nb.neighbors(i);
        for c in 0..4 {
            let mean = ns.iter().map(|&j| v[j * 4 + c]).sum::<f64>() / ns.len() as f64;
            assert!((got[i * 4 + c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn local_attention_without_position_term_stays_in_value_hull() {
    let mut r = rng(6);
    let pos = random_points(&mut r, 30, 1.0);
    let nb = radius_neighbors(&pos, &pos, 0.4, 40).unwrap();
    let f = random_tensor(&mut r, vec![30, 3], 1.0);
    let mut att = DenseAttention::random(&mut r, 3, 4, CombineOp::Subtract);
    att.gamma = DenseMlp::zero(3, 4);
    let (got, _) = run_local(&pos, &nb, &f, &att);
    let v = mm(f.data(), att.wv.data(), 30, 3, 4);
    for i in 0..30 {
        for c in 0..4 {
            let vals: Vec<f64> = nb.neighbors(i).iter().map(|&j| v[j * 4 + c]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(got[i * 4 + c] >= lo - 1e-12 && got[i * 4 + c] <= hi + 1e-12);
        }
    }
}

#[test]
fn local_attention_empty_neighbourhood_gives_zero_row() {
    let pos = vec![[0.0; 3], [1.0, 0.0, 0.0]];
    let nb = NeighborIndex::from_lists(vec![vec![0, 1], vec![]], 2.0, 2);
    let mut r = rng(8);
    let f = random_tensor(&mut r, vec![2, 2], 1.0);
    let att = DenseAttention::random(&mut r, 2, 3, CombineOp::Add);
    let (got, _) = run_local(&pos, &nb, &f, &att);
    assert_eq!(&got[3..], &[0.0, 0.0, 0.0]);
    assert!(got[..3].iter().all(|v| v.is_finite()));
}

fn run_global(f: &Tensor, wq: &Tensor, wk: &Tensor, wv: &Tensor) -> Vec<f64> {
    let mut g = Graph::new(Mode::Training);
    let fv = g.constant(f.clone());
    let p = GlobalAttentionParams {
        w_q: g.constant(wq.clone()),
        w_k: g.constant(wk.clone()),
        w_v: g.constant(wv.clone()),
    };
    let out = global_self_attention(&mut g, fv, &p).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn global_attention_matches_dense_oracle() {
    let mut r = rng(9);
    let (n, d_in, dq, dv) = (5, 4, 2, 3);
    let f = random_tensor(&mut r, vec![n, d_in], 1.0);
    let wq = random_tensor(&mut r, vec![d_in, dq], 1.0);
    let wk = random_tensor(&mut r, vec![d_in, dq], 1.0);
    let wv = random_tensor(&mut r, vec![d_in, dv], 1.0);
    let got = run_global(&f, &wq, &wk, &wv);

    let q = mm(f.data(), wq.data(), n, d_in, dq);
    let k = mm(f.data(), wk.data(), n, d_in, dq);
    let v = mm(f.data(), wv.data(), n, d_in, dv);
    let mut want = vec![0.0; n * dv];
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|j| (0..dq).map(|c| q[i * dq + c] * k[j * dq + c]).sum::<f64>() / (dq as f64).sqrt())
            .collect();
        let z: f64 = s.iter().map(|x| x.exp()).sum();
        for j in 0..n {
            for c in 0..dv {
                want[i * dv + c] += s[j].exp() / z * v[j * dv + c];
            }
        }
    }
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn global_attention_trivial_cases() {
    let mut r = rng(10);
    let wq = random_tensor(&mut r, vec![3, 2], 1.0);
    let wk = random_tensor(&mut r, vec![3, 2], 1.0);
    let wv = random_tensor(&mut r, vec![3, 4], 1.0);
    let one = random_tensor(&mut r, vec![1, 3], 1.0);
    let got = run_global(&one, &wq, &wk, &wv);
    assert!(max_abs_diff(&got, &mm(one.data(), wv.data(), 1, 3, 4)) < 1e-15);

    let same = Tensor::new(vec![6, 3], one.data().repeat(6)).unwrap();
    let got = run_global(&same, &wq, &wk, &wv);
    for row in got.chunks(4) {
        assert_eq!(row, &got[..4]);
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        n_classes: 3,
        n_layers: 3,
        base_width: 8,
        cell_0: 0.1,
        ..ModelConfig::default()
    }
}

#[test]
fn encoder_zero_branches_reduce_to_shortcut() {
    let cfg = small_config();
    let plans = cfg.plans().unwrap();
    let plan = &plans[0];
    let mut r = rng(11);
    let pos = random_points(&mut r, 20, 0.5);
    let nb = radius_neighbors(&pos, &pos, plan.conv_radius, 40).unwrap();
    let pairs = PairGeometry::new(&pos, &pos, &nb);
    let da = kpfusion::geometry::generate_kernel_disposition(9, 0.75 * plan.conv_radius, 1).unwrap();
    let db = kpfusion::geometry::generate_kernel_disposition(15, plan.conv_radius, 2).unwrap();
    let x = random_tensor(&mut r, vec![20, plan.d_in], 1.0);
    let sw = random_tensor(&mut r, vec![plan.d_in, plan.f_out], 1.0);
    let sb = random_tensor(&mut r, vec![plan.f_out], 1.0);

    let mut g = Graph::new(Mode::Inference);
    let xv = g.constant(x.clone());
    let z = |g: &mut Graph, s: Vec<usize>| g.constant(Tensor::zeros(s));
    let (cw, aw) = (plan.conv_width, plan.att_width);
    let bn = |g: &mut Graph, c: usize| BatchNormParams {
        gamma: g.constant(Tensor::filled(vec![c], 1.0)),
        beta: g.constant(Tensor::zeros(vec![c])),
        running_mean: vec![0.0; c],
        running_var: vec![1.0; c],
    };
    let params = EncoderParams {
        conv_a: ConvUnit {
            disposition: &da,
            weights: z(&mut g, vec![9, plan.d_in, cw]),
        },
        conv_b: Some(ConvUnit {
            disposition: &db,
            weights: z(&mut g, vec![15, plan.d_in, cw]),
        }),
        attention: AttentionBranch::Local(AttentionParams {
            w_q: z(&mut g, vec![cw, aw]),
            w_k: z(&mut g, vec![cw, aw]),
            w_v: z(&mut g, vec![cw, aw]),
            kappa: Mlp2 {
                w1: z(&mut g, vec![aw, aw]),
                b1: z(&mut g, vec![aw]),
                w2: z(&mut g, vec![aw, aw]),
                b2: z(&mut g, vec![aw]),
            },
            gamma: Mlp2 {
                w1: z(&mut g, vec![3, aw]),
                b1: z(&mut g, vec![aw]),
                w2: z(&mut g, vec![aw, aw]),
                b2: z(&mut g, vec![aw]),
            },
            combine: CombineOp::Hadamard,
        }),
        bn_enc: bn(&mut g, plan.enc_width),
        mlp: Linear {
            w: z(&mut g, vec![plan.enc_width, plan.f_out]),
            b: z(&mut g, vec![plan.f_out]),
        },
        bn_mlp: bn(&mut g, plan.f_out),
        shortcut: Some(Linear {
            w: g.constant(sw.clone()),
            b: g.constant(sb.clone()),
        }),
    };
    let out = encoder_block(&mut g, &pairs, xv, plan, &params, 0.1).unwrap();
    assert_eq!(g.shape(out.features), &[20, plan.f_out]);
    let mut want = mm(x.data(), sw.data(), 20, plan.d_in, plan.f_out);
    for row in want.chunks_mut(plan.f_out) {
        for (v, b) in row.iter_mut().zip(sb.data()) {
            *v += b;
        }
    }
    assert!(max_abs_diff(g.value(out.features).data(), &want) < 1e-12);
}

#[test]
fn decoder_gathers_coarse_rows_by_map() {
    let mut r = rng(12);
    let coarse = random_tensor(&mut r, vec![4, 3], 1.0);
    let skip = random_tensor(&mut r, vec![7, 2], 1.0);
    let map = vec![0, 3, 3, 1, 2, 0, 1];
    let lin_w = random_tensor(&mut r, vec![5, 2], 1.0);
    let mut g = Graph::new(Mode::Inference);
    let c = g.constant(coarse.clone());
    let s = g.constant(skip.clone());
    let lin = Linear {
        w: g.constant(lin_w.clone()),
        b: g.constant(Tensor::zeros(vec![2])),
    };
    let bn = BatchNormParams {
        gamma: g.constant(Tensor::filled(vec![2], 1.0)),
        beta: g.constant(Tensor::zeros(vec![2])),
        running_mean: vec![0.0; 2],
        running_var: vec![1.0 - 1e-5; 2],
    };
    let (out, _) = decoder_block(&mut g, c, s, &map, &lin, &bn, 0.1).unwrap();
    for (i, &m) in map.iter().enumerate() {
        let mut cat = coarse.row(m).to_vec();
        cat.extend_from_slice(skip.row(i));
        let y = mm(&cat, lin_w.data(), 1, 5, 2);
        for c in 0..2 {
            let want = lrelu(y[c], 0.1);
            assert!((g.value(out).row(i)[c] - want).abs() < 1e-12);
        }
    }
    assert!(decoder_block(&mut g, c, s, &map[..6], &lin, &bn, 0.1).is_err());
}

#[test]
fn decoder_single_coarse_point_broadcasts() {
    let mut g = Graph::new(Mode::Training);
    let c = g.constant(Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap());
    let up = g.gather_rows(c, vec![0; 5]).unwrap();
    for i in 0..5 {
        assert_eq!(g.value(up).row(i), &[0.5, -1.0]);
    }
}

fn scene(seed: u64, n: usize) -> PointCloud {
    let mut r = rng(seed);
    let positions = random_points(&mut r, n, 1.5);
    let features = (0..n * 2).map(|_| r.random_range(0.0..1.0)).collect();
    PointCloud::new(positions, features, 2, None).unwrap()
}

#[test]
fn network_logits_have_expected_shape_for_every_variant() {
    let cloud = scene(13, 150);
    let base = small_config();
    let variants = [
        ModelConfig { second_conv: false, attention: false, final_v2: false, ..base.clone() },
        ModelConfig { attention: false, final_v2: false, ..base.clone() },
        ModelConfig { final_v2: false, ..base.clone() },
        base.clone(),
        ModelConfig { combine: CombineOp::Add, ..base.clone() },
        ModelConfig { n_layers: 1, ..base.clone() },
    ];
    for cfg in variants {
        let net = Network::new(cfg.clone(), 0).unwrap();
        let pyr = Pyramid::build(&cloud, &cfg).unwrap();
        let logits = net.logits(&pyr).unwrap();
        assert_eq!(logits.shape(), &[150, cfg.n_classes]);
        assert!(logits.is_finite());
        let p = net.predict_proba_pyramid(&pyr).unwrap();
        for row in p.chunks(cfg.n_classes) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn network_translation_with_fixed_indices() {
    let cloud = scene(14, 200);
    let cfg = small_config();
    let net = Network::new(cfg.clone(), 3).unwrap();
    let pyr = Pyramid::build(&cloud, &cfg).unwrap();
    let a = net.logits(&pyr).unwrap();
    let b = net.logits(&pyr.translated([12.3, -7.1, 0.4])).unwrap();
    assert!(max_abs_diff(a.data(), b.data()) <= 1e-6);
}

#[test]
fn network_default_config_on_300_points_is_finite_and_trains() {
    let cloud = scene(15, 300);
    let cfg = ModelConfig::default();
    let mut net = Network::new(cfg.clone(), 1).unwrap();
    let pyr = Pyramid::build(&cloud, &cfg).unwrap();
    let mut g = Graph::new(Mode::Training);
    let out = net.forward(&mut g, &pyr).unwrap();
    assert!(g.value(out.logits).is_finite());
    let labels: Vec<Option<usize>> = (0..300).map(|i| Some(i % 2)).collect();
    let loss = g.softmax_cross_entropy(out.logits, labels, vec![1.0; 300]).unwrap();
    g.backward(loss).unwrap();
    let grads = net.gradients(&mut g, &out);
    assert_eq!(grads.len(), net.store.params.len());
    assert!(grads.values().flatten().all(|v| v.is_finite()));
    let before = net.store.buffers.clone();
    net.update_running_stats(&g, &out);
    assert_ne!(before, net.store.buffers);
}

#[test]
fn v2_on_non_final_encoder_is_rejected() {
    let cfg = small_config();
    let mut plans = cfg.plans().unwrap();
    plans[0].version = EncoderVersion::V2;
    let mut r = rng(16);
    let pos = random_points(&mut r, 5, 0.2);
    let nb = radius_neighbors(&pos, &pos, 0.25, 40).unwrap();
    let pairs = PairGeometry::new(&pos, &pos, &nb);
    let disp = single_kernel(0.2);
    let mut g = Graph::new(Mode::Training);
    let x = g.constant(Tensor::zeros(vec![5, plans[0].d_in]));
    let z = g.constant(Tensor::zeros(vec![1]));
    let bn = BatchNormParams {
        gamma: z,
        beta: z,
        running_mean: vec![],
        running_var: vec![],
    };
    let params = EncoderParams {
        conv_a: ConvUnit { disposition: &disp, weights: z },
        conv_b: None,
        attention: AttentionBranch::Global(GlobalAttentionParams { w_q: z, w_k: z, w_v: z }),
        bn_enc: bn.clone(),
        mlp: Linear { w: z, b: z },
        bn_mlp: bn,
        shortcut: None,
    };
    let err = encoder_block(&mut g, &pairs, x, &plans[0], &params, 0.1).unwrap_err();
    assert!(err.is_config());
}

