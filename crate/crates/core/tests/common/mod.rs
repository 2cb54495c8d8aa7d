#![allow(dead_code)]

use std::collections::BTreeMap;

use kpfusion::autodiff::Tensor;
use kpfusion::data::{generate_scene, SceneSpec};
use kpfusion::geometry::{Point3, PointCloud, IGNORE_LABEL};
use kpfusion::train::NetworkConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
            ]
        })
        .collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64, n_features: usize) -> PointCloud {
    let positions = random_points(rng, n, extent);
    let features = (0..n * n_features).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointCloud::new(positions, features, n_features, None).unwrap()
}

pub fn d2(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// All supports within `radius` of each query, sorted by (distance, index),
/// truncated to `cap`.
pub fn brute_radius(queries: &[Point3], supports: &[Point3], radius: f64, cap: usize) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| {
            let mut c: Vec<(f64, usize)> = supports
                .iter()
                .enumerate()
                .map(|(j, s)| (d2(q, s), j))
                .filter(|(d, _)| *d <= radius * radius)
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.truncate(cap);
            c.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn brute_argmin(fine: &[Point3], coarse: &[Point3]) -> Vec<usize> {
    fine.iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in coarse.iter().enumerate() {
                let d = d2(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Row-major dense product `a (m x k) * b (k x n)`.
pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small two-class scene (about 480 points) for fast training tests.
pub fn small_scene(seed: u64) -> PointCloud {
    let spec = SceneSpec {
        extent: 2.0,
        ground_points: 300,
        poles: 3,
        pole_points: 60,
        ..SceneSpec::plane_and_poles(seed)
    };
    generate_scene(&spec).unwrap()
}

/// Two-layer, width-8 network trained for `steps` steps.
pub fn tiny_config(steps: usize) -> NetworkConfig {
    let mut cfg = NetworkConfig::default();
    cfg.model.n_layers = 2;
    cfg.model.base_width = 8;
    cfg.model.cell_0 = 0.1;
    cfg.optimizer.steps = steps;
    cfg
}

pub struct VoxelOracle {
    pub positions: Vec<Point3>,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub groups: Vec<Vec<usize>>,
}

/// Voxel means, clamped to member bounds, and majority labels (ties to the
/// smallest id, ignored points skipped); groups ordered by first member.
pub fn voxel_oracle(cloud: &PointCloud, cell: f64) -> VoxelOracle {
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let key = [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ];
        cells.entry(key).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = cells.into_values().collect();
    groups.sort_by_key(|g| g[0]);

    let f = cloud.n_features;
    let labels_in = cloud.labels.as_ref().unwrap();
    let mut out = VoxelOracle {
        positions: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        groups: groups.clone(),
    };
    for g in &groups {
        let n = g.len() as f64;
        let mut c = [0.0; 3];
        for a in 0..3 {
            let sum: f64 = g.iter().fold(0.0, |s, &i| s + cloud.positions[i][a]);
            let lo = g.iter().map(|&i| cloud.positions[i][a]).fold(f64::INFINITY, f64::min);
            let hi = g.iter().map(|&i| cloud.positions[i][a]).fold(f64::NEG_INFINITY, f64::max);
            c[a] = (sum / n).clamp(lo, hi);
        }
        out.positions.push(c);
        for k in 0..f {
            let sum: f64 = g.iter().fold(0.0, |s, &i| s + cloud.features[i * f + k]);
            out.features.push(sum / n);
        }
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &i in g {
            if labels_in[i] != IGNORE_LABEL {
                *counts.entry(labels_in[i]).or_default() += 1;
            }
        }
        // Highest count; BTreeMap order makes the first maximum the smallest id.
        let mut best: Option<(u32, usize)> = None;
        for (&l, &c) in &counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((l, c));
            }
        }
        out.labels.push(best.map_or(IGNORE_LABEL, |(l, _)| l));
    }
    out
}

/// Differing, non-ignored labels among the `k` nearest other points.
pub fn pga_oracle(points: &[Point3], labels: &[u32], k: usize) -> Vec<u32> {
    (0..points.len())
        .map(|i| {
            if labels[i] == IGNORE_LABEL {
                return 0;
            }
            let mut c: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (d2(&points[i], &points[j]), j))
                .collect();
            c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.iter()
                .take(k)
                .filter(|&&(_, j)| labels[j] != IGNORE_LABEL && labels[j] != labels[i])
                .count() as u32
        })
        .collect()
}

/// Per-class IoU (None without support or predictions) and their mean.
pub fn iou_oracle(preds: &[u32], labels: &[u32], nc: usize) -> (Vec<Option<f64>>, Option<f64>) {
    let mut per_class = Vec::new();
    for c in 0..nc as u32 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &l) in preds.iter().zip(labels) {
            if l == IGNORE_LABEL {
                continue;
            }
            match (p == c, l == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        per_class.push((tp + fp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per_class, miou)
}
