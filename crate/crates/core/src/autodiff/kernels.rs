//! Raw dense loops shared by the graph's forward and backward rules.

use crate::par;

/// `a (m x k) * b (k x n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    par::for_each_chunk(&mut out, n, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (p, &av) in ai.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `a^T (k x m) * g (m x n)` for `a` stored as `m x k`.
pub fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    if n == 0 {
        return out;
    }
    par::for_each_chunk(&mut out, n, |p, row| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let gi = &g[i * n..(i + 1) * n];
            for (o, &gv) in row.iter_mut().zip(gi) {
                *o += av * gv;
            }
        }
    });
    out
}

/// `g (m x n) * b^T (n x k)` for `b` stored as `k x n`.
pub fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    if k == 0 {
        return out;
    }
    par::for_each_chunk(&mut out, k, |i, row| {
        let gi = &g[i * n..(i + 1) * n];
        for (p, o) in row.iter_mut().enumerate() {
            let bp = &b[p * n..(p + 1) * n];
            *o = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
        }
    });
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Rows of `src` (width `d`) picked by `idx`.
pub fn gather_rows(src: &[f64], d: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; idx.len() * d];
    par::for_each_chunk(&mut out, d, |e, row| {
        row.copy_from_slice(&src[idx[e] * d..(idx[e] + 1) * d]);
    });
    out
}

/// Adjoint of [`gather_rows`]: accumulates rows of `g` into `n_rows` rows.
pub fn scatter_add_rows(g: &[f64], d: usize, idx: &[usize], n_rows: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_rows * d];
    for (e, &r) in idx.iter().enumerate() {
        let dst = &mut out[r * d..(r + 1) * d];
        for (o, v) in dst.iter_mut().zip(&g[e * d..(e + 1) * d]) {
            *o += v;
        }
    }
    out
}

pub fn segment_sum(x: &[f64], d: usize, offsets: &[usize]) -> Vec<f64> {
    let n = offsets.len() - 1;
    let mut out = vec![0.0; n * d];
    par::for_each_chunk(&mut out, d, |i, row| {
        for e in offsets[i]..offsets[i + 1] {
            for (o, v) in row.iter_mut().zip(&x[e * d..(e + 1) * d]) {
                *o += v;
            }
        }
    });
    out
}
