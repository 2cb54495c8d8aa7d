use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{norm, Point3};
use crate::{Error, Result};

/// Number of descent iterations used to spread kernel points.
pub const KERNEL_DESCENT_ITERATIONS: usize = 1000;

/// Default ratio between the correlation extent and the kernel radius.
pub const DEFAULT_SIGMA_RATIO: f64 = 0.3;

/// Fixed arrangement of kernel points inside a ball of radius `radius`; the
/// first point sits at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDisposition {
    pub points: Vec<Point3>,
    pub radius: f64,
    /// Extent of the linear correlation `max(0, 1 - d / sigma)`.
    pub sigma: f64,
}

impl KernelDisposition {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Linear correlation between an offset and kernel point `k`.
    #[inline]
    pub fn influence(&self, offset: &Point3, k: usize) -> f64 {
        let p = &self.points[k];
        let d = ((offset[0] - p[0]).powi(2) + (offset[1] - p[1]).powi(2) + (offset[2] - p[2]).powi(2))
            .sqrt();
        (1.0 - d / self.sigma).max(0.0)
    }

    /// Smallest distance between two kernel points (infinite for one point).
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in i + 1..self.points.len() {
                best = best.min(super::dist2(&self.points[i], &self.points[j]).sqrt());
            }
        }
        best
    }
}

/// Sum of inverse pairwise distances.
pub fn repulsive_energy(points: &[Point3]) -> f64 {
    let mut e = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            e += 1.0 / super::dist2(&points[i], &points[j]).sqrt().max(1e-12);
        }
    }
    e
}

fn check_args(n_points: usize, radius: f64) -> Result<()> {
    if n_points < 1 {
        return Err(Error::invalid(
            "generate_kernel_disposition",
            "need at least one kernel point",
        ));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(
            "generate_kernel_disposition",
            format!("radius must be positive, got {radius}"),
        ));
    }
    Ok(())
}

/// Centre point plus `n_points - 1` points drawn uniformly from the unit
/// ball. This is the starting point of the repulsion descent.
fn unit_random_placement(n_points: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![[0.0; 3]];
    while pts.len() < n_points {
        let p = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        if norm(&p) <= 1.0 {
            pts.push(p);
        }
    }
    pts
}

fn scaled(points: Vec<Point3>, radius: f64) -> KernelDisposition {
    KernelDisposition {
        points: points
            .into_iter()
            .map(|p| [p[0] * radius, p[1] * radius, p[2] * radius])
            .collect(),
        radius,
        sigma: DEFAULT_SIGMA_RATIO * radius,
    }
}

/// Uniform-random placement with the same seed as
/// [`generate_kernel_disposition`], before any descent.
pub fn random_kernel_disposition(n_points: usize, radius: f64, seed: u64) -> Result<KernelDisposition> {
    check_args(n_points, radius)?;
    Ok(scaled(unit_random_placement(n_points, seed), radius))
}

/// Centre point plus repulsion-optimised points inside the ball.
pub fn generate_kernel_disposition(n_points: usize, radius: f64, seed: u64) -> Result<KernelDisposition> {
    generate_kernel_disposition_traced(n_points, radius, seed).map(|(k, _)| k)
}

/// Like [`generate_kernel_disposition`], also returning the accepted energy
/// after every iteration (unit-ball scale).
pub fn generate_kernel_disposition_traced(
    n_points: usize,
    radius: f64,
    seed: u64,
) -> Result<(KernelDisposition, Vec<f64>)> {
    check_args(n_points, radius)?;
    let mut pts = unit_random_placement(n_points, seed);
    let mut energy = repulsive_energy(&pts);
    let mut trace = Vec::with_capacity(KERNEL_DESCENT_ITERATIONS);
    let mut step = 1e-2;
    let mut trial = pts.clone();
    for _ in 0..KERNEL_DESCENT_ITERATIONS {
        if n_points > 1 {
            let grad = energy_gradient(&pts);
            for i in 1..n_points {
                let mut p = [0.0; 3];
                for a in 0..3 {
                    p[a] = pts[i][a] - step * grad[i][a];
                }
                let r = norm(&p);
                if r > 1.0 {
                    for v in &mut p {
                        *v /= r;
                    }
                }
                trial[i] = p;
            }
            let e = repulsive_energy(&trial);
            if e <= energy {
                pts.copy_from_slice(&trial);
                energy = e;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
        }
        trace.push(energy);
    }
    Ok((scaled(pts, radius), trace))
}

fn energy_gradient(pts: &[Point3]) -> Vec<Point3> {
    let mut g = vec![[0.0; 3]; pts.len()];
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if i == j {
                continue;
            }
            let d = [pts[i][0] - pts[j][0], pts[i][1] - pts[j][1], pts[i][2] - pts[j][2]];
            let r = norm(&d).max(1e-12);
            let s = 1.0 / (r * r * r);
            for a in 0..3 {
                g[i][a] -= d[a] * s;
            }
        }
    }
    g
}
