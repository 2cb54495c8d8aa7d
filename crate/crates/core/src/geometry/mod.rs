//! Spatial preprocessing: everything that turns raw coordinates into index
//! structures the layers consume.

mod cloud;
mod grid;
mod kernel;
mod neighbors;
mod sphere;
mod voxel;

pub use cloud::{PointCloud, IGNORE_LABEL};
pub use grid::HashGrid;
pub use kernel::{
    generate_kernel_disposition, generate_kernel_disposition_traced, random_kernel_disposition,
    repulsive_energy, KernelDisposition, DEFAULT_SIGMA_RATIO, KERNEL_DESCENT_ITERATIONS,
};
pub use neighbors::{
    knn, knn_excluding_self, nearest_upsample_map, radius_neighbors, NeighborIndex,
};
pub use sphere::sample_sphere;
pub use voxel::{voxel_grid_subsample, Subsampled};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}
