use super::{dist2, Point3, PointCloud};
use crate::{Error, Result};

/// Points within `radius` of `center` (inclusive) and their parent indices.
pub fn sample_sphere(
    cloud: &PointCloud,
    center: Point3,
    radius: f64,
) -> Result<(PointCloud, Vec<usize>)> {
    if !(radius >= 0.0) {
        return Err(Error::invalid(
            "sample_sphere",
            format!("radius must be non-negative, got {radius}"),
        ));
    }
    let r2 = radius * radius;
    let ids: Vec<usize> = cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p, &center) <= r2)
        .map(|(i, _)| i)
        .collect();
    Ok((cloud.select(&ids), ids))
}
