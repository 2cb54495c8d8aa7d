//! Boundary-aware loss weighting and segmentation metrics.

mod metrics;
mod pga;

pub use metrics::{iou_report, ConfusionMatrix, IouReport};
pub use pga::{
    pga_cross_entropy, pga_field, pga_score, pga_weights, PgaField, DEFAULT_PGA_K,
};
