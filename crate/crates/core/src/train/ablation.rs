use std::fmt::Write as _;
use std::str::FromStr;

use super::{evaluate, train, NetworkConfig, TrainLog};
use crate::geometry::PointCloud;
use crate::layers::{CombineOp, KernelSpec};
use crate::{Error, Result};

/// Which family of variants to compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationGrid {
    /// The configuration as given: one row.
    Base,
    /// Cumulative components: one conv unit, second unit, local attention,
    /// global final encoder, boundary-weighted loss.
    Components,
    /// The three query/key combinations.
    Combine,
    /// Kernel-pair configurations.
    Kernels,
    /// Boundary-weight slope sweep, including the disabled switch.
    Theta,
}

impl FromStr for AblationGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(AblationGrid::Base),
            "components" => Ok(AblationGrid::Components),
            "combine" => Ok(AblationGrid::Combine),
            "kernels" => Ok(AblationGrid::Kernels),
            "theta" => Ok(AblationGrid::Theta),
            _ => Err(Error::Config(format!(
                "unknown ablation grid {s:?} (base, components, combine, kernels, theta)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub config: NetworkConfig,
}

fn kernel(points: usize, radius_fraction: f64) -> KernelSpec {
    KernelSpec {
        points,
        radius_fraction,
    }
}

/// Expands `base` into the rows of `grid`. Every row is validated, so an
/// incompatible combination fails here with a configuration error.
pub fn grid_rows(base: &NetworkConfig, grid: AblationGrid) -> Result<Vec<AblationRow>> {
    let row = |name: &str, f: &dyn Fn(&mut NetworkConfig)| {
        let mut config = base.clone();
        f(&mut config);
        AblationRow {
            name: name.to_string(),
            config,
        }
    };
    let rows = match grid {
        AblationGrid::Base => vec![row("base", &|_| {})],
        AblationGrid::Components => {
            let stage = |c: &mut NetworkConfig, n: usize| {
                c.model.second_conv = n >= 1;
                c.model.attention = n >= 2;
                c.model.final_v2 = n >= 3;
                c.pga.enabled = n >= 4;
            };
            vec![
                row("conv1", &|c| stage(c, 0)),
                row("+conv2", &|c| stage(c, 1)),
                row("+local-attention", &|c| stage(c, 2)),
                row("+global-final", &|c| stage(c, 3)),
                row("+pga", &|c| stage(c, 4)),
            ]
        }
        AblationGrid::Combine => CombineOp::ALL
            .iter()
            .map(|&op| row(op.name(), &|c| c.model.combine = op))
            .collect(),
        AblationGrid::Kernels => [
            (9, 15, 0.75, 1.0),
            (10, 15, 0.75, 1.0),
            (15, 20, 0.75, 1.0),
            (9, 15, 0.5, 1.0),
            (15, 21, 0.5, 1.0),
        ]
        .iter()
        .map(|&(a, b, ra, rb)| {
            row(&format!("K{a}/{b} r{ra}/{rb}"), &|c| {
                c.model.kernel_a = kernel(a, ra);
                c.model.kernel_b = kernel(b, rb);
            })
        })
        .collect(),
        AblationGrid::Theta => {
            let k = base.pga.k as f64;
            vec![
                row("pga-off", &|c| c.pga.enabled = false),
                row("theta=0", &|c| {
                    c.pga.enabled = true;
                    c.pga.theta = 0.0;
                }),
                row("theta=1/k", &|c| {
                    c.pga.enabled = true;
                    c.pga.theta = 1.0 / k;
                }),
                row("theta=2/k", &|c| {
                    c.pga.enabled = true;
                    c.pga.theta = 2.0 / k;
                }),
            ]
        }
    };
    for r in &rows {
        r.config
            .validate()
            .map_err(|e| Error::Config(format!("ablation row {}: {e}", r.name)))?;
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub name: String,
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
    pub log: TrainLog,
}

/// Trains and evaluates every row on the same data.
pub fn run_ablation(
    rows: &[AblationRow],
    train_clouds: &[PointCloud],
    validation: &[PointCloud],
) -> Result<Vec<AblationResult>> {
    rows.iter()
        .map(|r| {
            log::info!("ablation row {}", r.name);
            let (net, log) = train(&r.config, train_clouds, validation, None)?;
            let report = evaluate(&net, validation, r.config.sphere_radius(), r.config.sampling.votes)?;
            Ok(AblationResult {
                name: r.name.clone(),
                miou: report.miou_or_zero(),
                per_class: report.per_class,
                log,
            })
        })
        .collect()
}

/// Tab-separated grid: variant, mIoU, per-class IoU, initial and final loss.
pub fn ablation_table(results: &[AblationResult], class_names: &[String]) -> String {
    let nc = results.iter().map(|r| r.per_class.len()).max().unwrap_or(0);
    let mut s = String::from("variant\tmIoU");
    for c in 0..nc {
        let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
        let _ = write!(s, "\t{name}");
    }
    s.push_str("\tinitial_loss\tfinal_loss\n");
    for r in results {
        let _ = write!(s, "{}\t{:.4}", r.name, r.miou);
        for c in 0..nc {
            match r.per_class.get(c).copied().flatten() {
                Some(v) => {
                    let _ = write!(s, "\t{v:.4}");
                }
                None => s.push_str("\t-"),
            }
        }
        let init = r.log.initial_loss().unwrap_or(f64::NAN);
        let last = r.log.tail_loss(1).unwrap_or(f64::NAN);
        let _ = writeln!(s, "\t{init:.5}\t{last:.5}");
    }
    s
}
