use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Mode, Tensor, Var};
use crate::Result;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the worst error occurred.
    pub worst: (usize, usize),
    pub coordinates_checked: usize,
}

/// Options for [`finite_diff_report`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub mode: Mode,
    /// Check at most this many coordinates per input (chosen at random).
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
    /// Use the fourth-order central stencil
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h` instead of the
    /// second-order one.
    pub fourth_order: bool,
    /// Lower bound of the relative-error denominator.
    pub denominator_floor: f64,
    /// Also difference with step `eps / 10` and keep the smaller error. A
    /// stencil straddling a kink (leaky ReLU, max) disagrees at one step
    /// only; a wrong gradient disagrees at both.
    pub second_step: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            mode: Mode::Training,
            max_coords_per_input: None,
            seed: 0,
            fourth_order: false,
            denominator_floor: 1e-8,
            second_step: false,
        }
    }
}

/// Maximum relative error between analytic gradients and central
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)`, over every coordinate of
/// every input. The denominator is `max(|analytic|, |numeric|, 1e-8)`; see
/// [`GradCheckOptions`] for other stencils and floors.
///
/// `f` receives a fresh training-mode graph and one trainable leaf per input
/// and must return a scalar.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    finite_diff_report(f, inputs, opts).map(|r| r.max_rel_error)
}

fn evaluate<F>(f: &F, inputs: &[Tensor], mode: Mode) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

pub fn finite_diff_report<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&f, inputs, opts.mode)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates_checked: 0,
    };
    let mut work = inputs.to_vec();
    for (t, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < input.len() => {
                let mut c = sample(&mut rng, input.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let x0 = input.data()[c];
            let a = analytic[t][c];
            let mut at = |dx: f64| -> Result<f64> {
                work[t].data_mut()[c] = x0 + dx;
                let (g, _, o) = evaluate(&f, &work, opts.mode)?;
                Ok(g.value(o).item())
            };
            let mut error_at = |h: f64| -> Result<f64> {
                let numeric = if opts.fourth_order {
                    (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)
                } else {
                    (at(h)? - at(-h)?) / (2.0 * h)
                };
                Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denominator_floor))
            };
            let mut err = error_at(opts.eps)?;
            if opts.second_step {
                err = err.min(error_at(opts.eps / 10.0)?);
            }
            work[t].data_mut()[c] = x0;

            report.coordinates_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (t, c);
            }
        }
    }
    Ok(report)
}
