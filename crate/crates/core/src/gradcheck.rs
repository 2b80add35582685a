//! Central finite differences for checking analytic gradients.
//!
//! The numeric side only ever evaluates forward passes, so it shares no code
//! path with [`Tape::backward`](crate::tensor::Tape::backward).

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Denominator floor of [`relative_error`]: below this magnitude errors are
/// measured absolutely.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Outcome of [`check`]: worst relative error per input, plus the element
/// counts compared and skipped.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: Vec<f64>,
    pub compared: usize,
    /// Perturbations that moved some rectifier input across zero (only
    /// counted by [`check_piecewise`]).
    pub skipped: usize,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Compare analytic and numeric gradients of the scalar produced by `build`
/// with respect to every tensor in `inputs`.
///
/// `skip(input, element, value)` excludes elements (kinks of piecewise ops).
pub fn check<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    build: F,
    skip: impl Fn(usize, usize, f64) -> bool,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    run(inputs, step, &build, &skip, false)
}

/// Like [`check`], but a perturbation is skipped when either side of the
/// central difference lands on a different linear piece of a rectifier than
/// the unperturbed point; the difference quotient means nothing there.
///
/// With `per_input = Some(m)` only `m` evenly spaced elements of each larger
/// input are probed.
pub fn check_piecewise<F>(inputs: &[Tensor<f64>], step: f64, per_input: Option<usize>, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let skip = move |k: usize, i: usize, _: f64| match per_input {
        Some(m) if sizes[k] > m => {
            let stride = sizes[k] / m;
            i % stride != 0 || i / stride >= m
        }
        _ => false,
    };
    run(inputs, step, &build, &skip, true)
}

fn run<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    build: &F,
    skip: &dyn Fn(usize, usize, f64) -> bool,
    piecewise: bool,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars)?;
        let pattern = if piecewise { tape.kink_pattern() } else { Vec::new() };
        Ok((tape.value(out).item(), pattern))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let base = if piecewise { tape.kink_pattern() } else { Vec::new() };

    let mut report = GradReport { max_rel_error: Vec::new(), compared: 0, skipped: 0 };
    let mut perturbed = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let mut worst = 0.0f64;
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            if skip(k, i, x0) {
                continue;
            }
            perturbed[k].data_mut()[i] = x0 + step;
            let (up, up_pattern) = eval(&perturbed)?;
            perturbed[k].data_mut()[i] = x0 - step;
            let (down, down_pattern) = eval(&perturbed)?;
            perturbed[k].data_mut()[i] = x0;
            if up_pattern != base || down_pattern != base {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
            report.compared += 1;
        }
        report.max_rel_error.push(worst);
    }
    Ok(report)
}
