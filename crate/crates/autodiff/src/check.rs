//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it shares no code with
//! the reverse sweep it is checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Step used by the central difference.
pub const DEFAULT_H: f64 = 1e-5;

/// Denominator floor: below this magnitude errors are judged absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// Worst `|a − n| / max(|a|, |n|, REL_FLOOR)` over all elements.
    pub max_rel_error: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.scalar(out))
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `h`, for every element of every input.
pub fn gradient_check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let inputs: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let analytic = g.grad(out, &vars)?;

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut worst: f64 = 0.0;
    let mut probe = inputs.clone();
    for i in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[i].len()];
        for k in 0..inputs[i].len() {
            let x = inputs[i].data[k];
            probe[i].data[k] = x + h;
            let up = evaluate(&f, &probe)?;
            probe[i].data[k] = x - h;
            let down = evaluate(&f, &probe)?;
            probe[i].data[k] = x;
            grad[k] = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i].data[k], grad[k]));
        }
        numeric.push(Tensor::new(inputs[i].shape.clone(), grad)?);
    }
    Ok(CheckReport {
        analytic,
        numeric,
        max_rel_error: worst,
    })
}
