//! Central finite-difference verification of tape gradients.
//!
//! A loss builder closure receives a fresh tape plus leaf handles for a set
//! of input tensors and returns a scalar loss node. The checker compares the
//! tape's analytic gradients against central differences at step `h`,
//! element by element, and reports the worst relative error
//! `|a - f| / max(|a|, |f|, 1e-6)`.

use super::tape::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Relative disagreement between analytic and finite-difference values.
pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

fn eval_loss<F>(inputs: &[Tensor], build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).dim() != (1, 1) {
        return Err(Error::Parameter(
            "gradient check requires a scalar loss".into(),
        ));
    }
    Ok(tape.value(loss)[[0, 0]])
}

/// Worst relative error over every element of every input tensor.
pub fn max_rel_err_loss<F>(inputs: &[Tensor], h: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.get_or_zeros(id, t.dim()))
        .collect();

    // Finite differences, one element at a time.
    let mut worst: f64 = 0.0;
    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for ((i, j), _) in input.indexed_iter() {
            let orig = perturbed[k][[i, j]];
            perturbed[k][[i, j]] = orig + h;
            let up = eval_loss(&perturbed, &mut build)?;
            perturbed[k][[i, j]] = orig - h;
            let down = eval_loss(&perturbed, &mut build)?;
            perturbed[k][[i, j]] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k][[i, j]], fd));
        }
    }
    Ok(worst)
}
