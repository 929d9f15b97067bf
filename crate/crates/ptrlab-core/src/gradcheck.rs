//! Finite-difference validation of the analytic gradients.
//!
//! For every learnable parameter the checker compares the analytic gradient
//! of a scalar objective against a central difference, and reports the worst
//! mixed relative error `|a - n| / (1 + |a| + |n|)` — absolute near zero,
//! relative for large values. Evaluation runs in eval mode, so dropout is
//! inactive and the comparison is deterministic.

use crate::backward::{backward_from_rep, dense_backward};
use crate::error::{Error, Result};
use crate::forward::{forward, Mode};
use crate::loss::softmax_cross_entropy;
use crate::network::Network;
use crate::params::{Gradients, NetworkState, ParamPair};
use crate::tensor::Tensor;

/// Scalar training objective evaluated on the logits.
pub enum Objective<'a> {
    /// Batch mean of the per-instance cross-entropy losses.
    MeanCrossEntropy { labels: &'a [usize] },
    /// Batch mean of `½‖logits‖²`; quadratic in the logits, so central
    /// differences on a linear network are exact up to rounding.
    HalfSumSquares,
}

/// Objective value at the current parameters.
pub fn objective_value(
    net: &Network,
    state: &NetworkState,
    batch: &Tensor,
    objective: &Objective<'_>,
) -> Result<f64> {
    let trace = forward(net, state, batch, Mode::Eval)?;
    let logits = trace.logits();
    let b = logits.shape()[0] as f64;
    match objective {
        Objective::MeanCrossEntropy { labels } => {
            let (losses, _) = softmax_cross_entropy(logits, labels)?;
            Ok(losses.iter().sum::<f64>() / b)
        }
        Objective::HalfSumSquares => {
            Ok(logits.data().iter().map(|v| 0.5 * v * v).sum::<f64>() / b)
        }
    }
}

/// Analytic gradients of the objective for every learnable layer, head
/// included.
pub fn objective_gradients(
    net: &Network,
    state: &NetworkState,
    batch: &Tensor,
    objective: &Objective<'_>,
) -> Result<Gradients> {
    let trace = forward(net, state, batch, Mode::Eval)?;
    let logits = trace.logits();
    let b = logits.shape()[0] as f64;
    let grad_logits = match objective {
        Objective::MeanCrossEntropy { labels } => softmax_cross_entropy(logits, labels)?.1,
        Objective::HalfSumSquares => logits.clone(),
    };
    let grad_logits = grad_logits.map(|g| g / b);

    let head = net.head_index();
    let head_weights = &state.layer(head).params.weights;
    let (dw, db, grad_at_rep) = dense_backward(head_weights, trace.rep(), &grad_logits);
    let mut grads = backward_from_rep(net, state, &trace, &grad_at_rep)?;
    grads[head] = Some(ParamPair { weights: dw, biases: db });
    Ok(grads)
}

/// Worst mixed relative error between analytic gradients and central finite
/// differences over all parameters. `epsilon` must lie in `(0, 1e-2]`.
pub fn finite_difference_check(
    net: &Network,
    state: &mut NetworkState,
    batch: &Tensor,
    objective: &Objective<'_>,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let analytic = objective_gradients(net, state, batch, objective)?;
    let mut worst = 0.0_f64;
    for (i, slot) in analytic.iter().enumerate() {
        if state.layers[i].is_none() {
            continue;
        }
        let Some(pair) = slot.as_ref() else { continue };
        for use_bias in [false, true] {
            let n = if use_bias { pair.biases.len() } else { pair.weights.len() };
            for j in 0..n {
                let a = if use_bias {
                    pair.biases.data()[j]
                } else {
                    pair.weights.data()[j]
                };
                let original = read_param(state, i, use_bias, j);
                write_param(state, i, use_bias, j, original + epsilon);
                let plus = objective_value(net, state, batch, objective)?;
                write_param(state, i, use_bias, j, original - epsilon);
                let minus = objective_value(net, state, batch, objective)?;
                write_param(state, i, use_bias, j, original);
                let numeric = (plus - minus) / (2.0 * epsilon);
                let err = (a - numeric).abs() / (1.0 + a.abs() + numeric.abs());
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

fn read_param(state: &NetworkState, layer: usize, bias: bool, j: usize) -> f64 {
    let p = &state.layer(layer).params;
    if bias { p.biases.data()[j] } else { p.weights.data()[j] }
}

fn write_param(state: &mut NetworkState, layer: usize, bias: bool, j: usize, v: f64) {
    let p = &mut state.layer_mut(layer).params;
    if bias {
        p.biases.data_mut()[j] = v;
    } else {
        p.weights.data_mut()[j] = v;
    }
}
