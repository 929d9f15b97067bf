//! Softmax cross-entropy in the per-instance convention.
//!
//! Losses and gradients are returned per instance; any batch-mean scaling is
//! applied exactly once by the caller. The implementation is numerically
//! stable (log-sum-exp with the row maximum subtracted), so saturated logits
//! neither overflow nor lose the gradient's structure.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-instance cross-entropy losses and logit gradients for a
/// `[batch, n_classes]` tensor: `loss_i = -log softmax(z_i)[y_i]` and
/// `grad_i = softmax(z_i) - one_hot(y_i)`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, Tensor)> {
    let batch = logits.shape()[0];
    let k = logits.row_len();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut losses = Vec::with_capacity(batch);
    let mut grad = vec![0.0; batch * k];
    for (bi, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, n_classes: k });
        }
        let row = logits.row(bi);
        let max = row_max(row);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        // Grouped so the shift cancels before rounding: uniform logits cost
        // exactly ln K regardless of the common value.
        losses.push(sum_exp.ln() - (row[label] - max));
        let grow = &mut grad[bi * k..(bi + 1) * k];
        for (j, &z) in row.iter().enumerate() {
            grow[j] = (z - max).exp() / sum_exp;
        }
        grow[label] -= 1.0;
    }
    let grad = Tensor::new(vec![batch, k], grad).expect("gradient shape");
    Ok((losses, grad))
}

/// Row-wise softmax probabilities of a `[batch, n_classes]` tensor.
pub fn softmax_probs(logits: &Tensor) -> Tensor {
    let batch = logits.shape()[0];
    let k = logits.row_len();
    let mut probs = vec![0.0; batch * k];
    for bi in 0..batch {
        let row = logits.row(bi);
        let max = row_max(row);
        let out = &mut probs[bi * k..(bi + 1) * k];
        let mut sum = 0.0;
        for (j, &z) in row.iter().enumerate() {
            out[j] = (z - max).exp();
            sum += out[j];
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(vec![batch, k], probs).expect("probability shape")
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
