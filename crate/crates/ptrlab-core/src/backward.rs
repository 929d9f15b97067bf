//! Chain-rule backward passes.
//!
//! The central entry point is [`backward_from_rep`]: it takes an arbitrary
//! gradient at the representation layer and propagates it down through the
//! backbone, producing parameter gradients for every layer at or before the
//! representation. The classifier head is deliberately not touched here — its
//! gradients come only from the cross-entropy path and are computed by the
//! caller with [`dense_backward`], so a gradient injected at the
//! representation can never leak into the head.

use crate::error::{Error, Result};
use crate::forward::{dims4, BatchTrace};
use crate::network::{LayerSpec, Network};
use crate::params::{Gradients, NetworkState, ParamPair};
use crate::tensor::Tensor;

/// Propagates `grad_at_rep` (shaped like the representation output,
/// `[batch, rep_dim]`) back to the network input, returning parameter
/// gradients for layers `0..=rep_index`. Entries for the head and for
/// non-learnable layers are `None`.
pub fn backward_from_rep(
    net: &Network,
    state: &NetworkState,
    trace: &BatchTrace,
    grad_at_rep: &Tensor,
) -> Result<Gradients> {
    if grad_at_rep.shape() != trace.rep().shape() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match representation shape {:?}",
            grad_at_rep.shape(),
            trace.rep().shape()
        )));
    }

    let mut grads: Gradients = vec![None; net.layers().len()];
    let mut g = grad_at_rep.clone();
    for i in (0..=net.rep_index()).rev() {
        let input = &trace.activations[i];
        g = match net.layers()[i] {
            LayerSpec::Dense { .. } => {
                let ls = state.layer(i);
                let (dw, db, gin) = dense_backward(&ls.params.weights, input, &g);
                grads[i] = Some(ParamPair { weights: dw, biases: db });
                gin
            }
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let ls = state.layer(i);
                let (dw, db, gin) = conv2d_backward(&ls.params.weights, input, &g, stride, padding);
                grads[i] = Some(ParamPair { weights: dw, biases: db });
                gin
            }
            LayerSpec::MaxPool2d { kernel, stride } => {
                maxpool_backward(input, &g, kernel, stride)
            }
            // Subgradient 0 at exactly 0: only strictly positive inputs pass.
            LayerSpec::Relu => Tensor::new(
                input.shape().to_vec(),
                input
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect(),
            )?,
            LayerSpec::Dropout { .. } => match &trace.dropout_masks[i] {
                Some(mask) => Tensor::new(
                    input.shape().to_vec(),
                    mask.data()
                        .iter()
                        .zip(g.data())
                        .map(|(m, gv)| m * gv)
                        .collect(),
                )?,
                // Eval-mode trace: dropout was the identity.
                None => g,
            },
            LayerSpec::Flatten => g.reshape(input.shape().to_vec())?,
        };
    }
    Ok(grads)
}

/// Gradients of a dense layer: `dW = gᵀ x` summed over the batch,
/// `db = Σ g`, and the input gradient `g W`. The caller owns any batch-mean
/// scaling; this routine just sums.
pub fn dense_backward(w: &Tensor, x: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let batch = x.shape()[0];
    let out_dim = w.shape()[0];
    let in_dim = w.shape()[1];
    let (wd, xd, gd) = (w.data(), x.data(), grad_out.data());
    let mut dw = vec![0.0; out_dim * in_dim];
    let mut db = vec![0.0; out_dim];
    let mut gin = vec![0.0; batch * in_dim];
    for bi in 0..batch {
        let xrow = &xd[bi * in_dim..(bi + 1) * in_dim];
        let grow = &gd[bi * out_dim..(bi + 1) * out_dim];
        let girow = &mut gin[bi * in_dim..(bi + 1) * in_dim];
        for (o, &gv) in grow.iter().enumerate() {
            db[o] += gv;
            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
            let dwrow = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwrow[i] += gv * xrow[i];
                girow[i] += gv * wrow[i];
            }
        }
    }
    (
        Tensor::new(vec![out_dim, in_dim], dw).expect("dW shape"),
        Tensor::new(vec![out_dim], db).expect("db shape"),
        Tensor::new(vec![batch, in_dim], gin).expect("input gradient shape"),
    )
}

fn conv2d_backward(
    w: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let [batch, cin, h, wid] = dims4(x.shape());
    let [_, cout, oh, ow] = dims4(grad_out.shape());
    let k = w.shape()[2];
    let (wd, xd, gd) = (w.data(), x.data(), grad_out.data());
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    let mut gin = vec![0.0; x.len()];
    for bi in 0..batch {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = gd[((bi * cout + co) * oh + oy) * ow + ox];
                    db[co] += gv;
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                let xi =
                                    ((bi * cin + ci) * h + iy as usize) * wid + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                dw[wi] += gv * xd[xi];
                                gin[xi] += gv * wd[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(w.shape().to_vec(), dw).expect("dW shape"),
        Tensor::new(vec![cout], db).expect("db shape"),
        Tensor::new(x.shape().to_vec(), gin).expect("input gradient shape"),
    )
}

/// Routes each output gradient to the first maximum of its pooling window,
/// mirroring the scan order of the forward pass, so the selected element of
/// every window receives exactly the window's gradient mass.
pub fn maxpool_backward(x: &Tensor, grad_out: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let [batch, c, h, wid] = dims4(x.shape());
    let [_, _, oh, ow] = dims4(grad_out.shape());
    let (xd, gd) = (x.data(), grad_out.data());
    let mut gin = vec![0.0; x.len()];
    for bi in 0..batch {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_xi = 0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let xi = ((bi * c + ci) * h + oy * stride + ky) * wid
                                + ox * stride
                                + kx;
                            if xd[xi] > best {
                                best = xd[xi];
                                best_xi = xi;
                            }
                        }
                    }
                    gin[best_xi] += gd[((bi * c + ci) * oh + oy) * ow + ox];
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), gin).expect("input gradient shape")
}
