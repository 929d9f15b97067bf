//! Batched forward evaluation with a full activation trace.
//!
//! The forward pass records the input of every layer (and the dropout masks
//! it drew), which is exactly what the backward pass needs to apply the chain
//! rule without re-running anything. Dropout follows the inverted convention:
//! surviving activations are scaled by `1/(1-rate)` at train time and the
//! layer is the identity at eval time.

use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network};
use crate::params::NetworkState;
use crate::rng::ChaCha8Rng;
use crate::tensor::Tensor;

use rand::Rng;

/// Whether dropout is active; train mode borrows the generator that feeds
/// the masks.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Everything the forward pass saw: `activations[0]` is the input batch and
/// `activations[i + 1]` is the output of layer `i`. Re-running the same
/// parameters, inputs, and dropout masks reproduces the trace exactly.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub activations: Vec<Tensor>,
    pub dropout_masks: Vec<Option<Tensor>>,
    /// Per-instance cross-entropy losses; filled in by the training step
    /// once labels are known, empty until then.
    pub ce_per_instance: Vec<f64>,
    rep_index: usize,
}

impl BatchTrace {
    /// Output of the representation layer, `batch × rep_dim`.
    pub fn rep(&self) -> &Tensor {
        &self.activations[self.rep_index + 1]
    }

    /// Output of the classifier head, `batch × n_classes`.
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].shape()[0]
    }
}

/// Runs the network over a `[batch, ...input]` tensor and returns the trace.
pub fn forward(
    net: &Network,
    state: &NetworkState,
    batch: &Tensor,
    mode: Mode<'_>,
) -> Result<BatchTrace> {
    let shape = batch.shape();
    if shape.len() != net.input_shape().len() + 1 || &shape[1..] != net.input_shape() {
        return Err(Error::Shape(format!(
            "batch shape {:?} does not match input shape {:?} plus a batch axis",
            shape,
            net.input_shape()
        )));
    }

    let mut mode = mode;
    let mut activations = Vec::with_capacity(net.layers().len() + 1);
    let mut dropout_masks = vec![None; net.layers().len()];
    activations.push(batch.clone());

    for (i, layer) in net.layers().iter().enumerate() {
        let x = &activations[i];
        let y = match *layer {
            LayerSpec::Dense { .. } => {
                let ls = state.layer(i);
                dense_forward(x, &ls.params.weights, &ls.params.biases)
            }
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let ls = state.layer(i);
                conv2d_forward(x, &ls.params.weights, &ls.params.biases, stride, padding)
            }
            LayerSpec::MaxPool2d { kernel, stride } => maxpool_forward(x, kernel, stride),
            LayerSpec::Relu => x.map(|v| v.max(0.0)),
            LayerSpec::Dropout { rate } => {
                let (y, mask) = dropout_forward(x, rate, &mut mode);
                dropout_masks[i] = mask;
                y
            }
            LayerSpec::Flatten => {
                let b = x.shape()[0];
                let n = x.row_len();
                x.clone().reshape(vec![b, n])?
            }
        };
        activations.push(y);
    }

    Ok(BatchTrace {
        activations,
        dropout_masks,
        ce_per_instance: Vec::new(),
        rep_index: net.rep_index(),
    })
}

/// `y = W x + b` over a `[batch, in]` input with `W: [out, in]`.
pub(crate) fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let batch = x.shape()[0];
    let out_dim = w.shape()[0];
    let in_dim = w.shape()[1];
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = vec![0.0; batch * out_dim];
    for bi in 0..batch {
        let xrow = &xd[bi * in_dim..(bi + 1) * in_dim];
        let yrow = &mut y[bi * out_dim..(bi + 1) * out_dim];
        for (o, yo) in yrow.iter_mut().enumerate() {
            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = bd[o];
            for (wv, xv) in wrow.iter().zip(xrow) {
                acc += wv * xv;
            }
            *yo = acc;
        }
    }
    Tensor::new(vec![batch, out_dim], y).expect("dense output shape")
}

/// Square-kernel convolution with zero padding and floor output sizing.
pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Tensor {
    let [batch, cin, h, wid] = dims4(x.shape());
    let cout = w.shape()[0];
    let k = w.shape()[2];
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (wid + 2 * padding - k) / stride + 1;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut y = vec![0.0; batch * cout * oh * ow];
    for bi in 0..batch {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            // Input row for this kernel row; skip rows that
                            // fall into the zero padding.
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                let xi = ((bi * cin + ci) * h + iy as usize) * wid + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                acc += xd[xi] * wd[wi];
                            }
                        }
                    }
                    y[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![batch, cout, oh, ow], y).expect("conv output shape")
}

/// Unpadded max pooling; ties go to the first element in scan order, which
/// the backward pass reproduces when routing gradients.
pub(crate) fn maxpool_forward(x: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let [batch, c, h, wid] = dims4(x.shape());
    let oh = (h - kernel) / stride + 1;
    let ow = (wid - kernel) / stride + 1;
    let xd = x.data();
    let mut y = vec![0.0; batch * c * oh * ow];
    for bi in 0..batch {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let xi = ((bi * c + ci) * h + oy * stride + ky) * wid
                                + ox * stride
                                + kx;
                            if xd[xi] > best {
                                best = xd[xi];
                            }
                        }
                    }
                    y[((bi * c + ci) * oh + oy) * ow + ox] = best;
                }
            }
        }
    }
    Tensor::new(vec![batch, c, oh, ow], y).expect("pool output shape")
}

fn dropout_forward(x: &Tensor, rate: f64, mode: &mut Mode<'_>) -> (Tensor, Option<Tensor>) {
    match mode {
        Mode::Eval => (x.clone(), None),
        Mode::Train(rng) => {
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = x
                .data()
                .iter()
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let mask = Tensor::new(x.shape().to_vec(), mask).expect("mask shape");
            let y = Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(mask.data())
                    .map(|(v, m)| v * m)
                    .collect(),
            )
            .expect("dropout output shape");
            (y, Some(mask))
        }
    }
}

pub(crate) fn dims4(shape: &[usize]) -> [usize; 4] {
    match *shape {
        [a, b, c, d] => [a, b, c, d],
        _ => panic!("expected a 4-D tensor, got shape {shape:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::rng::{seeded_stream, streams};

    fn identity_dense_net() -> (Network, NetworkState) {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 3, out_dim: 3 },
                LayerSpec::Dense { in_dim: 3, out_dim: 2 },
            ],
            rep_index: 0,
        };
        let net = Network::new(spec, vec![3]).unwrap();
        let mut state = NetworkState::init(&net, &mut seeded_stream(0, streams::INIT));
        let w = state.layer_mut(0);
        w.params.weights = Tensor::new(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        w.params.biases = Tensor::zeros(vec![3]);
        (net, state)
    }

    #[test]
    fn identity_dense_layer_passes_input_through_to_rep() {
        let (net, state) = identity_dense_net();
        let batch = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        let trace = forward(&net, &state, &batch, Mode::Eval).unwrap();
        assert_eq!(trace.rep(), &batch);
    }

    #[test]
    fn all_zero_weights_give_all_zero_logits() {
        let (net, mut state) = identity_dense_net();
        for layer in state.layers.iter_mut().flatten() {
            layer.params.weights = Tensor::zeros(layer.params.weights.shape().to_vec());
            layer.params.biases = Tensor::zeros(layer.params.biases.shape().to_vec());
        }
        let batch = Tensor::new(vec![1, 3], vec![4.0, -5.0, 6.0]).unwrap();
        let trace = forward(&net, &state, &batch, Mode::Eval).unwrap();
        assert!(trace.logits().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_conv_multiplies_by_the_kernel() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 1, kernel: 1, stride: 1, padding: 0 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 1, out_dim: 2 },
            ],
            rep_index: 1,
        };
        let net = Network::new(spec, vec![1, 1, 1]).unwrap();
        let mut state = NetworkState::init(&net, &mut seeded_stream(0, streams::INIT));
        state.layer_mut(0).params.weights = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        state.layer_mut(0).params.biases = Tensor::zeros(vec![1]);
        let batch = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let trace = forward(&net, &state, &batch, Mode::Eval).unwrap();
        assert_eq!(trace.activations[1].data(), &[6.0]);
    }

    #[test]
    fn forward_is_deterministic_under_a_fixed_dropout_seed() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 3, out_dim: 8 },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 8, out_dim: 2 },
            ],
            rep_index: 2,
        };
        let net = Network::new(spec, vec![3]).unwrap();
        let state = NetworkState::init(&net, &mut seeded_stream(1, streams::INIT));
        let batch = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.1, -0.2, -0.3]).unwrap();
        let a = forward(
            &net,
            &state,
            &batch,
            Mode::Train(&mut seeded_stream(9, streams::DROPOUT)),
        )
        .unwrap();
        let b = forward(
            &net,
            &state,
            &batch,
            Mode::Train(&mut seeded_stream(9, streams::DROPOUT)),
        )
        .unwrap();
        for (x, y) in a.activations.iter().zip(&b.activations) {
            assert_eq!(x, y);
        }
        assert_eq!(a.dropout_masks[1], b.dropout_masks[1]);
    }

    #[test]
    fn dropout_is_identity_at_eval_time() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dropout { rate: 0.9 },
                LayerSpec::Dense { in_dim: 3, out_dim: 3 },
                LayerSpec::Dense { in_dim: 3, out_dim: 2 },
            ],
            rep_index: 1,
        };
        let net = Network::new(spec, vec![3]).unwrap();
        let state = NetworkState::init(&net, &mut seeded_stream(1, streams::INIT));
        let batch = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let trace = forward(&net, &state, &batch, Mode::Eval).unwrap();
        assert_eq!(trace.activations[1], batch);
        assert!(trace.dropout_masks[0].is_none());
    }

    #[test]
    fn batch_shape_mismatch_is_reported() {
        let (net, state) = identity_dense_net();
        let batch = Tensor::new(vec![2, 4], vec![0.0; 8]).unwrap();
        assert!(matches!(
            forward(&net, &state, &batch, Mode::Eval),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn maxpool_takes_window_maxima() {
        let x = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 4.0, 4.0],
        )
        .unwrap();
        let y = maxpool_forward(&x, 2, 2);
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5.0, 4.0]);
    }
}
