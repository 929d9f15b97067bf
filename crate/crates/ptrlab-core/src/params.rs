//! Learnable parameters and their optimizer state.

use rand_distr::{Distribution, Normal};

use crate::network::{LayerSpec, Network};
use crate::rng::ChaCha8Rng;
use crate::tensor::Tensor;

/// A weights/biases pair; also used to carry the matching gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPair {
    pub weights: Tensor,
    pub biases: Tensor,
}

impl ParamPair {
    /// Zero-valued pair with the same shapes as `like`.
    pub fn zeros_like(like: &ParamPair) -> Self {
        Self {
            weights: Tensor::zeros(like.weights.shape().to_vec()),
            biases: Tensor::zeros(like.biases.shape().to_vec()),
        }
    }
}

/// Parameters plus momentum buffers for one learnable layer. The velocity
/// shapes always mirror the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub params: ParamPair,
    pub velocity: ParamPair,
}

/// Per-layer parameter gradients; `None` for layers without parameters or
/// layers a partial backward pass did not reach.
pub type Gradients = Vec<Option<ParamPair>>;

/// All learnable state of a network, indexed by layer. Non-learnable layers
/// hold `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub layers: Vec<Option<LayerState>>,
}

impl NetworkState {
    /// He-normal weight initialization with zero biases and zero velocities.
    ///
    /// Weights are drawn in layer order, row-major within each tensor, so a
    /// given generator state always produces the same parameters.
    pub fn init(net: &Network, rng: &mut ChaCha8Rng) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|layer| match *layer {
                LayerSpec::Dense { in_dim, out_dim } => Some(init_layer(
                    vec![out_dim, in_dim],
                    vec![out_dim],
                    in_dim,
                    rng,
                )),
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => Some(init_layer(
                    vec![out_ch, in_ch, kernel, kernel],
                    vec![out_ch],
                    in_ch * kernel * kernel,
                    rng,
                )),
                _ => None,
            })
            .collect();
        Self { layers }
    }

    /// The state slot of layer `i`, which must be learnable.
    pub fn layer(&self, i: usize) -> &LayerState {
        self.layers[i].as_ref().expect("layer has parameters")
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut LayerState {
        self.layers[i].as_mut().expect("layer has parameters")
    }

    /// Total number of learnable scalars.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|l| l.params.weights.len() + l.params.biases.len())
            .sum()
    }
}

fn init_layer(
    weight_shape: Vec<usize>,
    bias_shape: Vec<usize>,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> LayerState {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = weight_shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let params = ParamPair {
        weights: Tensor::new(weight_shape, data).expect("consistent init shape"),
        biases: Tensor::zeros(bias_shape),
    };
    let velocity = ParamPair::zeros_like(&params);
    LayerState { params, velocity }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::rng::{seeded_stream, streams};

    fn small_net() -> Network {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 3, out_dim: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 4, out_dim: 2 },
            ],
            rep_index: 1,
        };
        Network::new(spec, vec![3]).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let net = small_net();
        let a = NetworkState::init(&net, &mut seeded_stream(3, streams::INIT));
        let b = NetworkState::init(&net, &mut seeded_stream(3, streams::INIT));
        let c = NetworkState::init(&net, &mut seeded_stream(4, streams::INIT));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn velocities_mirror_parameter_shapes_and_biases_start_zero() {
        let net = small_net();
        let state = NetworkState::init(&net, &mut seeded_stream(0, streams::INIT));
        for layer in state.layers.iter().flatten() {
            assert_eq!(layer.velocity.weights.shape(), layer.params.weights.shape());
            assert_eq!(layer.velocity.biases.shape(), layer.params.biases.shape());
            assert!(layer.params.biases.data().iter().all(|&b| b == 0.0));
            assert!(layer.velocity.weights.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(state.n_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
