//! Flat binary parameter checkpoints.
//!
//! Layout: a header listing the learnable layers and their tensor shapes,
//! followed by the raw parameter data. All integers are little-endian `u32`
//! and all parameter values little-endian `f64`, row-major:
//!
//! ```text
//! u32 n_entries
//! n_entries × { u32 layer_index,
//!               u32 w_ndim, w_ndim × u32 dims,
//!               u32 b_ndim, b_ndim × u32 dims }
//! then, in the same order: weights f64..., biases f64...
//! ```
//!
//! Checkpoints hold parameters only; optimizer velocities are reset to zero
//! on load. Loading validates the header against the target network and
//! rejects truncated or oversized files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::params::{LayerState, NetworkState, ParamPair};
use crate::tensor::Tensor;

/// Serializes the learnable parameters of `state` into checkpoint bytes.
pub fn encode(state: &NetworkState) -> Vec<u8> {
    let entries: Vec<(usize, &LayerState)> = state
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| slot.as_ref().map(|l| (i, l)))
        .collect();

    let mut bytes = Vec::new();
    push_u32(&mut bytes, entries.len() as u32);
    for (i, layer) in &entries {
        push_u32(&mut bytes, *i as u32);
        push_shape(&mut bytes, layer.params.weights.shape());
        push_shape(&mut bytes, layer.params.biases.shape());
    }
    for (_, layer) in &entries {
        for &v in layer.params.weights.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &v in layer.params.biases.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Reconstructs a [`NetworkState`] (with zeroed velocities) from checkpoint
/// bytes, validating every shape against `net`.
pub fn decode(bytes: &[u8], net: &Network) -> Result<NetworkState> {
    let mut pos = 0usize;
    let n_entries = read_u32(bytes, &mut pos, "entry count")? as usize;

    let expected: Vec<usize> = (0..net.layers().len())
        .filter(|&i| net.layers()[i].is_learnable())
        .collect();
    if n_entries != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {n_entries} learnable layers, network has {}",
            expected.len()
        )));
    }

    let mut headers = Vec::with_capacity(n_entries);
    for &want_index in &expected {
        let index = read_u32(bytes, &mut pos, "layer index")? as usize;
        if index != want_index {
            return Err(Error::Format(format!(
                "checkpoint layer index {index} does not match network layer {want_index}"
            )));
        }
        let w_shape = read_shape(bytes, &mut pos)?;
        let b_shape = read_shape(bytes, &mut pos)?;
        headers.push((index, w_shape, b_shape));
    }

    let mut layers: Vec<Option<LayerState>> = vec![None; net.layers().len()];
    for (index, w_shape, b_shape) in headers {
        let (w_want, b_want) = parameter_shapes(&net.layers()[index]);
        if w_shape != w_want || b_shape != b_want {
            return Err(Error::Format(format!(
                "layer {index} shapes {w_shape:?}/{b_shape:?} do not match network \
                 {w_want:?}/{b_want:?}"
            )));
        }
        let weights = read_tensor(bytes, &mut pos, w_shape)?;
        let biases = read_tensor(bytes, &mut pos, b_shape)?;
        let params = ParamPair { weights, biases };
        let velocity = ParamPair::zeros_like(&params);
        layers[index] = Some(LayerState { params, velocity });
    }

    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(NetworkState { layers })
}

/// Writes a checkpoint file for the network's current parameters.
pub fn save_checkpoint(path: &Path, state: &NetworkState) -> Result<()> {
    fs::write(path, encode(state))?;
    Ok(())
}

/// Loads a checkpoint file, validating it against `net`.
pub fn load_checkpoint(path: &Path, net: &Network) -> Result<NetworkState> {
    let bytes = fs::read(path)?;
    decode(&bytes, net).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parameter_shapes(layer: &crate::network::LayerSpec) -> (Vec<usize>, Vec<usize>) {
    use crate::network::LayerSpec::*;
    match *layer {
        Dense { in_dim, out_dim } => (vec![out_dim, in_dim], vec![out_dim]),
        Conv2d { in_ch, out_ch, kernel, .. } => {
            (vec![out_ch, in_ch, kernel, kernel], vec![out_ch])
        }
        _ => unreachable!("only learnable layers carry parameters"),
    }
}

fn push_u32(bytes: &mut Vec<u8>, v: u32) {
    bytes.extend_from_slice(&v.to_le_bytes());
}

fn push_shape(bytes: &mut Vec<u8>, shape: &[usize]) {
    push_u32(bytes, shape.len() as u32);
    for &d in shape {
        push_u32(bytes, d as u32);
    }
}

fn read_u32(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let end = *pos + 4;
    let slice = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
    *pos = end;
    Ok(u32::from_le_bytes(slice.try_into().expect("4-byte slice")))
}

fn read_shape(bytes: &[u8], pos: &mut usize) -> Result<Vec<usize>> {
    let ndim = read_u32(bytes, pos, "shape rank")? as usize;
    (0..ndim)
        .map(|_| read_u32(bytes, pos, "shape dimension").map(|d| d as usize))
        .collect()
}

fn read_tensor(bytes: &[u8], pos: &mut usize, shape: Vec<usize>) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let end = *pos + 8 * n;
    let slice = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Format("checkpoint truncated while reading parameters".into()))?;
    *pos = end;
    let data: Vec<f64> = slice
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, NetworkSpec};
    use crate::rng::{seeded_stream, streams};

    fn net() -> Network {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Conv2d { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 2 * 4 * 4, out_dim: 6 },
                LayerSpec::Dense { in_dim: 6, out_dim: 3 },
            ],
            rep_index: 3,
        };
        Network::new(spec, vec![1, 4, 4]).unwrap()
    }

    #[test]
    fn encode_decode_round_trips_parameters_exactly() {
        let net = net();
        let state = NetworkState::init(&net, &mut seeded_stream(11, streams::INIT));
        let bytes = encode(&state);
        let back = decode(&bytes, &net).unwrap();
        for (a, b) in state.layers.iter().zip(&back.layers) {
            match (a, b) {
                (Some(x), Some(y)) => {
                    assert_eq!(x.params, y.params);
                    assert!(y.velocity.weights.data().iter().all(|&v| v == 0.0));
                }
                (None, None) => {}
                _ => panic!("layer slots diverged"),
            }
        }
    }

    #[test]
    fn truncated_and_padded_files_are_rejected() {
        let net = net();
        let state = NetworkState::init(&net, &mut seeded_stream(11, streams::INIT));
        let bytes = encode(&state);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], &net),
            Err(Error::Format(_))
        ));
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(matches!(decode(&padded, &net), Err(Error::Format(_))));
    }

    #[test]
    fn shape_mismatch_against_a_different_network_is_rejected() {
        let net = net();
        let state = NetworkState::init(&net, &mut seeded_stream(11, streams::INIT));
        let bytes = encode(&state);
        let other_spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 6 },
                LayerSpec::Dense { in_dim: 6, out_dim: 3 },
            ],
            rep_index: 0,
        };
        let other = Network::new(other_spec, vec![4]).unwrap();
        assert!(matches!(decode(&bytes, &other), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip_is_byte_stable() {
        let net = net();
        let state = NetworkState::init(&net, &mut seeded_stream(11, streams::INIT));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        save_checkpoint(&path, &state).unwrap();
        let first = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &state).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        let back = load_checkpoint(&path, &net).unwrap();
        assert_eq!(encode(&back), first);
    }
}
