//! Architecture description and construction-time shape checking.
//!
//! A [`NetworkSpec`] is an ordered list of layer descriptors plus the index of
//! the representation layer: the layer whose output feeds the classifier
//! head. The head must be the final layer, must be dense, and must be the
//! only layer after the representation — it is the attachment point for the
//! cross-entropy objective, while the pseudo-task attaches at the
//! representation itself.
//!
//! [`Network::new`] type-checks the whole composition against a concrete
//! per-sample input shape, so the forward/backward passes can rely on
//! consistent dimensions without re-validating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer descriptor. Spatial layers use square kernels and take
/// channels-first (`C×H×W`) inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl LayerSpec {
    /// Short name used in error messages.
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "max_pool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Whether the layer carries learnable parameters.
    pub fn is_learnable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }
}

/// Serializable architecture: the layer list and the representation index.
/// The classifier head is the final entry of `layers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub rep_index: usize,
}

/// A validated architecture bound to a concrete input shape, with the
/// per-sample output shape of every layer resolved.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    input_shape: Vec<usize>,
    output_shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Validates the spec against a per-sample input shape (no batch axis).
    pub fn new(spec: NetworkSpec, input_shape: Vec<usize>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Spec(format!(
                "input shape must have positive dimensions, got {input_shape:?}"
            )));
        }
        if spec.layers.len() < 2 {
            return Err(Error::Spec(
                "a network needs at least a representation layer and a classifier head".into(),
            ));
        }
        if spec.rep_index + 2 != spec.layers.len() {
            return Err(Error::Spec(format!(
                "the classifier head must be the only layer after the representation: \
                 rep_index {} with {} layers",
                spec.rep_index,
                spec.layers.len()
            )));
        }
        if !matches!(spec.layers.last(), Some(LayerSpec::Dense { .. })) {
            return Err(Error::Spec("the classifier head must be a dense layer".into()));
        }

        let mut output_shapes = Vec::with_capacity(spec.layers.len());
        let mut cur = input_shape.clone();
        for (i, layer) in spec.layers.iter().enumerate() {
            cur = infer_output_shape(layer, &cur).map_err(|msg| {
                Error::Spec(format!("layer {i} ({}): {msg}", layer.kind()))
            })?;
            output_shapes.push(cur.clone());
        }
        // The head is dense, so the representation it consumes is 1-D by the
        // dense input rule checked above.
        Ok(Self {
            spec,
            input_shape,
            output_shapes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.spec.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.output_shapes[i]
    }

    pub fn rep_index(&self) -> usize {
        self.spec.rep_index
    }

    /// Index of the classifier head (always the last layer).
    pub fn head_index(&self) -> usize {
        self.spec.layers.len() - 1
    }

    /// Width of the representation vector.
    pub fn rep_dim(&self) -> usize {
        self.output_shapes[self.rep_index()][0]
    }

    pub fn n_classes(&self) -> usize {
        self.output_shapes[self.head_index()][0]
    }
}

/// Output shape of a single layer for the given per-sample input shape, or a
/// message describing the mismatch.
fn infer_output_shape(
    layer: &LayerSpec,
    input: &[usize],
) -> std::result::Result<Vec<usize>, String> {
    match *layer {
        LayerSpec::Dense { in_dim, out_dim } => {
            if in_dim == 0 || out_dim == 0 {
                return Err("dimensions must be positive".into());
            }
            if input != [in_dim] {
                return Err(format!(
                    "expected input shape [{in_dim}], got {input:?} (flatten first?)"
                ));
            }
            Ok(vec![out_dim])
        }
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => {
            if out_ch == 0 || kernel == 0 || stride == 0 {
                return Err("out_ch, kernel, and stride must be positive".into());
            }
            let [c, h, w] = spatial3(input)?;
            if c != in_ch {
                return Err(format!("expected {in_ch} input channels, got {c}"));
            }
            if h + 2 * padding < kernel || w + 2 * padding < kernel {
                return Err(format!(
                    "kernel {kernel} does not fit a padded {h}x{w} input"
                ));
            }
            let oh = (h + 2 * padding - kernel) / stride + 1;
            let ow = (w + 2 * padding - kernel) / stride + 1;
            Ok(vec![out_ch, oh, ow])
        }
        LayerSpec::MaxPool2d { kernel, stride } => {
            if kernel == 0 || stride == 0 {
                return Err("kernel and stride must be positive".into());
            }
            let [c, h, w] = spatial3(input)?;
            if h < kernel || w < kernel {
                return Err(format!("kernel {kernel} does not fit a {h}x{w} input"));
            }
            Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        LayerSpec::Relu => Ok(input.to_vec()),
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(format!("rate must lie in [0, 1), got {rate}"));
            }
            Ok(input.to_vec())
        }
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
    }
}

fn spatial3(input: &[usize]) -> std::result::Result<[usize; 3], String> {
    match *input {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(format!("expected a C×H×W input, got {input:?}")),
    }
}
