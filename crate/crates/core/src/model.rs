//! Layer-wise model description, weights and dense FLOPs accounting.
//!
//! FLOPs are counted as multiply-accumulate operations (MACs). Bias,
//! activation and pooling work is not counted.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    FullyConnected,
    Conv,
    PointwiseConv,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        !matches!(self, LayerKind::FullyConnected)
    }
}

fn one() -> usize {
    1
}

/// One layer of a sequential network. `m` is the output channel count, `n`
/// the input channel count and `k` the (square) kernel size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(skip)]
    pub id: usize,
    pub kind: LayerKind,
    pub m: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub h_in: usize,
    #[serde(default)]
    pub w_in: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub has_relu: bool,
}

impl LayerSpec {
    pub fn fully_connected(m: usize, n: usize, has_relu: bool) -> Self {
        LayerSpec {
            id: 0,
            kind: LayerKind::FullyConnected,
            m,
            n,
            k: 1,
            h_in: 0,
            w_in: 0,
            stride: 1,
            padding: 0,
            has_relu,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        m: usize,
        n: usize,
        k: usize,
        h_in: usize,
        w_in: usize,
        stride: usize,
        padding: usize,
        has_relu: bool,
    ) -> Self {
        LayerSpec {
            id: 0,
            kind: LayerKind::Conv,
            m,
            n,
            k,
            h_in,
            w_in,
            stride,
            padding,
            has_relu,
        }
    }

    pub fn pointwise(m: usize, n: usize, h_in: usize, w_in: usize, stride: usize, has_relu: bool) -> Self {
        LayerSpec {
            kind: LayerKind::PointwiseConv,
            ..LayerSpec::conv(m, n, 1, h_in, w_in, stride, 0, has_relu)
        }
    }

    /// Number of weight entries: `m·n` or `m·n·k·k`.
    pub fn weight_len(&self) -> usize {
        self.m * self.n * self.k * self.k
    }

    /// Candidate for SVD rank genes (fully connected and 1×1 convolutions).
    pub fn is_svd_target(&self) -> bool {
        matches!(self.kind, LayerKind::FullyConnected | LayerKind::PointwiseConv)
    }

    /// Candidate for Tucker-2 rank genes (convolutions with k > 1).
    pub fn is_tucker_target(&self) -> bool {
        self.kind == LayerKind::Conv && self.k > 1
    }

    /// Number of output positions each output channel is computed at.
    pub fn output_positions(&self) -> Result<usize> {
        if self.kind.is_conv() {
            let (h, w) = output_spatial(self)?;
            Ok(h * w)
        } else {
            Ok(1)
        }
    }

    /// Number of input positions (`h_in·w_in` for convolutions, 1 otherwise).
    pub fn input_positions(&self) -> usize {
        if self.kind.is_conv() {
            self.h_in * self.w_in
        } else {
            1
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidModel(format!("layer {}: {what}", self.id)));
        if self.m == 0 || self.n == 0 || self.k == 0 || self.stride == 0 {
            return bad("m, n, k and stride must be positive");
        }
        match self.kind {
            LayerKind::FullyConnected => {
                if self.k != 1 || self.h_in != 0 || self.w_in != 0 {
                    return bad("fully_connected requires k=1 and h_in=w_in=0");
                }
            }
            LayerKind::PointwiseConv | LayerKind::Conv => {
                if self.kind == LayerKind::PointwiseConv && self.k != 1 {
                    return bad("pointwise_conv requires k=1");
                }
                if self.h_in == 0 || self.w_in == 0 {
                    return bad("convolution requires positive h_in and w_in");
                }
                output_spatial(self)?;
            }
        }
        Ok(())
    }
}

/// Output height and width of a convolution:
/// `floor((in + 2·padding − k) / stride) + 1` per axis.
pub fn output_spatial(layer: &LayerSpec) -> Result<(usize, usize)> {
    let axis = |input: usize| {
        let padded = input + 2 * layer.padding;
        if layer.k > padded {
            Err(Error::KernelTooLarge {
                layer: layer.id,
                kernel: layer.k,
                padded,
            })
        } else {
            Ok((padded - layer.k) / layer.stride + 1)
        }
    };
    Ok((axis(layer.h_in)?, axis(layer.w_in)?))
}

/// Dense MAC count: `m·n` for fully connected layers,
/// `m·n·k²·h_out·w_out` for convolutions.
pub fn layer_flops(layer: &LayerSpec) -> Result<u64> {
    let positions = layer.output_positions()? as u64;
    Ok(layer.weight_len() as u64 * positions)
}

pub fn model_flops(model: &ModelSpec) -> u64 {
    model.layer_flops().iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    name: String,
    layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_accuracy: Option<f64>,
}

/// Ordered, validated chain of layers. The layer counts `L`, `L1` and `L2`
/// are always derived from the layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelManifest", into = "ModelManifest")]
pub struct ModelSpec {
    name: String,
    layers: Vec<LayerSpec>,
    reference_accuracy: Option<f64>,
    flops: Vec<u64>,
}

impl TryFrom<ModelManifest> for ModelSpec {
    type Error = Error;

    fn try_from(raw: ModelManifest) -> Result<Self> {
        let mut model = ModelSpec::new(raw.name, raw.layers)?;
        model.reference_accuracy = raw.reference_accuracy;
        Ok(model)
    }
}

impl From<ModelSpec> for ModelManifest {
    fn from(model: ModelSpec) -> Self {
        ModelManifest {
            name: model.name,
            layers: model.layers,
            reference_accuracy: model.reference_accuracy,
        }
    }
}

impl ModelSpec {
    /// Validates every layer and the channel chain, assigning layer ids by
    /// position.
    pub fn new(name: impl Into<String>, mut layers: Vec<LayerSpec>) -> Result<Self> {
        for (i, layer) in layers.iter_mut().enumerate() {
            layer.id = i;
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[1].n != pair[0].m {
                return Err(Error::ChannelChain {
                    layer: pair[1].id,
                    expected: pair[1].n,
                    found: pair[0].m,
                });
            }
        }
        let flops = layers.iter().map(layer_flops).collect::<Result<Vec<_>>>()?;
        Ok(ModelSpec {
            name: name.into(),
            layers,
            reference_accuracy: None,
            flops,
        })
    }

    pub fn with_reference_accuracy(mut self, accuracy: Option<f64>) -> Self {
        self.reference_accuracy = accuracy;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> &LayerSpec {
        &self.layers[id]
    }

    /// Accuracy of the uncompressed model recorded when the asset was built.
    pub fn reference_accuracy(&self) -> Option<f64> {
        self.reference_accuracy
    }

    /// Total layer count `L`.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `L1`: fully connected and pointwise convolution layers.
    pub fn svd_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_svd_target()).count()
    }

    /// `L2`: convolutions with k > 1.
    pub fn tucker_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_tucker_target()).count()
    }

    /// Dense MACs per layer.
    pub fn layer_flops(&self) -> &[u64] {
        &self.flops
    }

    /// Whether structured pruning may mask the outputs of layer `id`. The
    /// final layer produces logits and is never masked.
    pub fn is_maskable(&self, id: usize) -> bool {
        self.layers[id].has_relu && id + 1 < self.layers.len()
    }
}

/// Weights and biases for every layer of a [`ModelSpec`]. Weights are
/// row-major with the output channel outermost (`m×n` or `m×n×k×k`).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStore {
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
}

impl TensorStore {
    pub fn new(model: &ModelSpec, weights: Vec<Vec<f32>>, biases: Vec<Vec<f32>>) -> Result<Self> {
        if weights.len() != model.len() || biases.len() != model.len() {
            return Err(Error::Shape(format!(
                "expected {} weight and bias tensors, got {} and {}",
                model.len(),
                weights.len(),
                biases.len()
            )));
        }
        for (layer, (w, b)) in model.layers().iter().zip(weights.iter().zip(&biases)) {
            if w.len() != layer.weight_len() || b.len() != layer.m {
                return Err(Error::Shape(format!(
                    "layer {}: weight has {} values (expected {}), bias has {} (expected {})",
                    layer.id,
                    w.len(),
                    layer.weight_len(),
                    b.len(),
                    layer.m
                )));
            }
            if !w.iter().chain(b).all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: layer.id });
            }
        }
        Ok(TensorStore { weights, biases })
    }

    pub fn weight(&self, layer: usize) -> &[f32] {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f32] {
        &self.biases[layer]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
