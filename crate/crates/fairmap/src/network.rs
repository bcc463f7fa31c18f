//! The trainable mapping: a stack of square affine layers applied to
//! embedding vectors, with deterministic initialization and JSON
//! checkpointing.
//!
//! The stack is affine by default and therefore mathematically collapsible
//! to a single layer; it is kept stacked to preserve the intended
//! architecture and training dynamics. An optional leaky-ReLU activation is
//! available between layers; the last layer is always affine so the output
//! spans the full embedding space.

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::prng::{key_for, NormalStream};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "fairmap-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-input forward cache: layer inputs, pre-activations, final output.
pub(crate) type ForwardCache = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>);

/// One square affine layer: y = W x + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl AffineLayer {
    pub fn identity(dim: usize) -> Self {
        let weight = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        AffineLayer {
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    fn validate(&self) -> Result<()> {
        let dim = self.bias.len();
        if dim == 0 || self.weight.len() != dim {
            return Err(Error::Invalid(format!(
                "layer weight has {} rows for bias of length {dim}",
                self.weight.len()
            )));
        }
        for row in &self.weight {
            if row.len() != dim {
                return Err(Error::Invalid(format!(
                    "layer weight row of length {} in a dim-{dim} layer",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer weight".into()));
            }
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer bias".into()));
        }
        Ok(())
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (row, slot) in self.weight.iter().zip(out.iter_mut()) {
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *slot = acc;
        }
        for (slot, b) in out.iter_mut().zip(&self.bias) {
            *slot += b;
        }
    }
}

/// Activation applied between layers (never after the last layer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: Self::DEFAULT_LEAKY_SLOPE,
        }
    }

    pub(crate) fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
        }
    }

    pub(crate) fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
        }
    }
}

/// Initialization mode for [`MappingNetwork::init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Every weight is the identity matrix and every bias zero, so the
    /// initial forward pass is exactly the identity.
    Identity,
    /// Identity plus zero-mean perturbations of scale 1e-3 from the seeded
    /// stream; biases zero.
    SeededRandom { seed: u64 },
}

const PERTURBATION_SCALE: f64 = 1e-3;

/// Ordered stack of affine layers sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork {
    layers: Vec<AffineLayer>,
    activation: Activation,
    dim: usize,
}

impl MappingNetwork {
    pub const DEFAULT_LAYERS: usize = 8;

    pub fn init(dim: usize, n_layers: usize, mode: InitMode) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("network dim must be positive".into()));
        }
        if n_layers == 0 {
            return Err(Error::Invalid("network needs at least one layer".into()));
        }
        let mut layers: Vec<AffineLayer> = (0..n_layers).map(|_| AffineLayer::identity(dim)).collect();
        if let InitMode::SeededRandom { seed } = mode {
            let mut stream = NormalStream::new(key_for(seed, b"fairmap-init"));
            for layer in &mut layers {
                for row in &mut layer.weight {
                    for w in row.iter_mut() {
                        *w += PERTURBATION_SCALE * stream.next_normal();
                    }
                }
            }
        }
        Ok(MappingNetwork {
            layers,
            activation: Activation::Identity,
            dim,
        })
    }

    /// Builds a network from explicit layers. All layers must be square and
    /// share one dimension.
    pub fn from_layers(layers: Vec<AffineLayer>, activation: Activation) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Invalid("network needs at least one layer".into()))?;
        let dim = first.dim();
        for layer in &layers {
            layer.validate()?;
            if layer.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: layer.dim(),
                });
            }
        }
        Ok(MappingNetwork {
            layers,
            activation,
            dim,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Applies the stack: the activation follows every layer except the
    /// last, whose output is purely affine.
    pub fn forward(&self, x: &EmbeddingVector) -> Result<EmbeddingVector> {
        if x.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        let out = self.forward_raw(x.values());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        EmbeddingVector::new(out)
    }

    pub(crate) fn forward_raw(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        let mut z = vec![0.0; self.dim];
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&h, &mut z);
            if l < last {
                for (hv, zv) in h.iter_mut().zip(&z) {
                    *hv = self.activation.apply(*zv);
                }
            } else {
                h.copy_from_slice(&z);
            }
        }
        h
    }

    /// Forward pass keeping per-layer inputs and pre-activations for
    /// backpropagation. Returns (inputs to each layer, pre-activations of
    /// each layer, final output).
    pub(crate) fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; self.dim];
            layer.apply(&h, &mut z);
            inputs.push(h);
            if l < last {
                h = z.iter().map(|&zv| self.activation.apply(zv)).collect();
            } else {
                h = z.clone();
            }
            pre_acts.push(z);
        }
        (inputs, pre_acts, h)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dim: usize,
    activation: Activation,
    layers: Vec<AffineLayer>,
}

pub fn save_checkpoint(net: &MappingNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dim: net.dim(),
        activation: net.activation(),
        layers: net.layers().to_vec(),
    };
    let json = serde_json::to_string(&file).expect("checkpoint serializes");
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(json.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MappingNetwork> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        what: "checkpoint".into(),
        path: display.clone(),
        msg: e.to_string(),
    })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Corrupt {
            what: "checkpoint".into(),
            path: display,
            msg: format!("unexpected format {:?}", file.format),
        });
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            what: "checkpoint".into(),
            expected: CHECKPOINT_VERSION,
            got: file.version,
        });
    }
    let net = MappingNetwork::from_layers(file.layers, file.activation)?;
    if net.dim() != file.dim {
        return Err(Error::Corrupt {
            what: "checkpoint".into(),
            path: display,
            msg: format!("declared dim {} but layers have dim {}", file.dim, net.dim()),
        });
    }
    Ok(net)
}
