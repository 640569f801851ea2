//! Versioned JSON model container. Tensors are stored row-major as base64
//! of little-endian IEEE-754 doubles, so a load/save cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Conv1D, Dense, Dropout, Layer, Loss, MaxPool1D, NeuralModel};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "wfkit-neural-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: String,
}

fn encode(values: &[f64], shape: Vec<usize>) -> Tensor {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Tensor {
        shape,
        data: B64.encode(bytes),
    }
}

fn decode(t: &Tensor) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(&t.data)
        .map_err(|e| Error::Model(format!("tensor data: {e}")))?;
    let expected: usize = t.shape.iter().product();
    if bytes.len() != expected * 8 {
        return Err(Error::Model(format!(
            "tensor holds {} bytes, shape {:?} needs {}",
            bytes.len(),
            t.shape,
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn matrix(t: &Tensor) -> Result<Array2<f64>> {
    if t.shape.len() != 2 {
        return Err(Error::Model(format!("expected 2-D tensor, got shape {:?}", t.shape)));
    }
    Array2::from_shape_vec((t.shape[0], t.shape[1]), decode(t)?).map_err(|e| Error::Model(e.to_string()))
}

fn vector(t: &Tensor) -> Result<Array1<f64>> {
    if t.shape.len() != 1 {
        return Err(Error::Model(format!("expected 1-D tensor, got shape {:?}", t.shape)));
    }
    Ok(Array1::from(decode(t)?))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerRepr {
    Dense {
        activation: Activation,
        l2: f64,
        weights: Tensor,
        bias: Tensor,
    },
    Conv1d {
        filter_width: usize,
        in_width: usize,
        in_channels: usize,
        activation: Activation,
        l2: f64,
        weights: Tensor,
        bias: Tensor,
    },
    MaxPool1d {
        pool_width: usize,
        in_width: usize,
        channels: usize,
    },
    Dropout {
        keep_prob: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format: String,
    version: u32,
    input_dim: usize,
    loss: Loss,
    trained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder_layers: Option<usize>,
    layers: Vec<LayerRepr>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    provenance: serde_json::Map<String, serde_json::Value>,
}

fn to_repr(model: &NeuralModel) -> ModelRepr {
    let layers = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => LayerRepr::Dense {
                activation: d.activation,
                l2: d.l2,
                weights: encode(d.w.as_slice().expect("standard layout"), vec![d.w.nrows(), d.w.ncols()]),
                bias: encode(d.b.as_slice().expect("standard layout"), vec![d.b.len()]),
            },
            Layer::Conv1D(c) => LayerRepr::Conv1d {
                filter_width: c.filter_width,
                in_width: c.in_width,
                in_channels: c.in_channels,
                activation: c.activation,
                l2: c.l2,
                weights: encode(c.w.as_slice().expect("standard layout"), vec![c.w.nrows(), c.w.ncols()]),
                bias: encode(c.b.as_slice().expect("standard layout"), vec![c.b.len()]),
            },
            Layer::MaxPool1D(p) => LayerRepr::MaxPool1d {
                pool_width: p.pool_width,
                in_width: p.in_width,
                channels: p.channels,
            },
            Layer::Dropout(d) => LayerRepr::Dropout { keep_prob: d.keep_prob },
        })
        .collect();
    ModelRepr {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        input_dim: model.input_dim,
        loss: model.loss,
        trained: model.trained,
        encoder_layers: model.encoder_layers,
        layers,
        provenance: Default::default(),
    }
}

fn from_repr(repr: ModelRepr) -> Result<NeuralModel> {
    if repr.format != MODEL_FORMAT {
        return Err(Error::Model(format!("unknown format '{}'", repr.format)));
    }
    if repr.version != MODEL_VERSION {
        return Err(Error::Model(format!("unsupported version {}", repr.version)));
    }
    let mut width = repr.input_dim;
    let mut layers = Vec::with_capacity(repr.layers.len());
    for (i, l) in repr.layers.into_iter().enumerate() {
        let layer = match l {
            LayerRepr::Dense {
                activation,
                l2,
                weights,
                bias,
            } => {
                let w = matrix(&weights)?;
                let b = vector(&bias)?;
                if w.nrows() != width || b.len() != w.ncols() {
                    return Err(Error::Model(format!("layer {i}: dense shapes do not compose")));
                }
                width = w.ncols();
                Layer::Dense(Dense { w, b, activation, l2 })
            }
            LayerRepr::Conv1d {
                filter_width,
                in_width,
                in_channels,
                activation,
                l2,
                weights,
                bias,
            } => {
                let w = matrix(&weights)?;
                let b = vector(&bias)?;
                if in_width * in_channels != width
                    || filter_width == 0
                    || filter_width > in_width
                    || w.ncols() != filter_width * in_channels
                    || b.len() != w.nrows()
                {
                    return Err(Error::Model(format!("layer {i}: convolution shapes do not compose")));
                }
                let c = Conv1D {
                    w,
                    b,
                    filter_width,
                    in_width,
                    in_channels,
                    activation,
                    l2,
                };
                width = c.out_width() * c.filters();
                Layer::Conv1D(c)
            }
            LayerRepr::MaxPool1d {
                pool_width,
                in_width,
                channels,
            } => {
                if in_width * channels != width || pool_width == 0 || pool_width > in_width {
                    return Err(Error::Model(format!("layer {i}: pooling shapes do not compose")));
                }
                let p = MaxPool1D {
                    pool_width,
                    in_width,
                    channels,
                };
                width = p.out_width() * channels;
                Layer::MaxPool1D(p)
            }
            LayerRepr::Dropout { keep_prob } => Layer::Dropout(Dropout { keep_prob }),
        };
        layers.push(layer);
    }
    if layers.is_empty() {
        return Err(Error::Model("model has no layers".into()));
    }
    Ok(NeuralModel {
        input_dim: repr.input_dim,
        layers,
        loss: repr.loss,
        encoder_layers: repr.encoder_layers,
        trained: repr.trained,
    })
}

/// Serialize a model; `provenance` entries (config hash, seed, …) are stored
/// alongside and ignored on load.
pub fn model_to_json(model: &NeuralModel, provenance: &[(&str, serde_json::Value)]) -> Result<String> {
    let mut repr = to_repr(model);
    for (k, v) in provenance {
        repr.provenance.insert((*k).to_string(), v.clone());
    }
    Ok(serde_json::to_string_pretty(&repr)?)
}

pub fn model_from_json(text: &str) -> Result<NeuralModel> {
    let repr: ModelRepr = serde_json::from_str(text)?;
    from_repr(repr)
}

pub fn save_model(model: &NeuralModel, mut w: impl Write, provenance: &[(&str, serde_json::Value)]) -> Result<()> {
    w.write_all(model_to_json(model, provenance)?.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NeuralModel> {
    model_from_json(&fs::read_to_string(path)?)
}
