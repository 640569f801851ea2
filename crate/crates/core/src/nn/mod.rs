//! A small double-precision neural network engine: dense, 1-D convolution,
//! max pooling and dropout layers, softmax/cross-entropy and MSE losses,
//! SGD/Adam/RMSProp, plus the three architectures used for traffic
//! classification (MLP, CNN) and feature compression (autoencoder).
//!
//! Training is single-threaded and bit-reproducible for a fixed seed.

mod layers;
mod optim;
mod persist;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, Pipeline};

pub use layers::{Activation, Conv1D, Dense, Dropout, Layer, MaxPool1D};
pub use optim::Optimizer;
pub use persist::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT, MODEL_VERSION};

use layers::LayerGrad;
use optim::OptimState;

const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CategoricalCrossEntropy,
    MeanSquaredError,
}

/// Declarative layer description used to build a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
        l2: f64,
    },
    Conv1d {
        filters: usize,
        filter_width: usize,
        activation: Activation,
        l2: f64,
    },
    MaxPool1d {
        pool_width: usize,
    },
    Dropout {
        keep_prob: f64,
    },
    SoftmaxOutput {
        units: usize,
        l2: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub(crate) input_dim: usize,
    pub(crate) layers: Vec<Layer>,
    pub(crate) loss: Loss,
    /// Number of leading layers that make up the encoder of an autoencoder.
    pub(crate) encoder_layers: Option<usize>,
    pub(crate) trained: bool,
}

fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let limit = (3.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl NeuralModel {
    /// Build a model from layer specs, checking that shapes compose.
    /// Weights are fan-in scaled uniform draws from `seed`; biases start at 0.
    pub fn from_specs(input_dim: usize, specs: &[LayerSpec], loss: Loss, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::shape("input_dim must be at least 1"));
        }
        if specs.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = input_dim;
        let mut channels = 1usize;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let flat = width * channels;
            let layer = match *spec {
                LayerSpec::Dense { units, activation, l2 } => {
                    if units == 0 {
                        return Err(Error::shape(format!("layer {i}: dense units must be positive")));
                    }
                    if activation == Activation::Softmax {
                        return Err(Error::shape(format!("layer {i}: use SoftmaxOutput for softmax")));
                    }
                    width = units;
                    channels = 1;
                    Layer::Dense(Dense {
                        w: init_uniform(&mut rng, flat, units, flat),
                        b: Array1::zeros(units),
                        activation,
                        l2,
                    })
                }
                LayerSpec::SoftmaxOutput { units, l2 } => {
                    if i + 1 != specs.len() {
                        return Err(Error::shape(format!("layer {i}: softmax output must be last")));
                    }
                    if units < 2 {
                        return Err(Error::shape("softmax output needs at least 2 classes"));
                    }
                    width = units;
                    channels = 1;
                    Layer::Dense(Dense {
                        w: init_uniform(&mut rng, flat, units, flat),
                        b: Array1::zeros(units),
                        activation: Activation::Softmax,
                        l2,
                    })
                }
                LayerSpec::Conv1d {
                    filters,
                    filter_width,
                    activation,
                    l2,
                } => {
                    if filters == 0 || filter_width == 0 {
                        return Err(Error::shape(format!("layer {i}: filters and filter_width must be positive")));
                    }
                    if filter_width > width {
                        return Err(Error::shape(format!(
                            "layer {i}: filter width {filter_width} exceeds input width {width}"
                        )));
                    }
                    let fan_in = filter_width * channels;
                    let conv = Conv1D {
                        w: init_uniform(&mut rng, filters, fan_in, fan_in),
                        b: Array1::zeros(filters),
                        filter_width,
                        in_width: width,
                        in_channels: channels,
                        activation,
                        l2,
                    };
                    width = conv.out_width();
                    channels = filters;
                    Layer::Conv1D(conv)
                }
                LayerSpec::MaxPool1d { pool_width } => {
                    if pool_width == 0 || pool_width > width {
                        return Err(Error::shape(format!(
                            "layer {i}: pool width {pool_width} invalid for input width {width}"
                        )));
                    }
                    let pool = MaxPool1D {
                        pool_width,
                        in_width: width,
                        channels,
                    };
                    width = pool.out_width();
                    Layer::MaxPool1D(pool)
                }
                LayerSpec::Dropout { keep_prob } => {
                    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                        return Err(Error::shape(format!("layer {i}: keep_prob must lie in (0, 1]")));
                    }
                    Layer::Dropout(Dropout { keep_prob })
                }
            };
            layers.push(layer);
        }
        let softmax_out = matches!(
            layers.last(),
            Some(Layer::Dense(Dense {
                activation: Activation::Softmax,
                ..
            }))
        );
        match (loss, softmax_out) {
            (Loss::CategoricalCrossEntropy, false) => {
                return Err(Error::shape("cross-entropy loss requires a softmax output layer"))
            }
            (Loss::MeanSquaredError, true) => return Err(Error::shape("MSE loss cannot follow a softmax output")),
            _ => {}
        }
        Ok(NeuralModel {
            input_dim,
            layers,
            loss,
            encoder_layers: None,
            trained: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn encoder_layers(&self) -> Option<usize> {
        self.encoder_layers
    }

    pub fn output_dim(&self) -> usize {
        let mut size = self.input_dim;
        for l in &self.layers {
            if !matches!(l, Layer::Dropout(_)) {
                size = l.output_size();
            }
        }
        size
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) if d.activation == Activation::Softmax => LayerSpec::SoftmaxOutput {
                    units: d.w.ncols(),
                    l2: d.l2,
                },
                Layer::Dense(d) => LayerSpec::Dense {
                    units: d.w.ncols(),
                    activation: d.activation,
                    l2: d.l2,
                },
                Layer::Conv1D(c) => LayerSpec::Conv1d {
                    filters: c.filters(),
                    filter_width: c.filter_width,
                    activation: c.activation,
                    l2: c.l2,
                },
                Layer::MaxPool1D(p) => LayerSpec::MaxPool1d {
                    pool_width: p.pool_width,
                },
                Layer::Dropout(d) => LayerSpec::Dropout { keep_prob: d.keep_prob },
            })
            .collect()
    }

    pub fn has_conv(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Conv1D(_) | Layer::MaxPool1D(_)))
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::weights)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Sum of `0.5 · l2 · ‖W‖²` over regularized layers.
    pub fn l2_penalty(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| l.weights().map(|(w, _)| 0.5 * l.l2() * w.iter().map(|v| v * v).sum::<f64>()))
            .sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim {
            return Err(Error::shape(format!(
                "model expects {} input features, got {cols}",
                self.input_dim
            )));
        }
        Ok(())
    }

    fn infer_range(&self, x: ArrayView2<f64>, upto: usize) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), 0));
        let mut first = true;
        for chunk_start in (0..x.nrows()).step_by(INFER_CHUNK) {
            let end = (chunk_start + INFER_CHUNK).min(x.nrows());
            let mut a = x.slice(ndarray::s![chunk_start..end, ..]).to_owned();
            for l in &self.layers[..upto] {
                a = l.infer(a.view());
            }
            if first {
                out = Array2::zeros((x.nrows(), a.ncols()));
                first = false;
            }
            out.slice_mut(ndarray::s![chunk_start..end, ..]).assign(&a);
        }
        out
    }

    /// Inference forward pass over a batch (dropout disabled).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        Ok(self.infer_range(x, self.layers.len()))
    }

    /// Pre-activation scores of the output layer (logits for a classifier).
    pub fn output_scores(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape");
        let last = self.layers.len() - 1;
        let h = self.infer_range(x.view(), last);
        match &self.layers[last] {
            Layer::Dense(d) => Ok((h.dot(&d.w) + &d.b).row(0).to_vec()),
            _ => Err(Error::Unsupported("output layer is not dense".into())),
        }
    }

    /// Class probabilities for a batch of inputs.
    pub fn predict_proba_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.loss != Loss::CategoricalCrossEntropy {
            return Err(Error::Unsupported("predict_proba needs a softmax classifier".into()));
        }
        self.forward(x)
    }

    pub fn predict_proba(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape");
        Ok(self.predict_proba_batch(x.view())?.row(0).to_vec())
    }

    /// Bottleneck activations of a trained autoencoder.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let depth = self
            .encoder_layers
            .ok_or_else(|| Error::Unsupported("model is not an autoencoder".into()))?;
        if !self.trained {
            return Err(Error::invalid("cannot encode with an untrained autoencoder"));
        }
        self.check_input(x.ncols())?;
        Ok(self.infer_range(x, depth))
    }

    pub fn encode(&self, input: &[f64]) -> Result<FeatureVector> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape");
        let z = self.encode_batch(x.view())?;
        Ok(FeatureVector::new(z.row(0).to_vec(), Pipeline::AeEncoded))
    }

    /// Total loss (data + L2) and per-layer gradients for one batch.
    fn loss_and_grads<R: Rng>(
        &self,
        x: &Array2<f64>,
        targets: &Array2<f64>,
        train: bool,
        rng: &mut R,
    ) -> (f64, Vec<LayerGrad>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for l in &self.layers {
            let (out, cache) = l.forward(a, train, rng);
            caches.push(cache);
            a = out;
        }
        let (data_loss, mut grad) = self.output_loss(&a, targets);
        let mut grads: Vec<LayerGrad> = vec![None; self.layers.len()];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let (dx, g) = l.backward(&caches[i], grad);
            grads[i] = g;
            grad = dx;
        }
        for (l, g) in self.layers.iter().zip(grads.iter_mut()) {
            if let (Some((w, _)), Some((dw, _))) = (l.weights(), g.as_mut()) {
                if l.l2() > 0.0 {
                    dw.scaled_add(l.l2(), w);
                }
            }
        }
        (data_loss + self.l2_penalty(), grads)
    }

    /// Data loss of an output batch and its gradient with respect to the
    /// output layer's pre-activation (softmax) or output (MSE).
    fn output_loss(&self, out: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
        let batch = out.nrows() as f64;
        match self.loss {
            Loss::CategoricalCrossEntropy => {
                let mut loss = 0.0;
                for (y, t) in out.iter().zip(targets.iter()) {
                    if *t != 0.0 {
                        loss -= t * y.max(f64::MIN_POSITIVE).ln();
                    }
                }
                ((loss / batch), (out - targets) / batch)
            }
            Loss::MeanSquaredError => {
                let n = out.len() as f64;
                let diff = out - targets;
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
                (loss, diff * (2.0 / n))
            }
        }
    }

    /// Loss of the whole set in inference mode (no dropout).
    pub fn evaluate_loss(&self, x: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
        let out = self.forward(x.view())?;
        Ok(self.output_loss(&out, targets).0 + self.l2_penalty())
    }
}

/// MLP shape: two hidden dense layers with dropout between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_units: [usize; 2],
    pub activation: Activation,
    pub l2: f64,
    pub keep_prob: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_units: [650, 650],
            activation: Activation::Tanh,
            l2: 1e-4,
            keep_prob: 0.8,
        }
    }
}

/// `Dense(h1) → Dropout → Dense(h2) → SoftmaxOutput(n_classes)`.
pub fn build_mlp(input_dim: usize, n_classes: usize, cfg: &MlpConfig, seed: u64) -> Result<NeuralModel> {
    if n_classes < 2 {
        return Err(Error::invalid("n_classes must be at least 2"));
    }
    NeuralModel::from_specs(
        input_dim,
        &[
            LayerSpec::Dense {
                units: cfg.hidden_units[0],
                activation: cfg.activation,
                l2: cfg.l2,
            },
            LayerSpec::Dropout {
                keep_prob: cfg.keep_prob,
            },
            LayerSpec::Dense {
                units: cfg.hidden_units[1],
                activation: cfg.activation,
                l2: cfg.l2,
            },
            LayerSpec::SoftmaxOutput {
                units: n_classes,
                l2: 0.0,
            },
        ],
        Loss::CategoricalCrossEntropy,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub n_filters: usize,
    pub filter_width: usize,
    pub pool_width: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub l2: f64,
    pub keep_prob: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            n_filters: 32,
            filter_width: 3,
            pool_width: 2,
            hidden_units: 256,
            activation: Activation::Tanh,
            l2: 1e-4,
            keep_prob: 0.8,
        }
    }
}

/// `Conv1D → MaxPool1D → Dense → Dropout → SoftmaxOutput`, L2 on the
/// convolution only.
pub fn build_cnn(input_dim: usize, n_classes: usize, cfg: &CnnConfig, seed: u64) -> Result<NeuralModel> {
    if n_classes < 2 {
        return Err(Error::invalid("n_classes must be at least 2"));
    }
    if input_dim < cfg.filter_width {
        return Err(Error::shape(format!(
            "input_dim {input_dim} is smaller than filter width {}",
            cfg.filter_width
        )));
    }
    NeuralModel::from_specs(
        input_dim,
        &[
            LayerSpec::Conv1d {
                filters: cfg.n_filters,
                filter_width: cfg.filter_width,
                activation: cfg.activation,
                l2: cfg.l2,
            },
            LayerSpec::MaxPool1d {
                pool_width: cfg.pool_width,
            },
            LayerSpec::Dense {
                units: cfg.hidden_units,
                activation: cfg.activation,
                l2: 0.0,
            },
            LayerSpec::Dropout {
                keep_prob: cfg.keep_prob,
            },
            LayerSpec::SoftmaxOutput {
                units: n_classes,
                l2: 0.0,
            },
        ],
        Loss::CategoricalCrossEntropy,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub hidden_units: usize,
    pub bottleneck: usize,
    pub activation: Activation,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            hidden_units: 256,
            bottleneck: 20,
            activation: Activation::Tanh,
        }
    }
}

/// `Dense(h) → Dense(bottleneck) → Dense(h) → Dense(input_dim)` with MSE loss.
pub fn build_ae(input_dim: usize, cfg: &AeConfig, seed: u64) -> Result<NeuralModel> {
    if cfg.bottleneck == 0 || cfg.bottleneck >= input_dim {
        return Err(Error::invalid(format!(
            "bottleneck {} must lie in [1, input_dim={input_dim})",
            cfg.bottleneck
        )));
    }
    let dense = |units| LayerSpec::Dense {
        units,
        activation: cfg.activation,
        l2: 0.0,
    };
    let mut model = NeuralModel::from_specs(
        input_dim,
        &[
            dense(cfg.hidden_units),
            dense(cfg.bottleneck),
            dense(cfg.hidden_units),
            dense(input_dim),
        ],
        Loss::MeanSquaredError,
        seed,
    )?;
    model.encoder_layers = Some(2);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::mlp()
    }
}

impl TrainConfig {
    /// SGD at lr 0.085, 30 epochs, batch 32.
    pub fn mlp() -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.085,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }

    /// SGD at lr 0.1, 75 epochs, batch 30.
    pub fn cnn() -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.1,
            epochs: 75,
            batch_size: 30,
            seed: 0,
        }
    }

    /// Adam at lr 0.001, 10 epochs, batch 256.
    pub fn ae() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            epochs: 10,
            batch_size: 256,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: NeuralModel,
    /// Mean training loss (data + L2) per epoch.
    pub loss_history: Vec<f64>,
}

/// One-hot rows for class ordinals.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), n_classes));
    for (i, &c) in labels.iter().enumerate() {
        t[[i, c]] = 1.0;
    }
    t
}

/// Dense matrix from equal-length rows.
pub fn to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::shape(format!("row {i} has {} values, expected {cols}", r.len())));
        }
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("checked shape"))
}

/// Mini-batch training. Each epoch reshuffles with the run seed and keeps the
/// last partial batch; dropout is active only here.
pub fn train(mut model: NeuralModel, x: &Array2<f64>, targets: &Array2<f64>, cfg: &TrainConfig) -> Result<TrainedModel> {
    model.check_input(x.ncols())?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if targets.nrows() != n || targets.ncols() != model.output_dim() {
        return Err(Error::shape(format!(
            "targets are {}x{}, expected {n}x{}",
            targets.nrows(),
            targets.ncols(),
            model.output_dim()
        )));
    }
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::invalid(format!(
            "batch_size {} must lie in [1, {n}] (training set size)",
            cfg.batch_size
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs must be positive"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning_rate must be a non-negative finite number"));
    }

    let sizes: Vec<usize> = model
        .layers
        .iter()
        .filter_map(Layer::weights)
        .flat_map(|(w, b)| [w.len(), b.len()])
        .collect();
    let mut optim = OptimState::new(cfg.optimizer, cfg.learning_rate, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let tb = targets.select(Axis(0), batch);
            let (loss, grads) = model.loss_and_grads(&xb, &tb, true, &mut dropout_rng);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss became {loss} in epoch {}", epoch + 1)));
            }
            epoch_loss += loss * batch.len() as f64;
            optim.begin_step();
            let mut tensor = 0;
            for (layer, g) in model.layers.iter_mut().zip(grads) {
                if let (Some((w, b)), Some((dw, db))) = (layer.weights_mut(), g) {
                    optim.update(tensor, w.as_slice_mut().expect("standard layout"), dw.as_slice().expect("standard layout"));
                    optim.update(tensor + 1, b.as_slice_mut().expect("standard layout"), db.as_slice().expect("standard layout"));
                    tensor += 2;
                }
            }
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("mean loss {mean} after epoch {}", epoch + 1)));
        }
        log::debug!("epoch {}/{}: loss {mean:.6}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    model.trained = true;
    Ok(TrainedModel {
        model,
        loss_history: history,
    })
}

/// Convenience wrapper for classifiers: one-hot encodes `labels`.
pub fn train_classifier(model: NeuralModel, x: &Array2<f64>, labels: &[usize], cfg: &TrainConfig) -> Result<TrainedModel> {
    let k = model.output_dim();
    if let Some(&bad) = labels.iter().find(|&&c| c >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
    }
    train(model, x, &one_hot(labels, k), cfg)
}

/// Compare backpropagated gradients with central finite differences on up
/// to `n_checks` randomly chosen parameters (all of them when the model is
/// smaller). Dropout is disabled. Returns the largest relative error
/// `|a − n| / max(|a|, |n|)`; pairs where both magnitudes are below 1e-10
/// count as agreeing.
pub fn numeric_gradient_check(
    model: &NeuralModel,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    epsilon: f64,
    n_checks: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    model.check_input(x.ncols())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grads) = model.loss_and_grads(x, targets, false, &mut rng);

    // (layer, is_bias, flat index)
    let mut coords = Vec::new();
    for (li, l) in model.layers.iter().enumerate() {
        if let Some((w, b)) = l.weights() {
            coords.extend((0..w.len()).map(|i| (li, false, i)));
            coords.extend((0..b.len()).map(|i| (li, true, i)));
        }
    }
    if coords.len() > n_checks {
        coords.shuffle(&mut rng);
        coords.truncate(n_checks);
    }

    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for (li, is_bias, idx) in coords {
        let analytic = {
            let (dw, db) = grads[li].as_ref().expect("parameterized layer");
            if is_bias {
                db[idx]
            } else {
                dw.as_slice().expect("standard layout")[idx]
            }
        };
        let mut nudge = |delta: f64| -> Result<f64> {
            let (w, b) = probe.layers[li].weights_mut().expect("parameterized layer");
            let slot = if is_bias {
                &mut b.as_slice_mut().expect("standard layout")[idx]
            } else {
                &mut w.as_slice_mut().expect("standard layout")[idx]
            };
            let orig = *slot;
            *slot = orig + delta;
            let loss = probe.evaluate_loss(x, targets);
            let (w, b) = probe.layers[li].weights_mut().expect("parameterized layer");
            if is_bias {
                b.as_slice_mut().expect("standard layout")[idx] = orig;
            } else {
                w.as_slice_mut().expect("standard layout")[idx] = orig;
            }
            loss
        };
        let plus = nudge(epsilon)?;
        let minus = nudge(-epsilon)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let scale = analytic.abs().max(numeric.abs());
        let err = if scale < 1e-10 {
            0.0
        } else {
            (analytic - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_mlp(seed: u64, keep: f64, l2: f64) -> NeuralModel {
        build_mlp(
            6,
            3,
            &MlpConfig {
                hidden_units: [5, 4],
                activation: Activation::Tanh,
                l2,
                keep_prob: keep,
            },
            seed,
        )
        .unwrap()
    }

    fn random_batch(seed: u64, rows: usize, cols: usize, k: usize) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        let y = (0..rows).map(|_| rng.random_range(0..k)).collect();
        (x, y)
    }

    #[test]
    fn mlp_layer_count_and_softmax() {
        let m = build_mlp(784, 101, &MlpConfig::default(), 1).unwrap();
        assert_eq!(m.layers().len(), 4);
        let x = Array2::from_shape_fn((3, 784), |(i, j)| ((i * 7 + j) % 3) as f64 - 1.0);
        let p = m.predict_proba_batch(x.view()).unwrap();
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-6);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cnn_shape_arithmetic() {
        let m = build_cnn(2500, 10, &CnnConfig::default(), 0).unwrap();
        match (&m.layers()[0], &m.layers()[1]) {
            (Layer::Conv1D(c), Layer::MaxPool1D(p)) => {
                assert_eq!(c.out_width(), 2498);
                assert_eq!(c.filters(), 32);
                assert_eq!(p.out_width(), 1249);
            }
            _ => panic!("unexpected layer stack"),
        }
        assert_eq!(m.layers().len(), 5);
        assert!(build_cnn(2, 10, &CnnConfig::default(), 0).is_err());
    }

    #[test]
    fn conv_constant_input_symmetric_filter() {
        let mut m = build_cnn(10, 2, &CnnConfig { n_filters: 2, hidden_units: 3, ..Default::default() }, 0).unwrap();
        if let Layer::Conv1D(c) = &mut m.layers[0] {
            c.w = ndarray::array![[0.2, 0.5, 0.2], [-0.1, 0.3, -0.1]];
        }
        let x = Array2::from_elem((1, 10), 0.7);
        let out = m.layers[0].infer(x.view());
        // layout [position][filter]
        for pos in 0..8 {
            assert_eq!(out[[0, pos * 2]], out[[0, 0]]);
            assert_eq!(out[[0, pos * 2 + 1]], out[[0, 1]]);
        }
    }

    #[test]
    fn ae_shapes_and_errors() {
        let m = build_ae(784, &AeConfig { bottleneck: 20, ..Default::default() }, 0).unwrap();
        assert_eq!(m.output_dim(), 784);
        assert!(build_ae(10, &AeConfig { bottleneck: 10, ..Default::default() }, 0).is_err());
        let x = Array2::zeros((1, 784));
        assert!(m.encode_batch(x.view()).is_err(), "untrained encode must fail");
        assert_eq!(TrainConfig::ae().batch_size, 256);
        assert_eq!(TrainConfig::ae().optimizer, Optimizer::Adam);
    }

    #[test]
    fn gradient_check_dense() {
        for seed in 0..3 {
            let m = small_mlp(seed, 1.0, 0.01);
            let (x, y) = random_batch(seed + 100, 7, 6, 3);
            let err = numeric_gradient_check(&m, &x, &one_hot(&y, 3), 1e-5, 1000, seed).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gradient_check_conv_and_ae() {
        let m = build_cnn(
            12,
            3,
            &CnnConfig {
                n_filters: 3,
                hidden_units: 4,
                l2: 0.01,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let (x, y) = random_batch(9, 4, 12, 3);
        let err = numeric_gradient_check(&m, &x, &one_hot(&y, 3), 1e-5, 1000, 1).unwrap();
        assert!(err < 1e-4, "{err}");

        let ae = build_ae(8, &AeConfig { hidden_units: 5, bottleneck: 3, ..Default::default() }, 2).unwrap();
        let (x, _) = random_batch(3, 5, 8, 2);
        let err = numeric_gradient_check(&ae, &x, &x, 1e-5, 1000, 1).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_zero_layer() {
        let mut m = NeuralModel::from_specs(
            3,
            &[LayerSpec::Dense {
                units: 2,
                activation: Activation::Linear,
                l2: 0.0,
            }],
            Loss::MeanSquaredError,
            0,
        )
        .unwrap();
        if let Some((w, _)) = m.layers[0].weights_mut() {
            w.fill(0.0);
        }
        let x = Array2::zeros((2, 3));
        let err = numeric_gradient_check(&m, &x, &Array2::zeros((2, 2)), 1e-5, 100, 0).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn xor_is_learned() {
        let x = ndarray::array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let labels = [0usize, 1, 1, 0];
        let m = build_mlp(
            2,
            2,
            &MlpConfig {
                hidden_units: [8, 8],
                activation: Activation::Tanh,
                l2: 0.0,
                keep_prob: 1.0,
            },
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.05,
            epochs: 400,
            batch_size: 4,
            seed: 1,
        };
        let t = train_classifier(m, &x, &labels, &cfg).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let p = t.model.predict_proba(row.as_slice().unwrap()).unwrap();
            let pred = if p[1] > p[0] { 1 } else { 0 };
            assert_eq!(pred, labels[i], "input {row}");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let m = small_mlp(4, 1.0, 0.0);
        let (x, y) = random_batch(1, 20, 6, 3);
        for opt in [Optimizer::Sgd, Optimizer::Adam, Optimizer::RmsProp] {
            let cfg = TrainConfig {
                optimizer: opt,
                learning_rate: 0.0,
                epochs: 3,
                batch_size: 6,
                seed: 2,
            };
            let t = train_classifier(m.clone(), &x, &y, &cfg).unwrap();
            assert_eq!(t.model.layers, m.layers);
            for l in &t.loss_history {
                assert_abs_diff_eq!(*l, t.loss_history[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = random_batch(7, 30, 6, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 7,
            ..TrainConfig::mlp().with_seed(11)
        };
        let a = train_classifier(small_mlp(1, 0.8, 0.01), &x, &y, &cfg).unwrap();
        let b = train_classifier(small_mlp(1, 0.8, 0.01), &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn keep_prob_one_equals_no_dropout() {
        let (x, y) = random_batch(8, 25, 6, 3);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 5,
            ..TrainConfig::mlp().with_seed(3)
        };
        let with = train_classifier(small_mlp(2, 1.0, 0.0), &x, &y, &cfg).unwrap();
        let base = small_mlp(2, 1.0, 0.0);
        let without = NeuralModel {
            layers: base.layers.iter().filter(|l| !matches!(l, Layer::Dropout(_))).cloned().collect(),
            ..base
        };
        let without = train_classifier(without, &x, &y, &cfg).unwrap();
        let strip = |m: &NeuralModel| -> Vec<Layer> {
            m.layers.iter().filter(|l| !matches!(l, Layer::Dropout(_))).cloned().collect()
        };
        assert_eq!(strip(&with.model), strip(&without.model));
        assert_eq!(with.loss_history, without.loss_history);
    }

    #[test]
    fn l2_shrinks_weights_without_data_gradient() {
        // zero inputs and zero targets through a linear layer: only L2 acts on W
        let m = NeuralModel::from_specs(
            4,
            &[LayerSpec::Dense {
                units: 3,
                activation: Activation::Linear,
                l2: 0.5,
            }],
            Loss::MeanSquaredError,
            9,
        )
        .unwrap();
        let x = Array2::zeros((2, 4));
        let t = Array2::zeros((2, 3));
        let norm = |m: &NeuralModel| m.layers[0].weights().unwrap().0.iter().map(|v| v * v).sum::<f64>();
        let mut cur = m;
        for step in 0..5 {
            let cfg = TrainConfig {
                optimizer: Optimizer::Sgd,
                learning_rate: 0.1,
                epochs: 1,
                batch_size: 2,
                seed: step,
            };
            let next = train(cur.clone(), &x, &t, &cfg).unwrap().model;
            assert!(norm(&next) < norm(&cur));
            cur = next;
        }
    }

    #[test]
    fn identical_inputs_identical_outputs_and_dim_errors() {
        let m = small_mlp(0, 0.8, 0.0);
        let v = vec![0.1, -0.2, 0.3, 0.0, 1.0, -1.0];
        assert_eq!(m.predict_proba(&v).unwrap(), m.predict_proba(&v).unwrap());
        assert!(m.predict_proba(&v[..5]).is_err());
    }

    #[test]
    fn ae_memorizes_single_vector() {
        let row: Vec<f64> = (0..10).map(|i| if i % 3 == 0 { 0.5 } else { -0.5 }).collect();
        let x = to_matrix(&vec![row; 16]).unwrap();
        let ae = build_ae(10, &AeConfig { hidden_units: 16, bottleneck: 3, ..Default::default() }, 0).unwrap();
        let before = ae.evaluate_loss(&x, &x).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 16,
            seed: 0,
        };
        let t = train(ae, &x, &x, &cfg).unwrap();
        let after = t.model.evaluate_loss(&x, &x).unwrap();
        assert!(after < 1e-4 && after < before, "{before} -> {after}");
        let z = t.model.encode(x.row(0).as_slice().unwrap()).unwrap();
        assert_eq!(z.dim(), 3);
        assert_eq!(z, t.model.encode(x.row(0).as_slice().unwrap()).unwrap());
    }

    #[test]
    fn batch_larger_than_set_rejected() {
        let (x, y) = random_batch(0, 4, 6, 3);
        let cfg = TrainConfig {
            batch_size: 5,
            ..TrainConfig::mlp()
        };
        assert!(train_classifier(small_mlp(0, 1.0, 0.0), &x, &y, &cfg).is_err());
    }

    #[test]
    fn divergence_aborts() {
        let (x, y) = random_batch(0, 8, 6, 3);
        let x = x * 1e200;
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e200,
            epochs: 5,
            batch_size: 4,
            seed: 0,
        };
        let m = NeuralModel::from_specs(
            6,
            &[LayerSpec::Dense { units: 3, activation: Activation::Linear, l2: 0.0 }],
            Loss::MeanSquaredError,
            0,
        )
        .unwrap();
        let t = one_hot(&y, 3);
        assert!(matches!(train(m, &x, &t, &cfg), Err(Error::NonFinite(_))));
    }
}
