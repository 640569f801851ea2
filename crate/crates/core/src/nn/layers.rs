use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

const LEAKY_SLOPE: f64 = 0.01;
const ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    LeakyRelu,
    Elu,
    Linear,
    /// Only valid on the output layer, paired with cross-entropy.
    Softmax,
}

impl Activation {
    pub(crate) fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::LeakyRelu => z.mapv_inplace(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
            Activation::Elu => z.mapv_inplace(|v| if v > 0.0 { v } else { ELU_ALPHA * (v.exp() - 1.0) }),
            Activation::Linear => {}
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }

    /// Multiply `grad` in place by the activation derivative, expressed
    /// through the activation output `y`. Softmax is handled by the loss.
    pub(crate) fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Relu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y)),
            Activation::LeakyRelu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g *= LEAKY_SLOPE
                }
            }),
            Activation::Elu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g *= y + ELU_ALPHA
                }
            }),
            Activation::Linear | Activation::Softmax => {}
        }
    }
}

/// Fully connected layer, `w` is `inputs × units`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
    pub l2: f64,
}

/// Valid 1-D convolution over a `[position][channel]` row-major input.
/// `w` is `filters × (filter_width · in_channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1D {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub filter_width: usize,
    pub in_width: usize,
    pub in_channels: usize,
    pub activation: Activation,
    pub l2: f64,
}

impl Conv1D {
    pub fn filters(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.in_width + 1 - self.filter_width
    }

    /// One patch row per (sample, output position).
    fn patches(&self, x: &Array2<f64>) -> Array2<f64> {
        let c = self.in_channels;
        let span = self.filter_width * c;
        let ow = self.out_width();
        let mut p = Array2::zeros((x.nrows() * ow, span));
        for (b, row) in x.rows().into_iter().enumerate() {
            let row = row.as_slice().expect("standard layout");
            for pos in 0..ow {
                p.row_mut(b * ow + pos)
                    .as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(&row[pos * c..pos * c + span]);
            }
        }
        p
    }
}

/// Non-overlapping max pooling along positions, per channel. A trailing
/// partial window is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool1D {
    pub pool_width: usize,
    pub in_width: usize,
    pub channels: usize,
}

impl MaxPool1D {
    pub fn out_width(&self) -> usize {
        self.in_width / self.pool_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub keep_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1D(Conv1D),
    MaxPool1D(MaxPool1D),
    Dropout(Dropout),
}

pub(crate) enum Cache {
    Dense { input: Array2<f64>, output: Array2<f64> },
    Conv { patches: Array2<f64>, output: Array2<f64> },
    Pool { argmax: Vec<usize>, in_cols: usize },
    Dropout { mask: Option<Array2<f64>> },
}

/// Parameter gradients of one layer (`None` for parameter-free layers).
pub(crate) type LayerGrad = Option<(Array2<f64>, Array1<f64>)>;

impl Layer {
    pub fn output_size(&self) -> usize {
        match self {
            Layer::Dense(d) => d.w.ncols(),
            Layer::Conv1D(c) => c.out_width() * c.filters(),
            Layer::MaxPool1D(p) => p.out_width() * p.channels,
            Layer::Dropout(_) => 0,
        }
    }

    pub fn l2(&self) -> f64 {
        match self {
            Layer::Dense(d) => d.l2,
            Layer::Conv1D(c) => c.l2,
            _ => 0.0,
        }
    }

    pub fn weights(&self) -> Option<(&Array2<f64>, &Array1<f64>)> {
        match self {
            Layer::Dense(d) => Some((&d.w, &d.b)),
            Layer::Conv1D(c) => Some((&c.w, &c.b)),
            _ => None,
        }
    }

    pub fn weights_mut(&mut self) -> Option<(&mut Array2<f64>, &mut Array1<f64>)> {
        match self {
            Layer::Dense(d) => Some((&mut d.w, &mut d.b)),
            Layer::Conv1D(c) => Some((&mut c.w, &mut c.b)),
            _ => None,
        }
    }

    /// Inference-only forward pass.
    pub(crate) fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(d) => {
                let mut z = x.dot(&d.w) + &d.b;
                d.activation.apply(&mut z);
                z
            }
            Layer::Conv1D(c) => {
                let (out, _) = conv_forward(c, &x.to_owned());
                out
            }
            Layer::MaxPool1D(p) => pool_forward(p, x).0,
            Layer::Dropout(_) => x.to_owned(),
        }
    }

    /// Training-mode forward pass returning the output and what backward needs.
    pub(crate) fn forward<R: Rng>(&self, x: Array2<f64>, train: bool, rng: &mut R) -> (Array2<f64>, Cache) {
        match self {
            Layer::Dense(d) => {
                let mut z = x.dot(&d.w) + &d.b;
                d.activation.apply(&mut z);
                (
                    z.clone(),
                    Cache::Dense {
                        input: x,
                        output: z,
                    },
                )
            }
            Layer::Conv1D(c) => {
                let (out, patches) = conv_forward(c, &x);
                (
                    out.clone(),
                    Cache::Conv {
                        patches,
                        output: out,
                    },
                )
            }
            Layer::MaxPool1D(p) => {
                let in_cols = x.ncols();
                let (out, argmax) = pool_forward(p, x.view());
                (out, Cache::Pool { argmax, in_cols })
            }
            Layer::Dropout(d) => {
                if !train || d.keep_prob >= 1.0 {
                    return (x, Cache::Dropout { mask: None });
                }
                let keep = d.keep_prob;
                let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&x * &mask, Cache::Dropout { mask: Some(mask) })
            }
        }
    }

    /// Given dL/d(output), return dL/d(input) and parameter gradients
    /// (data term only; the L2 term is added by the caller).
    pub(crate) fn backward(&self, cache: &Cache, mut grad: Array2<f64>) -> (Array2<f64>, LayerGrad) {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input, output }) => {
                d.activation.backprop(output, &mut grad);
                let dw = input.t().dot(&grad);
                let db = grad.sum_axis(Axis(0));
                let dx = grad.dot(&d.w.t());
                (dx, Some((dw, db)))
            }
            (Layer::Conv1D(c), Cache::Conv { patches, output }) => {
                c.activation.backprop(output, &mut grad);
                let batch = grad.nrows();
                let ow = c.out_width();
                let f = c.filters();
                let dz = grad
                    .into_shape_with_order((batch * ow, f))
                    .expect("conv gradient reshape");
                let dw = dz.t().dot(patches);
                let db = dz.sum_axis(Axis(0));
                let dp = dz.dot(&c.w);
                let ch = c.in_channels;
                let span = c.filter_width * ch;
                let mut dx = Array2::zeros((batch, c.in_width * ch));
                for b in 0..batch {
                    let mut row = dx.row_mut(b);
                    let row = row.as_slice_mut().expect("standard layout");
                    for pos in 0..ow {
                        let src = dp.row(b * ow + pos);
                        for (k, v) in src.iter().enumerate().take(span) {
                            row[pos * ch + k] += v;
                        }
                    }
                }
                (dx, Some((dw, db)))
            }
            (Layer::MaxPool1D(_), Cache::Pool { argmax, in_cols }) => {
                let batch = grad.nrows();
                let oc = grad.ncols();
                let mut dx = Array2::zeros((batch, *in_cols));
                for b in 0..batch {
                    for j in 0..oc {
                        dx[[b, argmax[b * oc + j]]] += grad[[b, j]];
                    }
                }
                (dx, None)
            }
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                if let Some(m) = mask {
                    grad *= m;
                }
                (grad, None)
            }
            _ => unreachable!("cache does not match layer"),
        }
    }
}

fn conv_forward(c: &Conv1D, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let batch = x.nrows();
    let patches = c.patches(x);
    let mut z = patches.dot(&c.w.t()) + &c.b;
    c.activation.apply(&mut z);
    let out = z
        .into_shape_with_order((batch, c.out_width() * c.filters()))
        .expect("conv output reshape");
    (out, patches)
}

fn pool_forward(p: &MaxPool1D, x: ArrayView2<f64>) -> (Array2<f64>, Vec<usize>) {
    let batch = x.nrows();
    let ch = p.channels;
    let ow = p.out_width();
    let mut out = Array2::zeros((batch, ow * ch));
    let mut argmax = vec![0usize; batch * ow * ch];
    for b in 0..batch {
        let row = x.slice(s![b, ..]);
        for pos in 0..ow {
            for c in 0..ch {
                let mut best = (pos * p.pool_width) * ch + c;
                for k in 1..p.pool_width {
                    let idx = (pos * p.pool_width + k) * ch + c;
                    if row[idx] > row[best] {
                        best = idx;
                    }
                }
                out[[b, pos * ch + c]] = row[best];
                argmax[b * ow * ch + pos * ch + c] = best;
            }
        }
    }
    (out, argmax)
}
