use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
    RmsProp,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMS_DECAY: f64 = 0.9;
const EPS: f64 = 1e-8;

/// Per-tensor optimizer state, indexed by the order tensors are visited.
pub(crate) struct OptimState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: Optimizer, lr: f64, sizes: &[usize]) -> Self {
        let zeros = |n: &usize| vec![0.0; *n];
        let (first, second) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam => (sizes.iter().map(zeros).collect(), sizes.iter().map(zeros).collect()),
            Optimizer::RmsProp => (Vec::new(), sizes.iter().map(zeros).collect()),
        };
        OptimState {
            kind,
            lr,
            step: 0,
            first,
            second,
        }
    }

    /// Call once per mini-batch before the tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, tensor: usize, param: &mut [f64], grad: &[f64]) {
        let lr = self.lr;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let m = &mut self.first[tensor];
                let v = &mut self.second[tensor];
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for i in 0..param.len() {
                    let g = grad[i];
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    param[i] -= lr * mh / (vh.sqrt() + EPS);
                }
            }
            Optimizer::RmsProp => {
                let v = &mut self.second[tensor];
                for i in 0..param.len() {
                    let g = grad[i];
                    v[i] = RMS_DECAY * v[i] + (1.0 - RMS_DECAY) * g * g;
                    param[i] -= lr * g / (v[i].sqrt() + EPS);
                }
            }
        }
    }
}
