//! Dense-layer substrate: forward/backward passes, losses, Adam, seeded RNG.
//!
//! Everything is f64 and single-threaded by construction; the backward pass
//! computes gradients of the scalar `<upstream, output>` so callers can chain
//! arbitrary downstream terms through it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Deterministic generator used everywhere; same seed, same draw sequence.
pub type RngState = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RngState {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative as a function of the pre-activation. ReLU at the kink uses
    /// subgradient 0.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    pub layers: Vec<DenseLayer>,
}

/// All pre- and post-activation values of one forward pass, kept for reuse in
/// the backward pass.
#[derive(Debug, Clone)]
pub struct NetTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl NetTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(|v| v.as_slice()).unwrap_or(&self.input)
    }
}

/// Parameter gradients shaped exactly like the net they belong to.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.weights.rows, l.weights.cols),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &NetGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, c) in w.data.iter_mut().zip(&ow.data) {
                *a += c;
            }
            for (a, c) in b.iter_mut().zip(ob) {
                *a += c;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in self.layers.iter_mut() {
            for a in w.data.iter_mut() {
                *a *= s;
            }
            for a in b.iter_mut() {
                *a *= s;
            }
        }
    }
}

impl DenseNet {
    /// Glorot-uniform initialised net; `sizes` chains input through output,
    /// one activation per layer.
    pub fn new_glorot(sizes: &[usize], activations: &[Activation], rng: &mut RngState) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::invalid_argument(
                "net shape needs n+1 sizes for n activations",
            ));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &act) in activations.iter().enumerate() {
            let (n_in, n_out) = (sizes[i], sizes[i + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let mut weights = Matrix::zeros(n_out, n_in);
            for w in weights.data.iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; n_out],
                activation: act,
            });
        }
        Ok(DenseNet { layers })
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map(|l| l.weights.cols).unwrap_or(0)
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.weights.rows).unwrap_or(0)
    }

    /// Forward pass keeping every intermediate value.
    pub fn forward(&self, x: &[f64]) -> Result<NetTrace> {
        if x.len() != self.input_size() {
            return Err(Error::invalid_argument(format!(
                "net_forward: expected input of length {}, got {}",
                self.input_size(),
                x.len()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut p = layer.weights.matvec(&cur)?;
            for (pv, b) in p.iter_mut().zip(&layer.bias) {
                *pv += b;
            }
            let a: Vec<f64> = p.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(p);
            cur = a.clone();
            post.push(a);
        }
        Ok(NetTrace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Gradients of `<upstream, output>` with respect to every parameter and
    /// the input, given the trace of a matching forward call.
    pub fn backward(&self, trace: &NetTrace, upstream: &[f64]) -> Result<(NetGrads, Vec<f64>)> {
        if trace.pre.len() != self.layers.len() {
            return Err(Error::invalid_argument(
                "net_backward: trace does not match net depth",
            ));
        }
        if upstream.len() != self.output_size() {
            return Err(Error::invalid_argument(format!(
                "net_backward: expected upstream of length {}, got {}",
                self.output_size(),
                upstream.len()
            )));
        }
        let mut grads = NetGrads::zeros_like(self);
        let mut delta: Vec<f64> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let incoming = if i + 1 == self.layers.len() {
                upstream.to_vec()
            } else {
                delta
            };
            // delta_i = incoming (.) act'(pre_i)
            let d: Vec<f64> = incoming
                .iter()
                .zip(&trace.pre[i])
                .map(|(u, &p)| u * layer.activation.derivative(p))
                .collect();
            let prev_act: &[f64] = if i == 0 {
                &trace.input
            } else {
                &trace.post[i - 1]
            };
            grads.layers[i].0.add_outer(&d, prev_act, 1.0);
            for (gb, dv) in grads.layers[i].1.iter_mut().zip(&d) {
                *gb += dv;
            }
            delta = layer.weights.matvec_t(&d)?;
        }
        Ok((grads, delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    MeanSquaredError,
    BinaryCrossEntropy,
}

const BCE_CLAMP: f64 = 1e-7;

/// Loss value plus its gradient with respect to the prediction. Cross-entropy
/// clamps predictions to [1e-7, 1-1e-7] before taking logs.
pub fn loss_eval(kind: LossKind, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::invalid_argument(format!(
            "loss_eval: prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid_argument("loss_eval: empty vectors"));
    }
    let n = pred.len() as f64;
    match kind {
        LossKind::MeanSquaredError => {
            let mut value = 0.0;
            let mut grad = vec![0.0; pred.len()];
            for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
                let d = p - t;
                value += d * d;
                grad[i] = 2.0 * d / n;
            }
            Ok((value / n, grad))
        }
        LossKind::BinaryCrossEntropy => {
            let mut value = 0.0;
            let mut grad = vec![0.0; pred.len()];
            for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                value -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
                grad[i] = (pc - t) / (pc * (1.0 - pc)) / n;
            }
            Ok((value / n, grad))
        }
    }
}

/// Adam with bias correction; moment slots are keyed by parameter name so one
/// optimizer instance can drive the whole model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Starts a new optimizer step; call once before the `update`s of a batch.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the adaptive-moment update to one named parameter tensor.
    pub fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::invalid_argument(format!(
                "optimizer_step: parameter {name} has {} entries but gradient has {}",
                param.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged(format!(
                "non-finite gradient for parameter {name}"
            )));
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        if m.len() != param.len() {
            return Err(Error::invalid_argument(format!(
                "optimizer_step: parameter {name} changed size"
            )));
        }
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (mi, vi)) in param
            .iter_mut()
            .zip(grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
