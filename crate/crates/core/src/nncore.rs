//! Dense feedforward networks with hand-written backpropagation, an Adam
//! optimizer and a seedable random source.
//!
//! Everything is `f64`. Batched passes take one sample per row.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a . b` written into a fresh row-major array. `dot` may hand back a
/// column-major result when an operand has a unit dimension.
fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward_batch`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    /// Pre-activation of layer `k`, one row per sample.
    pub fn pre_activation(&self, k: usize) -> &Array2<f64> {
        &self.pre[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.biases += &b.biases;
        }
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape {
                    block: format!("layer[{}]", k + 1),
                    detail: format!(
                        "input width {} does not match previous output width {}",
                        pair[1].in_dim(),
                        pair[0].out_dim()
                    ),
                });
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.biases.len() != l.out_dim() {
                return Err(Error::Shape {
                    block: format!("layer[{k}].biases"),
                    detail: format!("expected {} entries, got {}", l.out_dim(), l.biases.len()),
                });
            }
        }
        Ok(Self { layers })
    }

    /// All-zero network; hidden layers use `hidden`, the last layer is identity.
    pub fn zeros(sizes: &[usize], hidden: Activation) -> Result<Self> {
        check_sizes(sizes)?;
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { Activation::Identity } else { hidden };
                DenseLayer::zeros(sizes[k], sizes[k + 1], act)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[in, hidden..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(|l| l.out_dim()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.len()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = matmul(x.view(), layer.weights.t());
            z += &layer.biases;
            let y = match layer.activation {
                Activation::Identity => z.clone(),
                Activation::Relu => z.mapv(|v| v.max(0.0)),
            };
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok((x, MlpCache { inputs, pre }))
    }

    /// Reverse pass for a batch. Gradients are summed over rows.
    pub fn backward_batch(
        &self,
        cache: &MlpCache,
        grad_output: ArrayView2<f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Shape {
                block: "cache".into(),
                detail: format!(
                    "cache holds {} layers, network has {}",
                    cache.inputs.len(),
                    self.layers.len()
                ),
            });
        }
        for (k, (layer, x)) in self.layers.iter().zip(&cache.inputs).enumerate() {
            if x.ncols() != layer.in_dim() {
                return Err(Error::Shape {
                    block: format!("cache.layer[{k}]"),
                    detail: format!("input width {} vs layer {}", x.ncols(), layer.in_dim()),
                });
            }
        }
        if grad_output.ncols() != self.out_dim() || grad_output.nrows() != cache.batch_size() {
            return Err(Error::Shape {
                block: "grad_output".into(),
                detail: format!(
                    "expected {}x{}, got {}x{}",
                    cache.batch_size(),
                    self.out_dim(),
                    grad_output.nrows(),
                    grad_output.ncols()
                ),
            });
        }
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Relu {
                g.zip_mut_with(&cache.pre[k], |gv, &z| {
                    if z <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let weights = matmul(g.t(), cache.inputs[k].view());
            let biases = g.sum_axis(Axis(0));
            let g_in = matmul(g.view(), layer.weights.view());
            layer_grads.push(LayerGrad { weights, biases });
            g = g_in;
        }
        layer_grads.reverse();
        Ok((MlpGrads { layers: layer_grads }, g))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let (y, cache) = self.forward_batch(x)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    pub fn backward(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let g = ArrayView2::from_shape((1, grad_output.len()), grad_output).map_err(|_| {
            Error::DimensionMismatch {
                expected: self.out_dim(),
                got: grad_output.len(),
            }
        })?;
        let (grads, g_in) = self.backward_batch(cache, g)?;
        Ok((grads, g_in.into_raw_vec_and_offset().0))
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must have length >= 2 and be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

/// Fan-in scaled Gaussian initialization: variance `2/fan_in` for rectifier
/// layers, `1/fan_in` for the final identity layer. Biases start at zero.
pub fn init_params(rng: &mut SeededRng, sizes: &[usize], hidden: Activation) -> Result<Mlp> {
    let mut mlp = Mlp::zeros(sizes, hidden)?;
    for layer in &mut mlp.layers {
        let gain = match layer.activation {
            Activation::Relu => 2.0,
            Activation::Identity => 1.0,
        };
        let std = (gain / layer.in_dim() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in layer.weights.iter_mut() {
            *w = normal.sample(&mut rng.inner);
        }
    }
    Ok(mlp)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            what: "logit",
            sample: 0,
        });
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// ChaCha8 stream keyed by a 64-bit seed. Child streams come from [`SeededRng::split`].
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `stream` under the same seed; does not advance `self`.
    pub fn split(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    /// Standard-normal draws (ziggurat).
    pub fn gaussian(&mut self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.fill_gaussian(&mut out);
        out
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.inner);
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// A named parameter block and its gradient, both flat.
pub struct ParamBlock<'a> {
    pub name: String,
    pub params: &'a mut [f64],
    pub grads: &'a [f64],
}

/// Adam with bias-corrected moments. Moment buffers are allocated on the
/// first step and must keep the same block layout afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        for b in blocks.iter() {
            if b.params.len() != b.grads.len() {
                return Err(Error::Shape {
                    block: b.name.clone(),
                    detail: format!(
                        "{} parameters but {} gradients",
                        b.params.len(),
                        b.grads.len()
                    ),
                });
            }
            if b.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: b.name.clone(),
                });
            }
        }
        if self.step == 0 && self.first_moment.is_empty() {
            self.first_moment = blocks.iter().map(|b| vec![0.0; b.params.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != blocks.len() {
            return Err(Error::Shape {
                block: "optimizer".into(),
                detail: format!(
                    "state has {} blocks, got {}",
                    self.first_moment.len(),
                    blocks.len()
                ),
            });
        }
        for (b, m) in blocks.iter().zip(&self.first_moment) {
            if m.len() != b.params.len() {
                return Err(Error::Shape {
                    block: b.name.clone(),
                    detail: format!("state has {} entries, got {}", m.len(), b.params.len()),
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((b, m), v) in blocks
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((p, &g), mi), vi) in b.params.iter_mut().zip(b.grads).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
