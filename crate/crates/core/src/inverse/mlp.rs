use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
}

/// Shape of the inverse map.
///
/// `layers` counts affine layers: `layers - 1` hidden layers of `width`
/// units with the hidden activation, followed by an output layer with the
/// output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers: usize,
    pub width: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Default architecture (5 layers, 60 units) for `m x n` plans.
    pub fn for_plan(m: usize, n: usize, seed: u64) -> Self {
        Self {
            layers: 5,
            width: 60,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Sigmoid,
            input_dim: m * n,
            output_dim: m * n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::InvalidInput("network needs at least 2 layers".into()));
        }
        if self.width == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidInput("network dimensions must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.width, self.layers - 1));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        }));
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Per-layer parameters (or gradients, or optimiser moments) of the MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack(pub Vec<DenseLayer>);

impl LayerStack {
    pub fn zeros_like(other: &LayerStack) -> Self {
        LayerStack(
            other
                .0
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter().flat_map(|l| l.values())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.0.iter_mut().flat_map(|l| l.values_mut())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    /// Adds `other * scale` in place.
    pub fn add_scaled(&mut self, other: &LayerStack, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: LayerStack,
    pub second_moment: LayerStack,
    pub step: u64,
}

/// Weights of the inverse map, the input scaling it was trained with, and
/// the optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    pub config: NetworkConfig,
    pub layers: LayerStack,
    /// Divisor applied to `log(1 + T)` before the first layer.
    pub input_scale: f64,
    pub adam_state: AdamState,
}

impl MlpParameters {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = LayerStack(
            config
                .layer_shapes()
                .into_iter()
                .map(|(fan_in, fan_out)| {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut layer = DenseLayer::zeros(fan_in, fan_out);
                    layer
                        .weights
                        .iter_mut()
                        .for_each(|w| *w = rng.random_range(-bound..=bound));
                    layer
                })
                .collect(),
        );
        let zeros = LayerStack::zeros_like(&layers);
        Ok(Self {
            config,
            layers,
            input_scale: 1.0,
            adam_state: AdamState {
                first_moment: zeros.clone(),
                second_moment: zeros,
                step: 0,
            },
        })
    }

    pub fn with_input_scale(mut self, scale: f64) -> Self {
        self.input_scale = scale;
        self
    }

    pub fn zero_gradients(&self) -> LayerStack {
        LayerStack::zeros_like(&self.layers)
    }
}

/// Activations recorded during a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`activations[0]` is the network input).
    activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward_raw(layers: &LayerStack, input: &[f64]) -> ForwardCache {
    let mut activations = Vec::with_capacity(layers.0.len() + 1);
    activations.push(input.to_vec());
    let mut buf = Vec::new();
    let last = layers.0.len() - 1;
    for (k, layer) in layers.0.iter().enumerate() {
        layer.apply(activations.last().expect("non-empty"), &mut buf);
        if k == last {
            break;
        }
        activations.push(buf.iter().map(|z| z.tanh()).collect());
    }
    let output = buf.iter().map(|&z| sigmoid(z)).collect();
    ForwardCache {
        activations,
        output,
    }
}

/// Back-propagates `dL/d(output)` through the sigmoid and all layers.
pub fn backward(layers: &LayerStack, cache: &ForwardCache, output_grad: &[f64]) -> LayerStack {
    let mut grads = LayerStack::zeros_like(layers);
    let mut delta: Vec<f64> = output_grad
        .iter()
        .zip(&cache.output)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();
    for k in (0..layers.0.len()).rev() {
        let layer = &layers.0[k];
        let input = &cache.activations[k];
        let grad = &mut grads.0[k];
        for (o, d) in delta.iter().enumerate() {
            grad.biases[o] += d;
            let row = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (w, x) in row.iter_mut().zip(input) {
                *w += d * x;
            }
        }
        if k == 0 {
            break;
        }
        // Through W^T, then tanh' = 1 - h^2 of the previous layer's output.
        let mut next = vec![0.0; layer.inputs];
        for (o, d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (acc, w) in next.iter_mut().zip(row) {
                *acc += d * w;
            }
        }
        for (acc, h) in next.iter_mut().zip(input) {
            *acc *= 1.0 - h * h;
        }
        delta = next;
    }
    grads
}
