//! Fixed-topology feed-forward network with hand-written reverse mode and an
//! Adam optimizer.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::io::{write_matrix, write_row, LineReader};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Tanh on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Parameter gradients, laid out like [`Mlp`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

/// Intermediate activations of a batched forward pass, one column per sample.
#[derive(Debug, Clone)]
pub struct BatchCache {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    activations: Vec<DMatrix<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations
            .last()
            .expect("cache holds at least the input")
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += b;
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "a network needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return Err(Error::InvalidArgument("layer sizes do not chain".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::InvalidArgument(
                    "bias length must match layer width".into(),
                ));
            }
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|x| !x.is_finite())
            {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform `±1/√fan_in` initialization; the last layer is further scaled
    /// by `output_scale`.
    pub fn new(sizes: &[usize], output_scale: f64, rng: &mut SimRng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer sizes {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let scale = if l == last { output_scale } else { 1.0 };
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| {
                        rng.random_range(-bound..bound) * scale
                    }),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound) * scale),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].weights.ncols())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weights.nrows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = &layer.weights * h + &layer.bias;
            if l < last {
                h.apply(|v| *v = v.tanh());
            }
        }
        h
    }

    /// Forward pass over the columns of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> BatchCache {
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * activations.last().expect("nonempty");
            add_bias(&mut z, &layer.bias);
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        BatchCache { activations }
    }

    /// Gradients of `Σ_columns grad_outᵀ · output` with respect to the
    /// parameters and the inputs.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        grad_out: &DMatrix<f64>,
    ) -> (MlpGrads, DMatrix<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                // tanh' = 1 - h²
                delta.zip_apply(&cache.activations[l + 1], |d, h| *d *= 1.0 - h * h);
            }
            let input = &cache.activations[l];
            let weights = &delta * input.transpose();
            let bias = delta.column_sum();
            let next = self.layers[l].weights.transpose() * &delta;
            grads.push(Layer { weights, bias });
            delta = next;
        }
        grads.reverse();
        (MlpGrads { layers: grads }, delta)
    }

    /// Single-sample reverse pass.
    pub fn backward(&self, x: &DVector<f64>, grad_out: &DVector<f64>) -> (MlpGrads, DVector<f64>) {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let gm = DMatrix::from_column_slice(grad_out.len(), 1, grad_out.as_slice());
        let cache = self.forward_batch(&xm);
        let (grads, input) = self.backward_batch(&cache, &gm);
        (grads, input.column(0).into_owned())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension {
                context: "network parameters",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights
                .as_mut_slice()
                .copy_from_slice(&params[offset..offset + w]);
            offset += w;
            let b = l.bias.len();
            l.bias
                .as_mut_slice()
                .copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let sizes: Vec<String> = self.sizes().iter().map(ToString::to_string).collect();
        writeln!(w, "mlp layers={}", self.layers.len())?;
        writeln!(w, "{}", sizes.join(" "))?;
        for l in &self.layers {
            write_matrix(w, &l.weights)?;
            write_row(w, l.bias.iter())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(lr: &mut LineReader<R>) -> Result<Self> {
        let count = lr.read_header(Some("mlp"), &["layers"])?[0];
        let sizes = lr
            .expect_line()?
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| lr.error(format!("bad layer size: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if sizes.len() != count + 1 {
            return Err(lr.error(format!(
                "expected {} layer sizes, found {}",
                count + 1,
                sizes.len()
            )));
        }
        let mut layers = Vec::with_capacity(count);
        for w in sizes.windows(2) {
            let weights = lr.read_matrix(w[1], w[0])?;
            let bias = lr.read_vector(w[1])?;
            layers.push(Layer { weights, bias });
        }
        Self::from_layers(layers)
    }
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub steps: u64,
}

impl OptState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
            steps: 0,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn opt_step(params: &mut [f64], grads: &[f64], state: &mut OptState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Dimension {
            context: "optimizer step",
            expected: state.first.len(),
            actual: grads.len(),
        });
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.steps += 1;
    let c1 = 1.0 - beta1.powi(state.steps as i32);
    let c2 = 1.0 - beta2.powi(state.steps as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
    }
    Ok(())
}
