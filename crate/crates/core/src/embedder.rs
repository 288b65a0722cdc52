//! Fully-connected embedding network with hand-written backpropagation and an
//! Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TacError};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = TacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(TacError::InvalidConfig(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Embedding dimension `D`.
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_dims: vec![64, 64],
            output_dim: 64,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl EmbedderConfig {
    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden_dims.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden_dims);
        d.push(self.output_dim);
        d
    }

    pub fn parameter_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Checks the widths and that the embedding leaves a non-empty null space
    /// for `max_way` classes plus a distractor row.
    pub fn validate(&self, max_way: usize) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(TacError::InvalidConfig("layer widths must be positive".into()));
        }
        if self.output_dim <= max_way + 1 {
            return Err(TacError::InvalidConfig(format!(
                "output_dim {} must exceed way count {max_way} + 1",
                self.output_dim
            )));
        }
        Ok(())
    }
}

/// One affine layer; `weight` is `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedder {
    layers: Vec<Layer>,
    config: EmbedderConfig,
}

/// Values saved by [`Embedder::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ActivationCache {
    /// Input seen by each layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of every layer.
    pre: Vec<Matrix>,
}

impl ActivationCache {
    pub fn batch(&self) -> usize {
        self.inputs[0].rows()
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl ParameterGradients {
    /// Gradient tensors in the same order as [`Embedder::parameter_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&x| x == 0.0))
    }
}

impl Embedder {
    /// Seeded initialization: weights uniform in `±sqrt(k / fan_in)` (k = 6 for
    /// relu, 3 for tanh), biases zero.
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        if config.dims().contains(&0) {
            return Err(TacError::InvalidConfig("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gain = match config.activation {
            Activation::Relu => 6.0,
            Activation::Tanh => 3.0,
        };
        let layers = config
            .dims()
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (gain / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                Layer { weight: Matrix::from_raw(fan_out, fan_in, data), bias: vec![0.0; fan_out] }
            })
            .collect();
        Ok(Self { layers, config })
    }

    /// Builds an embedder from explicit layers; shapes must chain as the config says.
    pub fn from_layers(config: EmbedderConfig, layers: Vec<Layer>) -> Result<Self> {
        let dims = config.dims();
        if layers.len() + 1 != dims.len() {
            return Err(dim_err!("config has {} layers, got {}", dims.len() - 1, layers.len()));
        }
        for (i, (layer, w)) in layers.iter().zip(dims.windows(2)).enumerate() {
            if layer.weight.shape() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return Err(dim_err!(
                    "layer {i} should map {} -> {}, weight is {:?} and bias {}",
                    w[0],
                    w[1],
                    layer.weight.shape(),
                    layer.bias.len()
                ));
            }
            layer.weight.ensure_finite("layer weight")?;
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(TacError::NumericalFailure("non-finite bias".into()));
            }
        }
        Ok(Self { layers, config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn parameter_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(dim_err!(
                "embedder expects {} input columns, got {}",
                self.config.input_dim,
                x.cols()
            ));
        }
        Ok(())
    }

    fn affine(layer: &Layer, h: &Matrix) -> Matrix {
        let mut z = h.matmul_t(&layer.weight).expect("layer shapes chain");
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        z
    }

    fn activate(&self, z: &Matrix) -> Matrix {
        let act = self.config.activation;
        let data = z.as_slice().iter().map(|&v| act.apply(v)).collect();
        Matrix::from_raw(z.rows(), z.cols(), data)
    }

    /// Embeds a batch without keeping intermediate values.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &h);
            h = if i < last { self.activate(&z) } else { z };
        }
        h.ensure_finite("embedding")?;
        Ok(h)
    }

    /// Hidden layers apply the activation; the output layer is linear.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ActivationCache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &h);
            let next = if i < last { self.activate(&z) } else { z.clone() };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        h.ensure_finite("embedding")?;
        Ok((h, ActivationCache { inputs, pre }))
    }

    pub fn backward(&self, cache: &ActivationCache, grad_out: &Matrix) -> Result<ParameterGradients> {
        if cache.inputs.len() != self.layers.len() {
            return Err(TacError::InvalidState("activation cache belongs to a different network".into()));
        }
        let batch = cache.batch();
        if grad_out.shape() != (batch, self.config.output_dim) {
            return Err(TacError::InvalidState(format!(
                "upstream gradient is {:?}, forward output was {}x{}",
                grad_out.shape(),
                batch,
                self.config.output_dim
            )));
        }
        let act = self.config.activation;
        let last = self.layers.len() - 1;
        let mut weights = vec![Matrix::zeros(0, 0); self.layers.len()];
        let mut biases = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (gv, &z) in g.as_mut_slice().iter_mut().zip(cache.pre[i].as_slice()) {
                    *gv *= act.derivative(z);
                }
            }
            weights[i] = g.t_matmul(&cache.inputs[i])?;
            let mut db = vec![0.0; g.cols()];
            for r in g.row_iter() {
                for (d, v) in db.iter_mut().zip(r) {
                    *d += v;
                }
            }
            biases[i] = db;
            if i > 0 {
                g = g.matmul(&self.layers[i].weight)?;
            }
        }
        Ok(ParameterGradients { weights, biases })
    }

    /// One optimizer step on the embedder's own parameters.
    pub fn apply_gradients(&mut self, st: &mut OptimizerState, g: &ParameterGradients) -> Result<()> {
        let grads = g.slices();
        let mut params = self.parameter_slices_mut();
        st.update(&mut params, &grads)
    }
}

/// Adam state over an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    #[serde(skip)]
    pub(crate) first_moment: Vec<Vec<f64>>,
    #[serde(skip)]
    pub(crate) second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

    /// Zeroed moments for tensors of the given lengths.
    pub fn new(tensor_lens: &[usize], learning_rate: f64) -> Self {
        Self {
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_embedder(e: &Embedder, learning_rate: f64) -> Self {
        let lens: Vec<usize> = e.parameter_slices().iter().map(|s| s.len()).collect();
        Self::new(&lens, learning_rate)
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    pub(crate) fn set_moments(&mut self, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) {
        self.first_moment = first;
        self.second_moment = second;
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(dim_err!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first_moment[i].len() {
                return Err(dim_err!("tensor {i}: parameter {} vs gradient {}", p.len(), g.len()));
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TacError::NumericalFailure("non-finite gradient".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(TacError::NumericalFailure("parameters became non-finite".into()));
        }
        Ok(())
    }
}
