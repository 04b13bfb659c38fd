//! Dense layers and the gradient tape used by manual backprop.

use rand::Rng;

use super::matrix::Matrix;
use super::TrainRng;
use crate::error::{Error, Result};

/// Element-wise activation applied after the affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation. The ReLU subgradient
    /// at exactly 0 is taken as 0 so runs are deterministic.
    #[inline]
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            other => Err(Error::Checkpoint(format!(
                "unknown activation tag {other}"
            ))),
        }
    }
}

/// Dense layer `y = activation(W x + b)` with `W` stored `(out, in)`.
///
/// A frozen layer is excluded from optimizer updates; its parameters stay
/// bit-identical across any number of training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    frozen: bool,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape {
                context: "dense layer bias".to_string(),
                expected: weights.rows(),
                actual: bias.len(),
            });
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
            frozen: false,
        })
    }

    /// He-uniform initialization, the default for ReLU layers.
    pub fn init_he(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut TrainRng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        Self::init_uniform(in_dim, out_dim, limit, activation, rng)
    }

    /// Glorot-uniform initialization, used for the linear head.
    pub fn init_glorot(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut TrainRng,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self::init_uniform(in_dim, out_dim, limit, activation, rng)
    }

    fn init_uniform(
        in_dim: usize,
        out_dim: usize,
        limit: f64,
        activation: Activation,
        rng: &mut TrainRng,
    ) -> Self {
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for w in weights.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        DenseLayer {
            weights,
            bias: vec![0.0; out_dim],
            activation,
            frozen: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape {
                context: format!("dense layer input ({}x{})", self.out_dim(), self.in_dim()),
                expected: self.in_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    /// Pure forward pass: `activation(W x + b)`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut out = vec![0.0; self.out_dim()];
        for (o, slot) in out.iter_mut().enumerate() {
            let acc = self.bias[o] + dot(self.weights.row(o), input);
            *slot = self.activation.apply(acc);
        }
        Ok(out)
    }

    /// Forward pass that caches the input and pre-activations on `tape`
    /// so a later `backward` can run.
    pub fn forward_cached(&self, input: &[f64], tape: &mut LayerTape) -> Result<Vec<f64>> {
        let full = [(0usize, input.len())];
        self.forward_cached_segments(input, &full, tape)
    }

    /// Forward pass for inputs known to be zero outside `segments`
    /// (half-open index ranges). Skipping exact zeros leaves the affine
    /// sum unchanged; the segments are recorded on the tape so backward
    /// can skip the matching weight-gradient columns.
    pub fn forward_cached_segments(
        &self,
        input: &[f64],
        segments: &[(usize, usize)],
        tape: &mut LayerTape,
    ) -> Result<Vec<f64>> {
        self.check_input(input)?;
        tape.input.clear();
        tape.input.extend_from_slice(input);
        tape.segments.clear();
        tape.segments.extend_from_slice(segments);
        tape.pre.clear();
        tape.pre.resize(self.out_dim(), 0.0);
        let mut out = vec![0.0; self.out_dim()];
        for o in 0..self.out_dim() {
            let row = self.weights.row(o);
            let mut acc = self.bias[o];
            for &(s, e) in segments {
                acc += dot(&row[s..e], &input[s..e]);
            }
            tape.pre[o] = acc;
            out[o] = self.activation.apply(acc);
        }
        tape.cached = true;
        Ok(out)
    }

    /// Backward pass. Accumulates weight/bias gradients on the tape (so a
    /// mini-batch can sum contributions) and returns the gradient with
    /// respect to the layer input. Consumes the cached forward state.
    pub fn backward(&self, upstream: &[f64], tape: &mut LayerTape) -> Result<Vec<f64>> {
        Ok(self
            .backward_impl(upstream, tape, true)?
            .expect("input gradient requested"))
    }

    /// Backward pass that skips the input gradient; used for the first
    /// layer of a stack, where nothing consumes it.
    pub fn backward_params_only(&self, upstream: &[f64], tape: &mut LayerTape) -> Result<()> {
        self.backward_impl(upstream, tape, false)?;
        Ok(())
    }

    fn backward_impl(
        &self,
        upstream: &[f64],
        tape: &mut LayerTape,
        need_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        if !tape.cached {
            return Err(Error::State(
                "backward called without a cached forward pass".to_string(),
            ));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape {
                context: "dense layer upstream gradient".to_string(),
                expected: self.out_dim(),
                actual: upstream.len(),
            });
        }
        let in_dim = self.in_dim();
        let mut d_input = if need_input_grad {
            Some(vec![0.0; in_dim])
        } else {
            None
        };
        for o in 0..self.out_dim() {
            let d_z = upstream[o] * self.activation.grad(tape.pre[o]);
            tape.bias_grad[o] += d_z;
            let g_row = &mut tape.weight_grad.data_mut()[o * in_dim..(o + 1) * in_dim];
            for &(s, e) in &tape.segments {
                for (g, x) in g_row[s..e].iter_mut().zip(&tape.input[s..e]) {
                    *g += d_z * x;
                }
            }
            if let Some(d_input) = d_input.as_mut() {
                let w_row = self.weights.row(o);
                for (d, w) in d_input.iter_mut().zip(w_row) {
                    *d += w * d_z;
                }
            }
        }
        tape.cached = false;
        Ok(d_input)
    }

    /// Appends the little-endian image of weights then bias.
    pub fn extend_le_bytes(&self, out: &mut Vec<u8>) {
        self.weights.extend_le_bytes(out);
        for b in &self.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
}

/// Dot product with four independent accumulators. The split breaks the
/// floating-point dependency chain; the combination order is fixed, so the
/// result is reproducible.
#[inline]
fn dot(row: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(row.len(), x.len());
    let mut row_chunks = row.chunks_exact(4);
    let mut x_chunks = x.chunks_exact(4);
    let (mut a0, mut a1, mut a2, mut a3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (r, v) in (&mut row_chunks).zip(&mut x_chunks) {
        a0 += r[0] * v[0];
        a1 += r[1] * v[1];
        a2 += r[2] * v[2];
        a3 += r[3] * v[3];
    }
    let mut acc = (a0 + a1) + (a2 + a3);
    for (r, v) in row_chunks.remainder().iter().zip(x_chunks.remainder()) {
        acc += r * v;
    }
    acc
}

/// Per-layer gradient buffers plus the cached forward activations.
#[derive(Debug, Clone)]
pub struct LayerTape {
    input: Vec<f64>,
    pre: Vec<f64>,
    segments: Vec<(usize, usize)>,
    cached: bool,
    pub weight_grad: Matrix,
    pub bias_grad: Vec<f64>,
}

impl LayerTape {
    pub fn for_layer(layer: &DenseLayer) -> Self {
        LayerTape {
            input: Vec::with_capacity(layer.in_dim()),
            pre: Vec::with_capacity(layer.out_dim()),
            segments: Vec::with_capacity(2),
            cached: false,
            weight_grad: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias_grad: vec![0.0; layer.out_dim()],
        }
    }

    /// Zeroes accumulated gradients and drops any cached forward state.
    pub fn clear(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
        self.cached = false;
    }
}

/// Gradient buffers for a stack of layers, cleared between optimizer steps.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub layers: Vec<LayerTape>,
}

impl GradientTape {
    pub fn for_layers<'a>(layers: impl IntoIterator<Item = &'a DenseLayer>) -> Self {
        GradientTape {
            layers: layers.into_iter().map(LayerTape::for_layer).collect(),
        }
    }

    pub fn clear(&mut self) {
        for tape in &mut self.layers {
            tape.clear();
        }
    }
}
