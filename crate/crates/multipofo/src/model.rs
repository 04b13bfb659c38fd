//! The forecasting model: shared encoder, mirrored decoder, linear head.
//!
//! The encoder is a three-layer ReLU MLP mapping the embedded input
//! (length `L_max + I`) to a latent vector `z` of dimension `D`. The
//! decoder mirrors the encoder dimensions back to `L_max` and reconstructs
//! the padded window (not the embedding); its final layer is linear so
//! out-of-range values survive. The head is a single linear layer
//! `W_pred z + b_pred` of output length `H`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, TrainRng};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Model width configuration. `hidden` lists the two intermediate encoder
/// widths; the decoder mirrors them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 128]
}

fn default_latent_dim() -> usize {
    64
}

fn default_horizon() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            latent_dim: default_latent_dim(),
            horizon: default_horizon(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != 2 {
            return Err(Error::Config(format!(
                "model.hidden must list exactly 2 widths (3-layer encoder), got {}",
                self.hidden.len()
            )));
        }
        if self.hidden.iter().any(|w| *w == 0) || self.latent_dim == 0 {
            return Err(Error::Config("model widths must be >= 1".to_string()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("model.horizon must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Shared-encoder forecasting model.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipofoModel {
    encoder: Vec<DenseLayer>,
    decoder: Vec<DenseLayer>,
    head: DenseLayer,
    l_max: usize,
    n_scales: usize,
    latent_dim: usize,
    horizon: usize,
    frozen_encoder: bool,
    /// Hash of the encoder parameters recorded when the encoder was frozen.
    frozen_encoder_hash: Option<String>,
}

impl MultipofoModel {
    /// Builds a freshly initialized model. ReLU layers use He-uniform
    /// initialization, linear layers Glorot-uniform; biases start at zero.
    /// Layer construction order is fixed, so one seed pins all weights.
    pub fn new(l_max: usize, n_scales: usize, cfg: &ModelConfig, rng: &mut TrainRng) -> Result<Self> {
        cfg.validate()?;
        if l_max == 0 || n_scales == 0 {
            return Err(Error::Config(
                "model requires l_max >= 1 and at least one scale".to_string(),
            ));
        }
        let input_dim = l_max + n_scales;
        let enc_dims = [input_dim, cfg.hidden[0], cfg.hidden[1], cfg.latent_dim];
        let mut encoder = Vec::with_capacity(3);
        for w in enc_dims.windows(2) {
            encoder.push(DenseLayer::init_he(w[0], w[1], Activation::Relu, rng));
        }
        let dec_dims = [cfg.latent_dim, cfg.hidden[1], cfg.hidden[0], l_max];
        let mut decoder = Vec::with_capacity(3);
        for (i, w) in dec_dims.windows(2).enumerate() {
            let layer = if i == 2 {
                DenseLayer::init_glorot(w[0], w[1], Activation::Identity, rng)
            } else {
                DenseLayer::init_he(w[0], w[1], Activation::Relu, rng)
            };
            decoder.push(layer);
        }
        let head = DenseLayer::init_glorot(cfg.latent_dim, cfg.horizon, Activation::Identity, rng);
        Ok(MultipofoModel {
            encoder,
            decoder,
            head,
            l_max,
            n_scales,
            latent_dim: cfg.latent_dim,
            horizon: cfg.horizon,
            frozen_encoder: false,
            frozen_encoder_hash: None,
        })
    }

    /// Rebuilds a model from explicit layers (checkpoint loading).
    pub(crate) fn from_parts(
        encoder: Vec<DenseLayer>,
        decoder: Vec<DenseLayer>,
        head: DenseLayer,
        l_max: usize,
        n_scales: usize,
        frozen_encoder: bool,
        frozen_encoder_hash: Option<String>,
    ) -> Result<Self> {
        if encoder.len() != 3 || decoder.len() != 3 {
            return Err(Error::Checkpoint(format!(
                "expected 3 encoder and 3 decoder layers, got {} and {}",
                encoder.len(),
                decoder.len()
            )));
        }
        if encoder[0].in_dim() != l_max + n_scales {
            return Err(Error::Checkpoint(format!(
                "encoder input dim {} does not match l_max + n_scales = {}",
                encoder[0].in_dim(),
                l_max + n_scales
            )));
        }
        if decoder[2].out_dim() != l_max {
            return Err(Error::Checkpoint(format!(
                "decoder output dim {} does not match l_max {}",
                decoder[2].out_dim(),
                l_max
            )));
        }
        let latent_dim = encoder[2].out_dim();
        if decoder[0].in_dim() != latent_dim || head.in_dim() != latent_dim {
            return Err(Error::Checkpoint(
                "latent dimension mismatch between encoder, decoder and head".to_string(),
            ));
        }
        let horizon = head.out_dim();
        Ok(MultipofoModel {
            encoder,
            decoder,
            head,
            l_max,
            n_scales,
            latent_dim,
            horizon,
            frozen_encoder,
            frozen_encoder_hash,
        })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn input_dim(&self) -> usize {
        self.l_max + self.n_scales
    }

    pub fn frozen_encoder(&self) -> bool {
        self.frozen_encoder
    }

    pub fn encoder(&self) -> &[DenseLayer] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[DenseLayer] {
        &self.decoder
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn encoder_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.decoder
    }

    pub fn head_mut(&mut self) -> &mut DenseLayer {
        &mut self.head
    }

    /// Encoder and decoder layers in optimizer order, for stage-1 updates.
    pub fn stage1_layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .collect()
    }

    /// Encoder pass: embedded input of length `L_max + I` to latent `z`.
    pub fn encode(&self, embedded: &[f64]) -> Result<Vec<f64>> {
        if embedded.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "encode input".to_string(),
                expected: self.input_dim(),
                actual: embedded.len(),
            });
        }
        let mut x = self.encoder[0].forward(embedded)?;
        for layer in &self.encoder[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Decoder pass: latent `z` to a reconstruction of the padded window.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::Shape {
                context: "reconstruct input".to_string(),
                expected: self.latent_dim,
                actual: z.len(),
            });
        }
        let mut x = self.decoder[0].forward(z)?;
        for layer in &self.decoder[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Head pass: `W_pred z + b_pred`, no activation.
    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::Shape {
                context: "predict input".to_string(),
                expected: self.latent_dim,
                actual: z.len(),
            });
        }
        self.head.forward(z)
    }

    /// Encode then predict.
    pub fn forecast(&self, embedded: &[f64]) -> Result<Vec<f64>> {
        let z = self.encode(embedded)?;
        self.predict(&z)
    }

    /// Sequential batch encoding.
    pub fn encode_batch_seq<S: AsRef<[f64]>>(&self, inputs: &[S]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.encode(x.as_ref())).collect()
    }

    /// Data-parallel batch encoding; order-preserving, so output is
    /// identical to the sequential path.
    #[cfg(feature = "parallel")]
    pub fn encode_batch_par<S: AsRef<[f64]> + Sync>(&self, inputs: &[S]) -> Result<Vec<Vec<f64>>> {
        inputs.par_iter().map(|x| self.encode(x.as_ref())).collect()
    }

    /// Batch encoding, parallel when the feature is enabled.
    pub fn encode_batch<S: AsRef<[f64]> + Sync>(&self, inputs: &[S]) -> Result<Vec<Vec<f64>>> {
        #[cfg(feature = "parallel")]
        {
            self.encode_batch_par(inputs)
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.encode_batch_seq(inputs)
        }
    }

    /// Sequential batch forecast (encode + predict per input).
    pub fn forecast_batch_seq<S: AsRef<[f64]>>(&self, inputs: &[S]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.forecast(x.as_ref())).collect()
    }

    #[cfg(feature = "parallel")]
    pub fn forecast_batch_par<S: AsRef<[f64]> + Sync>(
        &self,
        inputs: &[S],
    ) -> Result<Vec<Vec<f64>>> {
        inputs.par_iter().map(|x| self.forecast(x.as_ref())).collect()
    }

    /// Batch forecast, parallel when the feature is enabled.
    pub fn forecast_batch<S: AsRef<[f64]> + Sync>(&self, inputs: &[S]) -> Result<Vec<Vec<f64>>> {
        #[cfg(feature = "parallel")]
        {
            self.forecast_batch_par(inputs)
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.forecast_batch_seq(inputs)
        }
    }

    /// Marks every encoder layer frozen and records the parameter hash so
    /// later stages can prove the encoder never moved.
    pub fn freeze_encoder(&mut self) {
        for layer in &mut self.encoder {
            layer.set_frozen(true);
        }
        self.frozen_encoder = true;
        self.frozen_encoder_hash = Some(self.encoder_hash());
    }

    pub fn frozen_encoder_hash(&self) -> Option<&str> {
        self.frozen_encoder_hash.as_deref()
    }

    pub fn encoder_hash(&self) -> String {
        hash_layers(&self.encoder)
    }

    pub fn decoder_hash(&self) -> String {
        hash_layers(&self.decoder)
    }

    pub fn head_hash(&self) -> String {
        hash_layers(std::slice::from_ref(&self.head))
    }
}

/// SHA-256 over the little-endian parameter image of a layer stack.
pub fn hash_layers(layers: &[DenseLayer]) -> String {
    let mut bytes = Vec::new();
    for layer in layers {
        layer.extend_le_bytes(&mut bytes);
    }
    hex::encode(Sha256::digest(&bytes))
}
