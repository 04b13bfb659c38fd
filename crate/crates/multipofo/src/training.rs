//! Two-stage training.
//!
//! Stage 1 trains the encoder and decoder jointly on reconstruction of the
//! padded inputs, with samples from every enabled scale pooled into one
//! shuffled set. Stage 2 freezes the encoder (and leaves the decoder
//! untouched) and trains only the linear head on the prediction loss.
//! Per-sample losses are summed squared errors; gradients are averaged
//! over the batch so the learning rate does not depend on batch size.
//!
//! The loop is strictly sequential: one seed determines the shuffles, the
//! batch order and therefore every parameter bit.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{DataConfig, RunConfig};
use crate::data::{fill_gaps, ingest_csv, split, CsvSchema, Scaler, TimeSeries};
use crate::error::{with_stage, Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::MultipofoModel;
use crate::multiscale::{build_samples, l_max as compute_l_max, Sample};
use crate::nn::{mse_loss, seed_rng, Adam, AdamHyper, GradientTape, TrainRng};
use crate::synth::generate_many;

/// How samples from different scales are arranged into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMixing {
    /// All scales shuffled into one pool (the shared-encoder default).
    #[default]
    Pooled,
    /// Round-robin over per-scale batches.
    Alternating,
}

/// Knobs for both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_stage1_epochs")]
    pub stage1_epochs: usize,
    #[serde(default = "default_stage2_epochs")]
    pub stage2_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// When set, reconstruction loss ignores the zero-padded tail of each
    /// input instead of scoring the whole padded vector.
    #[serde(default)]
    pub masked_reconstruction: bool,
    /// When set, targets cover the full next period (`L` steps) instead of
    /// the default `L - 1`.
    #[serde(default)]
    pub target_full_period: bool,
    #[serde(default)]
    pub scale_mixing: ScaleMixing,
}

fn default_stage1_epochs() -> usize {
    50
}

fn default_stage2_epochs() -> usize {
    30
}

fn default_batch_size() -> usize {
    32
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: default_stage1_epochs(),
            stage2_epochs: default_stage2_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            seed: 0,
            masked_reconstruction: false,
            target_full_period: false,
            scale_mixing: ScaleMixing::Pooled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs == 0 || self.stage2_epochs == 0 {
            return Err(Error::Config("epoch counts must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be finite and >= 0".to_string()));
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper::with_lr(self.learning_rate)
    }
}

/// One logged epoch: `stage` is 1 (reconstruction) or 2 (prediction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub stage: u8,
    pub loss: f64,
}

/// Loss trajectory and run bookkeeping for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub entries: Vec<EpochLoss>,
    /// Samples contributed by each enabled scale (name -> count).
    pub per_scale_counts: std::collections::BTreeMap<String, usize>,
    pub wall_time_secs: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl TrainLog {
    /// Writes the `epoch,stage,loss` CSV.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,stage,loss")?;
        for e in &self.entries {
            writeln!(w, "{},{},{}", e.epoch, e.stage, e.loss)?;
        }
        Ok(())
    }
}

/// Stage 1: joint encoder + decoder reconstruction training.
///
/// The head is not part of the update set and stays bit-identical.
pub fn train_stage1(
    model: &mut MultipofoModel,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut TrainRng,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation("stage 1 needs at least one sample".to_string()));
    }
    if model.frozen_encoder() {
        return Err(Error::State(
            "stage 1 requires an unfrozen encoder".to_string(),
        ));
    }
    let enc_n = model.encoder().len();
    let named: Vec<(String, usize)> = (0..enc_n)
        .map(|i| (format!("encoder.{i}"), i))
        .chain((0..model.decoder().len()).map(|i| (format!("decoder.{i}"), enc_n + i)))
        .collect();
    let mut adam = {
        let layers = model
            .encoder()
            .iter()
            .chain(model.decoder().iter())
            .collect::<Vec<_>>();
        Adam::new(
            cfg.hyper(),
            named.iter().map(|(n, i)| (n.as_str(), layers[*i])),
        )
    };
    let mut tape = GradientTape::for_layers(model.encoder().iter().chain(model.decoder().iter()));

    let mut log = Vec::with_capacity(cfg.stage1_epochs);
    for epoch in 1..=cfg.stage1_epochs {
        let batches = epoch_batches(samples, cfg, rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in batches.iter().enumerate() {
            tape.clear();
            let inv_batch = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in batch.iter() {
                let sample = &samples[idx];
                batch_loss += reconstruction_step(model, sample, cfg, inv_batch, &mut tape)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Train {
                    location: format!("stage 1 epoch {epoch} batch {batch_no}"),
                    message: "non-finite loss".to_string(),
                });
            }
            epoch_loss += batch_loss;
            let mut layers = model.stage1_layers_mut();
            adam.step(&mut layers, &tape)?;
        }
        log.push(EpochLoss {
            epoch,
            stage: 1,
            loss: epoch_loss / samples.len() as f64,
        });
    }
    Ok(log)
}

/// One forward/backward pass through encoder + decoder on `sample`,
/// accumulating gradients scaled by `grad_scale`. Returns the unscaled
/// per-sample loss.
fn reconstruction_step(
    model: &MultipofoModel,
    sample: &Sample,
    cfg: &TrainConfig,
    grad_scale: f64,
    tape: &mut GradientTape,
) -> Result<f64> {
    let enc_n = model.encoder().len();
    // the embedded input is zero between the window and the one-hot tail;
    // the first layer can skip that stretch
    let l_max = model.l_max();
    let segments = [(0, sample.valid_len), (l_max, l_max + model.n_scales())];
    let mut x =
        model.encoder()[0].forward_cached_segments(&sample.embedded, &segments, &mut tape.layers[0])?;
    for (li, layer) in model.encoder().iter().enumerate().skip(1) {
        x = layer.forward_cached(&x, &mut tape.layers[li])?;
    }
    for (li, layer) in model.decoder().iter().enumerate() {
        x = layer.forward_cached(&x, &mut tape.layers[enc_n + li])?;
    }
    let (loss, mut grad) = mse_loss(&x, &sample.padded_input)?;
    let loss = if cfg.masked_reconstruction {
        // score only the real (unpadded) entries
        let mut masked = 0.0;
        for (i, g) in grad.iter_mut().enumerate() {
            if i >= sample.valid_len {
                *g = 0.0;
            }
        }
        for i in 0..sample.valid_len {
            let d = x[i] - sample.padded_input[i];
            masked += d * d;
        }
        masked
    } else {
        loss
    };
    for g in &mut grad {
        *g *= grad_scale;
    }
    let mut upstream = grad;
    for (li, layer) in model.decoder().iter().enumerate().rev() {
        upstream = layer.backward(&upstream, &mut tape.layers[enc_n + li])?;
    }
    for (li, layer) in model.encoder().iter().enumerate().skip(1).rev() {
        upstream = layer.backward(&upstream, &mut tape.layers[li])?;
    }
    // nothing consumes the input gradient of the first layer
    model.encoder()[0].backward_params_only(&upstream, &mut tape.layers[0])?;
    Ok(loss)
}

/// Stage 2: head-only prediction training on a frozen encoder.
///
/// The latent vector of each sample is fixed once the encoder is frozen,
/// so it is computed once up front; the decoder takes no part.
pub fn train_stage2(
    model: &mut MultipofoModel,
    samples: &[Sample],
    cfg: &TrainConfig,
    rng: &mut TrainRng,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation("stage 2 needs at least one sample".to_string()));
    }
    if !model.frozen_encoder() {
        return Err(Error::State(
            "stage 2 requires a frozen encoder; call freeze_encoder after stage 1".to_string(),
        ));
    }
    if model.horizon() != 1 {
        return Err(Error::Config(format!(
            "stage 2 trains against scalar max targets; model horizon is {}",
            model.horizon()
        )));
    }
    let embedded: Vec<&[f64]> = samples.iter().map(|s| s.embedded.as_slice()).collect();
    let latents = model.encode_batch(&embedded)?;

    let mut adam = Adam::new(cfg.hyper(), [("head", model.head())]);
    let mut tape = GradientTape::for_layers([model.head()]);

    let mut log = Vec::with_capacity(cfg.stage2_epochs);
    for epoch in 1..=cfg.stage2_epochs {
        let batches = epoch_batches(samples, cfg, rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in batches.iter().enumerate() {
            tape.clear();
            let inv_batch = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in batch.iter() {
                let pred = model
                    .head()
                    .forward_cached(&latents[idx], &mut tape.layers[0])?;
                let (loss, mut grad) = mse_loss(&pred, &[samples[idx].target])?;
                for g in &mut grad {
                    *g *= inv_batch;
                }
                model.head().backward(&grad, &mut tape.layers[0])?;
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Train {
                    location: format!("stage 2 epoch {epoch} batch {batch_no}"),
                    message: "non-finite loss".to_string(),
                });
            }
            epoch_loss += batch_loss;
            adam.step(&mut [model.head_mut()], &tape)?;
        }
        log.push(EpochLoss {
            epoch,
            stage: 2,
            loss: epoch_loss / samples.len() as f64,
        });
    }
    Ok(log)
}

/// Batch index lists for one epoch under the configured mixing policy.
/// Both policies reshuffle every epoch with the run RNG.
fn epoch_batches(samples: &[Sample], cfg: &TrainConfig, rng: &mut TrainRng) -> Vec<Vec<usize>> {
    match cfg.scale_mixing {
        ScaleMixing::Pooled => {
            let mut indices: Vec<usize> = (0..samples.len()).collect();
            indices.shuffle(rng);
            indices.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
        }
        ScaleMixing::Alternating => {
            let n_scales = samples.iter().map(|s| s.scale_index).max().unwrap_or(0) + 1;
            let mut per_scale: Vec<Vec<usize>> = vec![Vec::new(); n_scales];
            for (i, s) in samples.iter().enumerate() {
                per_scale[s.scale_index].push(i);
            }
            let mut queues: Vec<std::collections::VecDeque<Vec<usize>>> = per_scale
                .iter_mut()
                .map(|indices| {
                    indices.shuffle(rng);
                    indices.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
                })
                .collect();
            let mut batches = Vec::new();
            loop {
                let mut drained = true;
                for q in &mut queues {
                    if let Some(b) = q.pop_front() {
                        batches.push(b);
                        drained = false;
                    }
                }
                if drained {
                    break;
                }
            }
            batches
        }
    }
}

/// Loads the configured data source: CSV ingestion or synthetic
/// generation.
pub fn load_series(cfg: &RunConfig) -> Result<Vec<TimeSeries>> {
    match &cfg.data {
        DataConfig::Csv {
            path, step_minutes, ..
        } => {
            let schema = CsvSchema {
                step: chrono::Duration::minutes(*step_minutes),
            };
            ingest_csv(path, &schema)
        }
        DataConfig::Synth { circuits } => generate_many(circuits),
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
    pub log: TrainLog,
}

/// The full two-stage pipeline: fill gaps, split, fit scalers on the train
/// partition, build per-scale samples, train stage 1, freeze, train
/// stage 2, evaluate on the test partition. Fully reproducible from
/// `(raw, config)`: the seed drives initialization and every shuffle.
pub fn run_pipeline(raw: &[TimeSeries], cfg: &RunConfig) -> Result<PipelineOutput> {
    let started = Instant::now();
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let scales = cfg.enabled_scales().map_err(|e| e.in_stage("config"))?;
    if cfg.model.horizon != 1 {
        return Err(Error::Config(format!(
            "the pipeline builds scalar max targets; model.horizon must be 1, got {}",
            cfg.model.horizon
        ))
        .in_stage("config"));
    }
    if raw.is_empty() {
        return Err(Error::Validation("no input series".to_string()).in_stage("ingest"));
    }
    let l_max = compute_l_max(&scales);
    let config_hash = cfg.config_hash();
    let seed = cfg.train.seed;
    let split_spec = cfg.split.to_spec();
    let fill_policy = cfg.data.fill_policy();

    let filled = with_stage("fill-gaps", || {
        raw.iter().map(|s| fill_gaps(s, fill_policy)).collect::<Result<Vec<_>>>()
    })?;

    let partitions = with_stage("split", || {
        filled.iter().map(|s| split(s, &split_spec)).collect::<Result<Vec<_>>>()
    })?;

    let mut scalers: BTreeMap<String, Scaler> = BTreeMap::new();
    let mut train_norm = Vec::with_capacity(partitions.len());
    let mut test_norm = Vec::with_capacity(partitions.len());
    with_stage("fit-scalers", || {
        for (train, test) in &partitions {
            let descriptor = format!(
                "{}:{}..{}",
                train.circuit_id,
                train.start_time.to_rfc3339(),
                train.end_time().to_rfc3339()
            );
            let scaler = Scaler::fit(&train.values, descriptor)?;
            train_norm.push(TimeSeries {
                values: scaler.transform_slice(&train.values),
                ..train.clone()
            });
            test_norm.push(TimeSeries {
                values: scaler.transform_slice(&test.values),
                ..test.clone()
            });
            scalers.insert(train.circuit_id.clone(), scaler);
        }
        Ok(())
    })?;

    let full_period = cfg.train.target_full_period;
    let train_samples = with_stage("build-samples", || {
        build_samples(&train_norm, &scales, l_max, full_period)
    })?;
    let test_samples = with_stage("build-samples", || {
        build_samples(&test_norm, &scales, l_max, full_period)
    })?;

    let mut per_scale_counts = BTreeMap::new();
    for scale in &scales {
        let count = train_samples
            .iter()
            .filter(|s| s.scale_index == scale.one_hot_index)
            .count();
        per_scale_counts.insert(scale.name.to_string(), count);
    }

    let mut rng = seed_rng(seed);
    let mut model = with_stage("init-model", || {
        MultipofoModel::new(l_max, scales.len(), &cfg.model, &mut rng)
    })?;

    let mut entries = with_stage("stage1", || {
        train_stage1(&mut model, &train_samples, &cfg.train, &mut rng)
    })?;
    model.freeze_encoder();
    entries.extend(with_stage("stage2", || {
        train_stage2(&mut model, &train_samples, &cfg.train, &mut rng)
    })?);

    let circuits: Vec<String> = scalers.keys().cloned().collect();
    let groups = cfg.groups_for(&circuits).map_err(|e| e.in_stage("evaluate"))?;
    let report = with_stage("evaluate", || {
        evaluate(
            &model,
            &train_samples,
            &test_samples,
            &scalers,
            &scales,
            &groups,
            seed,
            &config_hash,
        )
    })?;

    let meta = CheckpointMeta {
        l_max,
        n_scales: scales.len(),
        latent_dim: cfg.model.latent_dim,
        hidden: cfg.model.hidden.clone(),
        horizon: cfg.model.horizon,
        frozen_encoder: model.frozen_encoder(),
        frozen_encoder_hash: model.frozen_encoder_hash().map(str::to_string),
        scales: scales.clone(),
        scalers,
        step_minutes: cfg.step_minutes(),
        seed,
        config_hash: config_hash.clone(),
    };
    let log = TrainLog {
        entries,
        per_scale_counts,
        wall_time_secs: started.elapsed().as_secs_f64(),
        seed,
        config_hash,
    };
    Ok(PipelineOutput {
        checkpoint: Checkpoint { model, meta },
        report,
        log,
    })
}

/// Mean per-sample reconstruction loss of `model` on `samples`.
pub fn reconstruction_loss(model: &MultipofoModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("no samples".to_string()));
    }
    let mut total = 0.0;
    for s in samples {
        let z = model.encode(&s.embedded)?;
        let recon = model.reconstruct(&z)?;
        let (loss, _) = mse_loss(&recon, &s.padded_input)?;
        total += loss;
    }
    Ok(total / samples.len() as f64)
}
