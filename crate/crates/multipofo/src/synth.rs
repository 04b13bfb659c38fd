//! Synthetic load generator: a superposition of periodic components plus
//! Gaussian noise, with closed-form target oracles for noise-free specs.

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::multiscale::ScaleSpec;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// One sinusoidal component: `amplitude * sin(2*pi*t/period + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub period_steps: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Full specification of one synthetic circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub circuit_id: String,
    pub duration_steps: usize,
    #[serde(default = "default_step_minutes")]
    pub step_minutes: i64,
    #[serde(default = "default_start_time")]
    pub start_time: DateTime<Utc>,
    pub components: Vec<Component>,
    pub base_load: f64,
    #[serde(default)]
    pub noise_std: f64,
    pub seed: u64,
}

fn default_step_minutes() -> i64 {
    30
}

fn default_start_time() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2015-01-01T00:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration_steps == 0 {
            return Err(Error::Config(format!(
                "synth circuit {}: duration_steps must be >= 1",
                self.circuit_id
            )));
        }
        if self.step_minutes <= 0 {
            return Err(Error::Config(format!(
                "synth circuit {}: step_minutes must be positive",
                self.circuit_id
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config(format!(
                "synth circuit {}: noise_std must be >= 0",
                self.circuit_id
            )));
        }
        let mut amp_sum = 0.0;
        for c in &self.components {
            if c.amplitude < 0.0 {
                return Err(Error::Config(format!(
                    "synth circuit {}: component amplitudes must be >= 0",
                    self.circuit_id
                )));
            }
            if c.period_steps == 0 {
                return Err(Error::Config(format!(
                    "synth circuit {}: component period_steps must be >= 1",
                    self.circuit_id
                )));
            }
            amp_sum += c.amplitude;
        }
        // keeps the signal positive with probability ~1
        let floor = amp_sum + 4.0 * self.noise_std;
        if self.base_load < floor {
            return Err(Error::Config(format!(
                "synth circuit {}: base_load {} must be >= sum of amplitudes + 4*noise_std = {}",
                self.circuit_id, self.base_load, floor
            )));
        }
        Ok(())
    }

    /// Deterministic part of the signal at step `t`.
    pub fn signal_at(&self, t: usize) -> f64 {
        let mut x = self.base_load;
        for c in &self.components {
            let angle = 2.0 * std::f64::consts::PI * t as f64 / c.period_steps as f64 + c.phase;
            x += c.amplitude * angle.sin();
        }
        x
    }
}

/// Generates one circuit. With `noise_std = 0` the series is exactly the
/// deterministic signal; otherwise seeded Gaussian noise is added per step.
pub fn generate(spec: &SynthSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.duration_steps);
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::Config(format!("bad noise_std: {e}")))?;
        for t in 0..spec.duration_steps {
            values.push(spec.signal_at(t) + normal.sample(&mut rng));
        }
    } else {
        for t in 0..spec.duration_steps {
            values.push(spec.signal_at(t));
        }
    }
    Ok(TimeSeries {
        circuit_id: spec.circuit_id.clone(),
        start_time: spec.start_time,
        step: Duration::minutes(spec.step_minutes),
        values,
    })
}

/// Sequential generation of several independent circuits.
pub fn generate_many_seq(specs: &[SynthSpec]) -> Result<Vec<TimeSeries>> {
    specs.iter().map(generate).collect()
}

/// Data-parallel generation; each circuit owns its seed, so the output is
/// identical to the sequential path.
#[cfg(feature = "parallel")]
pub fn generate_many_par(specs: &[SynthSpec]) -> Result<Vec<TimeSeries>> {
    specs.par_iter().map(generate).collect()
}

/// Generates all circuits, in parallel when the feature is enabled.
pub fn generate_many(specs: &[SynthSpec]) -> Result<Vec<TimeSeries>> {
    #[cfg(feature = "parallel")]
    {
        generate_many_par(specs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        generate_many_seq(specs)
    }
}

/// Independent oracle for the max targets of a noise-free spec.
///
/// Evaluates the closed-form signal densely over each target slice using
/// its own anchor arithmetic; it shares nothing with the window builder.
/// The target covers `L - 1` future steps, or `L` with `full_period`.
pub fn oracle_max_targets(
    spec: &SynthSpec,
    scale: &ScaleSpec,
    full_period: bool,
) -> Result<Vec<f64>> {
    if spec.noise_std != 0.0 {
        return Err(Error::Validation(
            "oracle_max_targets requires a noise-free spec".to_string(),
        ));
    }
    spec.validate()?;
    let window = scale.window_len;
    let target_len = if full_period { window } else { window - 1 };
    let mut targets = Vec::new();
    let mut anchor_start = 0usize;
    while anchor_start + window + target_len <= spec.duration_steps {
        let from = anchor_start + window;
        let mut best = f64::NEG_INFINITY;
        for t in from..from + target_len {
            let v = spec.signal_at(t);
            if v > best {
                best = v;
            }
        }
        targets.push(best);
        anchor_start += scale.stride;
    }
    Ok(targets)
}
