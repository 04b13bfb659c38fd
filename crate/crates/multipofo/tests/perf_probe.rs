//! Temporary tuning probe; run with --ignored. Knobs via env vars.

use chrono::DateTime;
use std::collections::BTreeMap;

use multipofo::config::{DataConfig, RunConfig, ScaleConfig, SplitConfig};
use multipofo::model::ModelConfig;
use multipofo::multiscale::ScaleName;
use multipofo::synth::{Component, SynthSpec};
use multipofo::training::{load_series, run_pipeline, TrainConfig};

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_list(name: &str, default: [f64; 3]) -> [f64; 3] {
    match std::env::var(name) {
        Ok(v) => {
            let parts: Vec<f64> = v.split(',').map(|p| p.parse().unwrap()).collect();
            [parts[0], parts[1], parts[2]]
        }
        Err(_) => default,
    }
}

#[test]
#[ignore]
fn probe_full_scale_training_time() {
    let start_time = DateTime::parse_from_rfc3339("2015-01-01T00:00:00Z")
        .unwrap()
        .into();
    let amps = env_list("PROBE_AMPS", [50.0, 50.0, 50.0]);
    let strides = env_list("PROBE_STRIDES", [48.0, 336.0, 1440.0]);
    let noise = env_f64("PROBE_NOISE", 0.0);
    let lr = env_f64("PROBE_LR", 1e-3);
    let cfg = RunConfig {
        data: DataConfig::Synth {
            circuits: vec![SynthSpec {
                circuit_id: "c1".to_string(),
                duration_steps: 40320,
                step_minutes: 30,
                start_time,
                components: vec![
                    Component { period_steps: 48, amplitude: amps[0], phase: 0.0 },
                    Component { period_steps: 336, amplitude: amps[1], phase: 1.0 },
                    Component { period_steps: 1440, amplitude: amps[2], phase: 2.0 },
                ],
                base_load: amps.iter().sum::<f64>() + 4.0 * noise + 20.0,
                noise_std: noise,
                seed: 1,
            }],
        },
        split: SplitConfig {
            // 30240 steps = 630 days after start
            train_end: DateTime::parse_from_rfc3339("2016-09-22T00:00:00Z")
                .unwrap()
                .into(),
            test_start: None,
        },
        scales: vec![
            ScaleConfig { name: ScaleName::Daily, window_len: None, enabled: true, stride: Some(strides[0] as usize) },
            ScaleConfig { name: ScaleName::Weekly, window_len: None, enabled: true, stride: Some(strides[1] as usize) },
            ScaleConfig { name: ScaleName::Monthly, window_len: None, enabled: true, stride: Some(strides[2] as usize) },
        ],
        model: ModelConfig::default(),
        train: TrainConfig {
            stage1_epochs: 50,
            stage2_epochs: 30,
            batch_size: 32,
            learning_rate: lr,
            seed: 7,
            ..TrainConfig::default()
        },
        groups: BTreeMap::new(),
    };
    let series = load_series(&cfg).unwrap();
    let t1 = std::time::Instant::now();
    let out = run_pipeline(&series, &cfg).unwrap();
    println!("pipeline: {:?}", t1.elapsed());
    println!("samples per scale: {:?}", out.log.per_scale_counts);
    for r in &out.report.rows {
        println!(
            "{} {}: model {:.3} persistence {:.3} mean {:.3} (n={})",
            r.group, r.scale, r.model_mae_kw, r.persistence_mae_kw, r.train_mean_mae_kw, r.sample_count
        );
    }
    let s1_first = out.log.entries.iter().find(|e| e.stage == 1).unwrap().loss;
    let s1_last = out.log.entries.iter().filter(|e| e.stage == 1).last().unwrap().loss;
    let s2_last = out.log.entries.iter().filter(|e| e.stage == 2).last().unwrap().loss;
    println!("stage1 loss {s1_first:.6} -> {s1_last:.6}; stage2 final {s2_last:.8}");
}
