#![allow(dead_code)]

use ssl_har::engine::{FinetuneConfig, FinetuneMode, PretextRunConfig};
use ssl_har::ingest::{ingest_recordings, IngestOptions, WindowedDataset};
use ssl_har::models::{ClassifierConfig, ContextAggregatorConfig, EncoderConfig, ProjectionConfig};
use ssl_har::objectives::{ObjectiveConfig, PretextKind};
use ssl_har::synth::{generate, SyntheticSpec};

/// A narrow encoder so end-to-end tests stay fast.
pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        channels: vec![8, 8, 16],
        kernels: vec![9, 5, 5],
        dropout: 0.1,
        representation_dim: 16,
    }
}

pub fn small_classifier() -> ClassifierConfig {
    ClassifierConfig {
        hidden: vec![16, 16, 16],
        dropout: 0.2,
    }
}

pub fn small_objective() -> ObjectiveConfig {
    ObjectiveConfig {
        cpc: ContextAggregatorConfig { hidden: 16, horizon: 4 },
        projection: ProjectionConfig { hidden: 16, output: 8 },
        ..ObjectiveConfig::default()
    }
}

pub fn small_pretext(task: PretextKind, epochs: usize) -> PretextRunConfig {
    PretextRunConfig {
        max_epochs: epochs,
        patience: epochs.min(5),
        sample_fraction: 0.5,
        batch_size: 32,
        encoder: small_encoder(),
        objective: small_objective(),
        ..PretextRunConfig::new(task)
    }
}

pub fn small_finetune(mode: FinetuneMode, epochs: usize) -> FinetuneConfig {
    FinetuneConfig {
        max_epochs: epochs,
        patience: epochs.min(5),
        batch_size: 16,
        encoder: small_encoder(),
        classifier: small_classifier(),
        ..FinetuneConfig::new(mode)
    }
}

pub fn dataset(name: &str, n_users: usize, freqs: &[f64], duration_s: f64, seed: u64) -> WindowedDataset {
    let spec = SyntheticSpec::sinusoids(name, n_users, freqs, duration_s);
    let (m, recs) = generate(&spec, seed).unwrap();
    ingest_recordings(&m, &recs, &IngestOptions::default()).unwrap()
}
