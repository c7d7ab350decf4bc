//! Pretrains a small encoder with each pretext task and prints the
//! before / best / last checkpoint losses.
//!
//! `cargo run --example pretrain -- cpc` trains a single task.

use ssl_har::engine::{train_pretext, PretextRunConfig};
use ssl_har::ingest::{split_capture_style, ingest_recordings, IngestOptions};
use ssl_har::models::EncoderConfig;
use ssl_har::objectives::PretextKind;
use ssl_har::synth::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let tasks: Vec<PretextKind> = match std::env::args().nth(1) {
        Some(t) => vec![t.parse()?],
        None => PretextKind::ALL.to_vec(),
    };
    let mut spec = SyntheticSpec::sinusoids("unlabelled", 6, &[1.0, 3.0, 8.0], 60.0);
    spec.unlabelled = true;
    let (m, recs) = generate(&spec, 5)?;
    let ds = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let (train_users, val_users) = split_capture_style(&ds.users(), 1, 0)?;
    let (train, val) = (ds.windows_for(&train_users), ds.windows_for(&val_users));

    for task in tasks {
        let cfg = PretextRunConfig {
            max_epochs: 8,
            sample_fraction: 0.5,
            batch_size: 32,
            encoder: EncoderConfig {
                channels: vec![8, 16, 16],
                representation_dim: 32,
                ..EncoderConfig::default()
            },
            ..PretextRunConfig::new(task)
        };
        let out = train_pretext(&cfg, &train, &val)?;
        let t = &out.triplet;
        println!(
            "{:<15} before {:.4} | best {:.4} (epoch {}) | last {:.4} (epoch {})",
            task.name(),
            t.before.meta.val_loss, t.best.meta.val_loss, t.best.meta.epoch, t.last.meta.val_loss, t.last.meta.epoch
        );
    }
    Ok(())
}
