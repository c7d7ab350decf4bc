//! Fine-tunes from the encoder before pretraining, at the best validation
//! loss and at the last epoch.

use ssl_har::engine::{FinetuneConfig, FinetuneMode, LabelBudget, PretextRunConfig};
use ssl_har::harness::{render_stopping_table, stopping_point_study, Ledger, MatrixConfig};
use ssl_har::ingest::{build_fold_plan, ingest_recordings, IngestOptions, WindowedDataset};
use ssl_har::models::{ClassifierConfig, EncoderConfig};
use ssl_har::objectives::PretextKind;
use ssl_har::synth::{generate, SyntheticSpec};

fn corpus(name: &str, users: usize, unlabelled: bool, seed: u64) -> anyhow::Result<WindowedDataset> {
    let mut spec = SyntheticSpec::sinusoids(name, users, &[1.0, 4.0, 9.0], 40.0);
    spec.unlabelled = unlabelled;
    let (m, recs) = generate(&spec, seed)?;
    Ok(ingest_recordings(&m, &recs, &IngestOptions::default())?)
}

fn main() -> anyhow::Result<()> {
    let ds = corpus("toy", 10, false, 0)?;
    let capture = corpus("capture", 6, true, 1)?;
    let plan = build_fold_plan(&ds.users(), 5, 0)?;
    let cu = capture.users();

    let encoder = EncoderConfig {
        channels: vec![8, 8, 16],
        representation_dim: 16,
        ..EncoderConfig::default()
    };
    let pretext = PretextRunConfig {
        max_epochs: 6,
        sample_fraction: 0.5,
        batch_size: 32,
        encoder: encoder.clone(),
        ..PretextRunConfig::new(PretextKind::Cpc)
    };
    let cfg = MatrixConfig {
        seeds: vec![0, 1],
        folds: Some(vec![0, 1]),
        finetune: FinetuneConfig {
            max_epochs: 5,
            batch_size: 16,
            encoder,
            classifier: ClassifierConfig {
                hidden: vec![16, 16, 16],
                ..ClassifierConfig::default()
            },
            ..FinetuneConfig::new(FinetuneMode::Tuned)
        },
        ..MatrixConfig::default()
    };
    let dir = tempfile::tempdir()?;
    let ledger = Ledger::open(dir.path())?;
    let (study, _) = stopping_point_study(
        &ds,
        &plan,
        &pretext,
        &capture.windows_for(&cu[..5]),
        &capture.windows_for(&cu[5..]),
        LabelBudget::PerClass(10),
        &cfg,
        &ledger,
    )?;
    for s in &study.stages {
        println!("{:?}: epoch {} val loss {:.4}", s.stage, s.epoch, s.val_loss);
    }
    print!("{}", render_stopping_table(&study.rows));
    Ok(())
}
