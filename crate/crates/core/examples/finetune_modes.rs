//! Baseline, frozen and tuned fine-tuning from one pretrained encoder.

use ssl_har::engine::{finetune, train_pretext, FinetuneConfig, FinetuneMode, LabelBudget, PretextRunConfig};
use ssl_har::ingest::{ingest_recordings, IngestOptions};
use ssl_har::models::{ClassifierConfig, EncoderConfig};
use ssl_har::objectives::PretextKind;
use ssl_har::synth::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let freqs = [1.0, 3.0, 6.0, 12.0];
    let mut target = SyntheticSpec::sinusoids("target", 8, &freqs, 120.0);
    target.orientation_jitter = std::f64::consts::PI / 8.0;
    let (m, recs) = generate(&target, 1)?;
    let ds = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let users = ds.users();
    let (train, val, test) = (ds.windows_for(&users[..5]), ds.windows_for(&users[5..7]), ds.labelled_for(&users[7..]));

    let mut source = SyntheticSpec::sinusoids("source", 10, &freqs, 120.0);
    source.unlabelled = true;
    source.orientation_jitter = target.orientation_jitter;
    let (m, recs) = generate(&source, 2)?;
    let src = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let su = src.users();

    let encoder = EncoderConfig {
        channels: vec![16, 32, 32],
        representation_dim: 64,
        ..EncoderConfig::default()
    };
    let pretext = PretextRunConfig {
        max_epochs: 15,
        sample_fraction: 0.5,
        batch_size: 32,
        encoder: encoder.clone(),
        ..PretextRunConfig::new(PretextKind::Cpc)
    };
    let pre = train_pretext(&pretext, &src.windows_for(&su[..8]), &src.windows_for(&su[8..]))?;

    for mode in FinetuneMode::ALL {
        let cfg = FinetuneConfig {
            budget: LabelBudget::PerClass(10),
            batch_size: 16,
            max_epochs: 30,
            patience: 10,
            encoder: encoder.clone(),
            classifier: ClassifierConfig {
                hidden: vec![64, 32, 32],
                ..ClassifierConfig::default()
            },
            ..FinetuneConfig::new(mode)
        };
        let init = (mode != FinetuneMode::Baseline).then_some(&pre.triplet.best.params);
        let out = finetune(&cfg, init, &train, &val, ds.n_classes())?;
        println!(
            "{:<9} {} labelled windows, best epoch {}, val F1 {:.3}, test F1 {:.3}",
            mode.name(),
            out.train_windows,
            out.best_epoch,
            out.best_val_macro_f1,
            out.model.evaluate(&test)?
        );
    }
    Ok(())
}
