//! Runs a small experiment matrix into a resumable ledger and renders the
//! report tables and figures.

use ssl_har::engine::{FinetuneConfig, FinetuneMode, LabelBudget, PretextRunConfig};
use ssl_har::harness::{aggregate_and_render, run_matrix, EncoderStore, ExperimentCell, Ledger, MatrixConfig, Source};
use ssl_har::ingest::{build_fold_plan, ingest_recordings, IngestOptions};
use ssl_har::models::{ClassifierConfig, EncoderConfig};
use ssl_har::objectives::PretextKind;
use ssl_har::synth::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("ssl-har-matrix"), Into::into);
    let (m, recs) = generate(&SyntheticSpec::sinusoids("toy", 10, &[1.0, 4.0, 9.0], 40.0), 0)?;
    let ds = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let plan = build_fold_plan(&ds.users(), 5, 0)?;

    let encoder = EncoderConfig {
        channels: vec![8, 8, 16],
        representation_dim: 16,
        ..EncoderConfig::default()
    };
    let cfg = MatrixConfig {
        seeds: vec![0, 1],
        folds: None,
        finetune: FinetuneConfig {
            max_epochs: 5,
            batch_size: 16,
            encoder: encoder.clone(),
            classifier: ClassifierConfig {
                hidden: vec![16, 16, 16],
                ..ClassifierConfig::default()
            },
            ..FinetuneConfig::new(FinetuneMode::Baseline)
        },
        target_pretext: PretextRunConfig {
            max_epochs: 3,
            patience: 3,
            sample_fraction: 0.5,
            batch_size: 32,
            encoder,
            ..PretextRunConfig::new(PretextKind::Reconstruction)
        },
    };
    let budget = LabelBudget::PerClass(10);
    let mut cells = vec![ExperimentCell::baseline("toy", budget)];
    for mode in [FinetuneMode::Frozen, FinetuneMode::Tuned] {
        cells.push(ExperimentCell::pretrained("toy", PretextKind::Reconstruction, Source::Target, mode, budget));
    }

    let ledger = Ledger::open(out.join("ledger"))?;
    let mut store = EncoderStore::with_cache_dir(out.join("checkpoints"));
    let summary = run_matrix(&ds, &plan, &cells, &cfg, &mut store, &ledger)?;
    println!("{} executed, {} resumed from the ledger, {} failed", summary.executed, summary.skipped, summary.failed);
    for path in aggregate_and_render(&ledger.load()?, &out.join("report"))? {
        println!("wrote {}", path.display());
    }
    print!("{}", std::fs::read_to_string(out.join("report/table.md"))?);
    Ok(())
}
