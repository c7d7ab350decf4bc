//! Label-budget sweep for a baseline and writes the budget-curve figure.

use ssl_har::engine::{FinetuneConfig, FinetuneMode, LabelBudget};
use ssl_har::harness::{label_budget_sweep, render_budget_svg, EncoderStore, ExperimentCell, Ledger, MatrixConfig};
use ssl_har::ingest::{build_fold_plan, ingest_recordings, IngestOptions};
use ssl_har::models::{ClassifierConfig, EncoderConfig};
use ssl_har::synth::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let (m, recs) = generate(&SyntheticSpec::sinusoids("toy", 10, &[1.0, 4.0, 9.0], 60.0), 0)?;
    let ds = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let plan = build_fold_plan(&ds.users(), 5, 0)?;
    let cfg = MatrixConfig {
        seeds: vec![0, 1],
        folds: Some(vec![0, 1]),
        finetune: FinetuneConfig {
            max_epochs: 8,
            batch_size: 16,
            encoder: EncoderConfig {
                channels: vec![8, 8, 16],
                representation_dim: 16,
                ..EncoderConfig::default()
            },
            classifier: ClassifierConfig {
                hidden: vec![16, 16, 16],
                ..ClassifierConfig::default()
            },
            ..FinetuneConfig::new(FinetuneMode::Baseline)
        },
        ..MatrixConfig::default()
    };
    let dir = tempfile::tempdir()?;
    let ledger = Ledger::open(dir.path())?;
    let cells = [ExperimentCell::baseline("toy", LabelBudget::All)];
    let (curves, _) = label_budget_sweep(&ds, &plan, &cells, &LabelBudget::PAPER_SWEEP, &cfg, &mut EncoderStore::new(), &ledger)?;
    for c in &curves {
        println!("{}", c.label);
        for p in &c.points {
            println!("  {:>4}: {:.2} ± {:.2} (n = {})", p.budget.to_string(), 100.0 * p.mean, 100.0 * p.std, p.n);
        }
    }
    let svg = std::env::temp_dir().join("ssl-har-budget.svg");
    std::fs::write(&svg, render_budget_svg(&curves))?;
    println!("wrote {}", svg.display());
    Ok(())
}
