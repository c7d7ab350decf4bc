//! Windowing, labels, user-group folds and train-split normalisation.

use ssl_har::ingest::{build_fold_plan, fit_norm_stats, ingest_recordings, IngestOptions};
use ssl_har::synth::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let spec = SyntheticSpec::sinusoids("toy", 10, &[1.0, 4.0], 40.0);
    let (manifest, recs) = generate(&spec, 3)?;
    let ds = ingest_recordings(&manifest, &recs, &IngestOptions::default())?;
    let labelled = ds.windows.iter().filter(|w| w.label.is_some()).count();
    println!("{} windows, {labelled} labelled, {} classes", ds.windows.len(), ds.n_classes());

    let plan = build_fold_plan(&ds.users(), 5, 0)?;
    for (i, g) in plan.groups.iter().enumerate() {
        println!("group {i}: {g:?}");
    }
    for fold in 0..plan.n_folds() {
        let train = ds.windows_for(&plan.train_users(fold));
        let stats = fit_norm_stats(&train)?;
        println!(
            "fold {fold}: test {:?} val {:?} | {} train windows, mean {:.3?}",
            plan.test_users(fold),
            plan.val_users(fold),
            train.len(),
            stats.mean
        );
    }
    Ok(())
}
