//! Movement-biased epoch sampling: busy windows are drawn more often.

use ssl_har::ingest::{ingest_recordings, IngestOptions};
use ssl_har::sampler::{compute_weights, epoch_size, sample_epoch};
use ssl_har::synth::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut spec = SyntheticSpec::sinusoids("mixed", 2, &[0.5, 8.0], 60.0);
    spec.classes[0].amplitude = 0.05;
    let (m, recs) = generate(&spec, 1)?;
    let ds = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let weights = compute_weights(&ds.windows);

    let fraction = 0.1;
    let mut drawn = [0usize; 2];
    let mut present = [0usize; 2];
    for w in &ds.windows {
        if let Some(c) = w.label {
            present[c] += 1;
        }
    }
    for epoch in 0..200 {
        for i in sample_epoch(&weights, fraction, epoch)? {
            if let Some(c) = ds.windows[i].label {
                drawn[c] += 1;
            }
        }
    }
    println!("{} of {} windows per epoch", epoch_size(ds.windows.len(), fraction), ds.windows.len());
    for c in 0..2 {
        println!("{}: {} windows, drawn {} times over 200 epochs", ds.classes[c], present[c], drawn[c]);
    }
    Ok(())
}
