//! Writes a labelled synthetic corpus to disk and reads it back.

use ssl_har::ingest::{ingest, load_dataset, IngestOptions};
use ssl_har::synth::{generate_to_dir, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let spec = SyntheticSpec::sinusoids("walk-run", 6, &[1.0, 2.5, 6.0], 60.0);
    let manifest = generate_to_dir(&spec, 42, dir.path())?;
    let (m, recs) = load_dataset(&manifest)?;
    println!("{}: {} users, classes {:?}", m.name, recs.len(), m.classes);
    for r in &recs {
        println!("  {} {} samples at {} Hz", r.user_id, r.len(), r.sample_rate_hz);
    }
    let ds = ingest(&manifest, &IngestOptions::default())?;
    println!("{} windows of {} samples", ds.windows.len(), ds.window_len);
    Ok(())
}
