//! Applies every transformation to one window and a SimCLR view pair.

use ssl_har::ingest::{ingest_recordings, IngestOptions};
use ssl_har::synth::{generate, SyntheticSpec};
use ssl_har::transforms::{apply_transform, make_views, TransformKind, TransformParams, TransformSpec, ViewPolicy};

fn main() -> anyhow::Result<()> {
    let (m, recs) = generate(&SyntheticSpec::sinusoids("one", 1, &[2.0, 5.0], 10.0), 0)?;
    let ds = ingest_recordings(&m, &recs, &IngestOptions::default())?;
    let w = &ds.windows[0];
    let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    println!("original      first sample {:+.3?} energy {:.4}", w.row(0), energy(w.values()));
    for (i, kind) in TransformKind::ALL.into_iter().enumerate() {
        let spec = TransformSpec {
            kind,
            params: TransformParams::default(),
            seed: i as u64,
        };
        let t = apply_transform(&spec, w)?;
        println!("{:<15} first sample {:+.3?} energy {:.4}", kind.name(), t.row(0), energy(t.values()));
    }
    let (a, b) = make_views(w, &ViewPolicy::default(), 7)?;
    println!("views start at {:+.3?} and {:+.3?}", a.row(0), b.row(0));
    Ok(())
}
