//! Raw per-user accelerometer recordings to normalised, labelled windows and
//! user-disjoint fold plans.

mod folds;
mod io;
mod norm;
mod recording;
mod window;

pub use folds::{build_fold_plan, split_capture_style, Fold, FoldPlan};
pub use io::{
    ingest, ingest_recordings, load_dataset, read_recording_csv, write_dataset, write_recording_csv, DatasetManifest,
    IngestOptions, WindowedDataset, CACHE_DATA, CACHE_SIDECAR, MANIFEST_FILE,
};
pub use norm::{apply_norm, fit_norm_stats, NormStats, STD_FLOOR};
pub use recording::{ms2_to_g, resample, SensorRecording, STANDARD_GRAVITY};
pub use window::{assign_window_label, make_windows, window_count, Window, CHANNELS, WINDOW_LEN, WINDOW_STEP};
