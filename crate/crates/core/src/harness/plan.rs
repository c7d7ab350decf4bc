use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cell::{CheckpointStage, ExperimentCell};
use super::ledger::Ledger;
use super::matrix::{EncoderStore, MatrixConfig};
use crate::engine::{Checkpoint, CheckpointTriplet};
use crate::error::{IoContext, Result};
use crate::ingest::{build_fold_plan, ingest, FoldPlan, IngestOptions, WindowedDataset, CACHE_SIDECAR};
use crate::objectives::PretextKind;

/// Everything needed to run or resume a matrix from the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// A window cache directory or a dataset manifest.
    pub dataset: PathBuf,
    pub ledger: PathBuf,
    #[serde(default = "default_groups")]
    pub n_groups: usize,
    #[serde(default)]
    pub fold_seed: u64,
    pub cells: Vec<ExperimentCell>,
    #[serde(default)]
    pub matrix: MatrixConfig,
    /// Capture-corpus checkpoint triplet directory per pretext.
    #[serde(default)]
    pub capture_checkpoints: BTreeMap<PretextKind, PathBuf>,
}

fn default_groups() -> usize {
    5
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let plan: Self = serde_json::from_str(&fs::read_to_string(path).at(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(plan.relative_to(base))
    }

    /// Resolves relative paths against `base`.
    pub fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.ledger);
        self.capture_checkpoints.values_mut().for_each(fix);
        self
    }

    pub fn open(&self) -> Result<(WindowedDataset, FoldPlan, EncoderStore, Ledger)> {
        let ds = load_windowed(&self.dataset)?;
        let folds = build_fold_plan(&ds.users(), self.n_groups, self.fold_seed)?;
        let ledger = Ledger::open(&self.ledger)?;
        let mut store = EncoderStore::with_cache_dir(self.ledger.join("checkpoints"));
        for (&pretext, dir) in &self.capture_checkpoints {
            match CheckpointTriplet::load(dir) {
                Ok(t) => store.insert_capture_triplet(pretext, &t),
                // a lone best.bin is enough for the main table
                Err(_) => {
                    let best = Checkpoint::load(&dir.join("best.bin"))?;
                    store.insert_capture(pretext, CheckpointStage::Best, best);
                }
            }
        }
        Ok((ds, folds, store, ledger))
    }
}

/// Loads a window cache directory, or ingests a manifest with defaults.
pub fn load_windowed(path: &Path) -> Result<WindowedDataset> {
    if path.is_dir() && path.join(CACHE_SIDECAR).is_file() {
        WindowedDataset::load_cache(path)
    } else if path.is_dir() {
        ingest(&path.join("manifest.json"), &IngestOptions::default())
    } else {
        ingest(path, &IngestOptions::default())
    }
}
