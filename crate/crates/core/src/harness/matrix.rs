use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::cell::{CheckpointStage, ExperimentCell, Source};
use super::ledger::{run_key, Ledger, RunOutcome, TrainRunResult};
use crate::derive_seed;
use crate::engine::{
    config_hash, finetune, train_pretext, Checkpoint, CheckpointTriplet, FinetuneConfig, FinetuneMode, PretextRunConfig,
};
use crate::error::{Error, Result};
use crate::ingest::{FoldPlan, Window, WindowedDataset};
use crate::objectives::PretextKind;

/// Settings shared by every run of a matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub seeds: Vec<u64>,
    /// Restricts the matrix to these folds; every fold when absent.
    pub folds: Option<Vec<usize>>,
    /// Template; mode, budget and seed are set per run.
    pub finetune: FinetuneConfig,
    /// Template for target-dataset pretexts; the task is set per cell.
    pub target_pretext: PretextRunConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            folds: None,
            finetune: FinetuneConfig::new(FinetuneMode::Baseline),
            target_pretext: PretextRunConfig::new(PretextKind::Multitask),
        }
    }
}

impl MatrixConfig {
    pub fn fold_indices(&self, plan: &FoldPlan) -> Result<Vec<usize>> {
        match &self.folds {
            None => Ok((0..plan.n_folds()).collect()),
            Some(f) => match f.iter().find(|&&i| i >= plan.n_folds()) {
                Some(bad) => Err(Error::InvalidConfig(format!("fold {bad} outside plan of {}", plan.n_folds()))),
                None => Ok(f.clone()),
            },
        }
    }

    fn target_config(&self, task: PretextKind, fold: usize) -> PretextRunConfig {
        let mut cfg = self.target_pretext.clone();
        cfg.task = task;
        cfg.precompute_transforms = task == PretextKind::Multitask;
        cfg.seed = derive_seed(self.target_pretext.seed, &[fold as u64]);
        cfg
    }
}

/// Pretrained encoders by pretext and stage. Capture-corpus checkpoints are
/// supplied up front; target-dataset ones are trained on demand per fold
/// and, given a cache directory, kept on disk for later resumes.
#[derive(Default)]
pub struct EncoderStore {
    capture: BTreeMap<(PretextKind, CheckpointStage), Checkpoint>,
    target: BTreeMap<(PretextKind, usize, String), CheckpointTriplet>,
    cache_dir: Option<PathBuf>,
}

impl EncoderStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cache_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            cache_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn insert_capture(&mut self, pretext: PretextKind, stage: CheckpointStage, checkpoint: Checkpoint) {
        self.capture.insert((pretext, stage), checkpoint);
    }

    pub fn insert_capture_triplet(&mut self, pretext: PretextKind, triplet: &CheckpointTriplet) {
        for stage in CheckpointStage::ALL {
            self.insert_capture(pretext, stage, triplet.get(stage.name()).unwrap().clone());
        }
    }

    pub fn capture(&self, pretext: PretextKind, stage: CheckpointStage) -> Result<&Checkpoint> {
        self.capture
            .get(&(pretext, stage))
            .ok_or_else(|| Error::MissingCheckpoint(format!("no {} checkpoint for {pretext} on the capture corpus", stage.name())))
    }

    fn target(&mut self, cfg: &PretextRunConfig, fold: usize, train: &[Window], val: &[Window]) -> Result<&CheckpointTriplet> {
        let hash = config_hash(cfg);
        let key = (cfg.task, fold, hash.clone());
        if !self.target.contains_key(&key) {
            let dir = self.cache_dir.as_ref().map(|d| d.join(format!("target-{}-fold{fold}-{}", cfg.task, &hash[..12])));
            let triplet = match dir.as_ref().map(|d| CheckpointTriplet::load(d)) {
                Some(Ok(t)) => t,
                _ => {
                    log::info!("pretraining {} on fold {fold} training users", cfg.task);
                    let t = train_pretext(cfg, train, val)?.triplet;
                    if let Some(d) = &dir {
                        t.save(d)?;
                    }
                    t
                }
            };
            self.target.insert(key.clone(), triplet);
        }
        Ok(&self.target[&key])
    }
}

/// Windows a fold may train on: all windows of the training users, labelled
/// or not, and of the validation users. Test users never appear.
pub fn fold_windows(ds: &WindowedDataset, plan: &FoldPlan, fold: usize) -> (Vec<Window>, Vec<Window>) {
    (ds.windows_for(&plan.train_users(fold)), ds.windows_for(&plan.val_users(fold)))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatrixSummary {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    /// One record per (cell, fold, seed), in plan order.
    pub results: Vec<TrainRunResult>,
}

/// Runs every (cell, fold, seed) not yet in the ledger and records it.
/// Failures are recorded per run and do not stop the matrix.
pub fn run_matrix(
    ds: &WindowedDataset,
    plan: &FoldPlan,
    cells: &[ExperimentCell],
    cfg: &MatrixConfig,
    store: &mut EncoderStore,
    ledger: &Ledger,
) -> Result<MatrixSummary> {
    for cell in cells {
        cell.validate()?;
        if cell.dataset_id != ds.dataset_id {
            return Err(Error::InvalidConfig(format!("cell {cell} does not belong to dataset {}", ds.dataset_id)));
        }
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("a matrix needs at least one seed".into()));
    }
    let folds = cfg.fold_indices(plan)?;
    let plan_hash = config_hash(plan);
    let mut summary = MatrixSummary::default();

    for cell in cells {
        for &fold in &folds {
            let (train, val) = fold_windows(ds, plan, fold);
            let test = ds.labelled_for(&plan.test_users(fold));
            for &seed in &cfg.seeds {
                let mut ft = cfg.finetune.clone();
                ft.mode = cell.mode;
                ft.budget = cell.budget;
                ft.seed = seed;
                let source_digest = match (cell.source, cell.pretext) {
                    (Source::Capture, Some(p)) => store
                        .capture(p, cell.stage)
                        .map_or_else(|_| "missing".to_string(), |c| c.meta.digest.clone()),
                    (Source::Target, Some(p)) => config_hash(&cfg.target_config(p, fold)),
                    _ => String::new(),
                };
                let key = run_key(cell, fold, seed, &config_hash(&(&ft, &plan_hash, &source_digest)));
                if let Some(existing) = ledger.get(&key)? {
                    summary.skipped += 1;
                    summary.results.push(existing);
                    continue;
                }
                let outcome = match run_one(ds, cell, fold, &ft, cfg, store, &train, &val, &test) {
                    Ok(o) => o,
                    Err(e) => {
                        log::warn!("{cell} fold {fold} seed {seed} failed: {e}");
                        summary.failed += 1;
                        RunOutcome::Failed { error: e.to_string() }
                    }
                };
                let result = TrainRunResult {
                    key,
                    cell: cell.clone(),
                    fold,
                    seed,
                    outcome,
                };
                ledger.record(&result)?;
                summary.executed += 1;
                summary.results.push(result);
            }
        }
    }
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    ds: &WindowedDataset,
    cell: &ExperimentCell,
    fold: usize,
    ft: &FinetuneConfig,
    cfg: &MatrixConfig,
    store: &mut EncoderStore,
    train: &[Window],
    val: &[Window],
    test: &[Window],
) -> Result<RunOutcome> {
    let init = match (cell.source, cell.pretext) {
        (Source::None, _) | (_, None) => None,
        (Source::Capture, Some(p)) => Some(store.capture(p, cell.stage)?.params.clone()),
        (Source::Target, Some(p)) => {
            let triplet = store.target(&cfg.target_config(p, fold), fold, train, val)?;
            Some(triplet.get(cell.stage.name()).unwrap().params.clone())
        }
    };
    if test.is_empty() {
        return Err(Error::EmptyInput("fold has no labelled test windows"));
    }
    let out = finetune(ft, init.as_ref(), train, val, ds.n_classes())?;
    let test_macro_f1 = out.model.evaluate(test)?;
    log::info!("{cell} fold {fold} seed {}: test macro-F1 {test_macro_f1:.4}", ft.seed);
    Ok(RunOutcome::Ok {
        test_macro_f1,
        val_macro_f1: out.best_val_macro_f1,
        best_epoch: out.best_epoch,
    })
}
