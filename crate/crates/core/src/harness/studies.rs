use serde::{Deserialize, Serialize};

use super::cell::{CheckpointStage, ExperimentCell, Source};
use super::ledger::Ledger;
use super::matrix::{run_matrix, EncoderStore, MatrixConfig, MatrixSummary};
use super::report::{aggregate, budget_curves, AggregateRow, BudgetCurve};
use crate::engine::{config_hash, train_pretext, CheckpointTriplet, FinetuneMode, LabelBudget, PretextRunConfig};
use crate::error::{Error, Result};
use crate::ingest::{FoldPlan, Window, WindowedDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    pub stage: CheckpointStage,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingStudy {
    pub stages: Vec<StageInfo>,
    /// One row per stage, in before / best / last order.
    pub rows: Vec<AggregateRow>,
}

/// Pretrains from scratch on the capture corpus for the full epoch budget,
/// then fine-tunes (tuned mode) from each checkpoint of the triplet.
/// The triplet is cached next to the ledger, so a resumed study does not
/// pretrain again.
#[allow(clippy::too_many_arguments)]
pub fn stopping_point_study(
    ds: &WindowedDataset,
    plan: &FoldPlan,
    pretext: &PretextRunConfig,
    capture_train: &[Window],
    capture_val: &[Window],
    budget: LabelBudget,
    cfg: &MatrixConfig,
    ledger: &Ledger,
) -> Result<(StoppingStudy, MatrixSummary)> {
    let mut pcfg = pretext.clone();
    pcfg.early_stopping = false;
    let dir = ledger
        .dir()
        .join("checkpoints")
        .join(format!("stopping-{}-{}", pcfg.task, &config_hash(&pcfg)[..12]));
    let triplet = match CheckpointTriplet::load(&dir) {
        Ok(t) => t,
        Err(_) => {
            let t = train_pretext(&pcfg, capture_train, capture_val)?.triplet;
            t.save(&dir)?;
            t
        }
    };
    let mut store = EncoderStore::new();
    store.insert_capture_triplet(pcfg.task, &triplet);
    let base = ExperimentCell::pretrained(&ds.dataset_id, pcfg.task, Source::Capture, FinetuneMode::Tuned, budget);
    let cells: Vec<ExperimentCell> = CheckpointStage::ALL.iter().map(|&s| base.with_stage(s)).collect();
    let summary = run_matrix(ds, plan, &cells, cfg, &mut store, ledger)?;
    let rows = aggregate(&summary.results);
    let stages = CheckpointStage::ALL
        .iter()
        .map(|&stage| {
            let c = triplet.get(stage.name()).unwrap();
            StageInfo {
                stage,
                epoch: c.meta.epoch,
                val_loss: c.meta.val_loss,
            }
        })
        .collect();
    Ok((StoppingStudy { stages, rows }, summary))
}

/// Runs each cell at every budget and returns one curve per cell. The
/// validation users' labels are always used in full.
pub fn label_budget_sweep(
    ds: &WindowedDataset,
    plan: &FoldPlan,
    cells: &[ExperimentCell],
    budgets: &[LabelBudget],
    cfg: &MatrixConfig,
    store: &mut EncoderStore,
    ledger: &Ledger,
) -> Result<(Vec<BudgetCurve>, MatrixSummary)> {
    if budgets.is_empty() {
        return Err(Error::InvalidConfig("budget sweep needs at least one budget".into()));
    }
    let expanded: Vec<ExperimentCell> = cells
        .iter()
        .flat_map(|c| budgets.iter().map(move |&b| c.with_budget(b)))
        .collect();
    let summary = run_matrix(ds, plan, &expanded, cfg, store, ledger)?;
    let rows: Vec<AggregateRow> = aggregate(&summary.results);
    Ok((budget_curves(&rows), summary))
}
