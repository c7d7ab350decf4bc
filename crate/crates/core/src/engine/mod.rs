//! Pretext pretraining, downstream fine-tuning and hyperparameter search.

mod checkpoint;
mod early_stop;
mod finetune;
mod pretext;
mod search;

pub use checkpoint::{config_hash, Checkpoint, CheckpointMeta};
pub use early_stop::{simulate as simulate_early_stopping, Direction, EarlyStopper, Observation, MIN_DELTA};
pub use finetune::{
    finetune, representations, subsample_labels, FinetuneConfig, FinetuneEpoch, FinetuneMode, FinetuneOutcome,
    LabelBudget, TrainedClassifier,
};
pub use pretext::{train_pretext, BatchProvider, CheckpointTriplet, PretextEpoch, PretextOutcome, PretextRunConfig};
pub use search::{
    hyperparameter_search, run_trials, sample_trials, SearchOutcome, SearchSpace, SearchStage, TrialConfig, TrialResult,
};

/// Position ranges of consecutive batches over `n` items. A trailing batch
/// of one is merged into the previous batch, since batch norm needs two rows.
pub(crate) fn batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}
