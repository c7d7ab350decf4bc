use std::borrow::Cow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batches;
use super::checkpoint::{config_hash, Checkpoint};
use super::early_stop::{Direction, EarlyStopper};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{fit_norm_stats, NormStats, Window};
use crate::models::{EncoderConfig, Pass, ENCODER_PREFIX};
use crate::objectives::{collate, materialize, Example, ObjectiveConfig, PretextKind, PretextModel};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::ParameterSet;
use crate::sampler::{compute_weights, sample_epoch, SamplingWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretextRunConfig {
    pub task: PretextKind,
    pub max_epochs: usize,
    pub patience: usize,
    /// Off for the stopping-point study, which needs the final epoch.
    pub early_stopping: bool,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub sample_fraction: f64,
    pub precompute_transforms: bool,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub objective: ObjectiveConfig,
}

impl PretextRunConfig {
    pub fn new(task: PretextKind) -> Self {
        Self {
            task,
            max_epochs: 50,
            patience: 5,
            early_stopping: true,
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            sample_fraction: 0.1,
            precompute_transforms: task == PretextKind::Multitask,
            seed: 0,
            encoder: EncoderConfig::default(),
            objective: ObjectiveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "need 0 < patience ({}) <= max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("pretext batches need at least 2 windows".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("sample fraction {} outside (0, 1]", self.sample_fraction)));
        }
        self.encoder.validate()?;
        self.objective.validate()
    }
}

/// Supplies augmented examples either from a set fixed once before
/// training (`precompute`) or freshly drawn every epoch.
pub struct BatchProvider<'a> {
    kind: PretextKind,
    cfg: &'a ObjectiveConfig,
    windows: &'a [Window],
    seed: u64,
    cache: Option<Vec<Example>>,
}

impl<'a> BatchProvider<'a> {
    pub fn new(kind: PretextKind, cfg: &'a ObjectiveConfig, windows: &'a [Window], precompute: bool, seed: u64) -> Result<Self> {
        let mut provider = Self {
            kind,
            cfg,
            windows,
            seed,
            cache: None,
        };
        if precompute {
            let cache = (0..windows.len())
                .map(|i| provider.draw(u64::MAX, i))
                .collect::<Result<Vec<_>>>()?;
            provider.cache = Some(cache);
        }
        Ok(provider)
    }

    fn draw(&self, epoch: u64, index: usize) -> Result<Example> {
        let seed = derive_seed(self.seed, &[epoch, index as u64]);
        materialize(self.kind, &self.windows[index], self.cfg, seed)
    }

    pub fn example(&self, epoch: usize, index: usize) -> Result<Cow<'_, Example>> {
        match &self.cache {
            Some(cache) => Ok(Cow::Borrowed(&cache[index])),
            None => self.draw(epoch as u64, index).map(Cow::Owned),
        }
    }

    pub fn is_precomputed(&self) -> bool {
        self.cache.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretextEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Encoder captured at initialisation, at the best validation loss and at
/// the final epoch.
#[derive(Clone, Debug)]
pub struct CheckpointTriplet {
    pub before: Checkpoint,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

impl CheckpointTriplet {
    pub fn get(&self, stage: &str) -> Option<&Checkpoint> {
        match stage {
            "before" => Some(&self.before),
            "best" => Some(&self.best),
            "last" => Some(&self.last),
            _ => None,
        }
    }

    /// Writes `before`, `best` and `last` archives into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.before.save(dir, "before")?;
        self.best.save(dir, "best")?;
        self.last.save(dir, "last")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            before: Checkpoint::load(&dir.join("before.bin"))?,
            best: Checkpoint::load(&dir.join("best.bin"))?,
            last: Checkpoint::load(&dir.join("last.bin"))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PretextOutcome {
    pub triplet: CheckpointTriplet,
    pub history: Vec<PretextEpoch>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

const VAL_SALT: u64 = 0x5641_4c;

/// Pretrains an encoder on unlabelled windows with early stopping on the
/// validation loss.
pub fn train_pretext(cfg: &PretextRunConfig, train: &[Window], val: &[Window]) -> Result<PretextOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::EmptyInput("pretext training needs at least 2 training windows"));
    }
    if val.len() < 2 {
        return Err(Error::EmptyInput("pretext training needs at least 2 validation windows"));
    }
    let norm = fit_norm_stats(train)?;
    let model = PretextModel::new(cfg.task, cfg.encoder.clone(), cfg.objective.clone())?;
    let mut params = model.init_params(cfg.seed);
    let hash = config_hash(cfg);
    let encoder_of = |p: &ParameterSet| p.subset(ENCODER_PREFIX);

    let weights = if cfg.sample_fraction < 1.0 {
        compute_weights(train)
    } else {
        SamplingWeights::uniform(train.len())
    };
    let provider = BatchProvider::new(cfg.task, &cfg.objective, train, cfg.precompute_transforms, cfg.seed)?;
    let val_provider = BatchProvider::new(cfg.task, &cfg.objective, val, true, derive_seed(cfg.seed, &[VAL_SALT]))?;
    let val_order: Vec<usize> = (0..val.len()).collect();

    let initial_val = validation_loss(&model, &params, &val_provider, &val_order, &norm, cfg)?;
    let before = Checkpoint::new(encoder_of(&params), hash.clone(), 0, initial_val, cfg.seed);
    let mut best = before.clone();
    let mut stopper = EarlyStopper::new(Direction::Minimize, cfg.patience);
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut history = Vec::new();
    let mut epoch = 0;

    while epoch < cfg.max_epochs {
        epoch += 1;
        let mut order = sample_epoch(&weights, cfg.sample_fraction, derive_seed(cfg.seed, &[epoch as u64, 1]))?;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 2])));
        let train_loss = train_epoch(&model, &mut params, &mut opt, &provider, &order, &norm, cfg, epoch)?;
        let val_loss = validation_loss(&model, &params, &val_provider, &val_order, &norm, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("validation loss {val_loss} for task {}", cfg.task),
            });
        }
        log::info!("{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}", cfg.task);
        history.push(PretextEpoch {
            epoch,
            train_loss,
            val_loss,
        });
        let obs = stopper.observe(epoch, val_loss);
        if obs.improved {
            best = Checkpoint::new(encoder_of(&params), hash.clone(), epoch, val_loss, cfg.seed);
        }
        if cfg.early_stopping && obs.stop {
            break;
        }
    }
    let last_val = history.last().map_or(initial_val, |h| h.val_loss);
    let last = Checkpoint::new(encoder_of(&params), hash, epoch, last_val, cfg.seed);
    Ok(PretextOutcome {
        best_epoch: best.meta.epoch,
        triplet: CheckpointTriplet { before, best, last },
        history,
        epochs_run: epoch,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_epoch(
    model: &PretextModel,
    params: &mut ParameterSet,
    opt: &mut Optimizer,
    provider: &BatchProvider,
    order: &[usize],
    norm: &NormStats,
    cfg: &PretextRunConfig,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (bi, chunk) in batches(order.len(), cfg.batch_size).into_iter().enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let examples = chunk
            .iter()
            .map(|&i| provider.example(epoch, order[i]))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Example> = examples.iter().map(|e| e.as_ref()).collect();
        let salt = [epoch as u64, 3, bi as u64];
        let batch = collate(cfg.task, &refs, norm, &cfg.objective, derive_seed(cfg.seed, &salt))?;
        let mut pass = Pass::new(params, derive_seed(cfg.seed, &[epoch as u64, 4, bi as u64]));
        let loss = model.loss(&mut pass, params, &batch, true)?;
        let value = pass.graph.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("training batch {bi} of task {} gave {value}", cfg.task),
            });
        }
        let grads = pass.graph.backward(loss);
        opt.step(params, &pass.binding, &grads);
        pass.commit_bn_updates(params);
        total += value * batch.len() as f64;
        count += batch.len();
    }
    if count == 0 {
        return Err(Error::EmptyInput("epoch produced no batch of at least 2 windows"));
    }
    Ok(total / count as f64)
}

/// Size-weighted mean loss in evaluation mode.
fn validation_loss(
    model: &PretextModel,
    params: &ParameterSet,
    provider: &BatchProvider,
    order: &[usize],
    norm: &NormStats,
    cfg: &PretextRunConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (bi, chunk) in batches(order.len(), cfg.batch_size).into_iter().enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let examples = chunk
            .iter()
            .map(|&i| provider.example(0, order[i]))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Example> = examples.iter().map(|e| e.as_ref()).collect();
        let batch = collate(cfg.task, &refs, norm, &cfg.objective, derive_seed(cfg.seed, &[VAL_SALT, bi as u64]))?;
        let mut pass = Pass::new(params, 0);
        let loss = model.loss(&mut pass, params, &batch, false)?;
        total += pass.graph.value(loss).item() * batch.len() as f64;
        count += batch.len();
    }
    Ok(total / count.max(1) as f64)
}
