use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batches;
use super::early_stop::{Direction, EarlyStopper};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{fit_norm_stats, NormStats, Window};
use crate::metrics::macro_f1;
use crate::models::{windows_to_tensor, Classifier, ClassifierConfig, Encoder, EncoderConfig, Pass, ENCODER_PREFIX};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Randomly initialised encoder trained with the classifier.
    Baseline,
    /// Pretrained encoder held fixed.
    Frozen,
    /// Pretrained encoder trained with the classifier.
    Tuned,
}

impl FinetuneMode {
    pub const ALL: [FinetuneMode; 3] = [FinetuneMode::Baseline, FinetuneMode::Frozen, FinetuneMode::Tuned];

    pub fn name(self) -> &'static str {
        match self {
            FinetuneMode::Baseline => "baseline",
            FinetuneMode::Frozen => "frozen",
            FinetuneMode::Tuned => "tuned",
        }
    }
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FinetuneMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown fine-tune mode {s:?}")))
    }
}

/// Labelled windows per class available for fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LabelBudget {
    PerClass(usize),
    All,
}

impl LabelBudget {
    pub const PAPER_SWEEP: [LabelBudget; 5] = [
        LabelBudget::PerClass(2),
        LabelBudget::PerClass(5),
        LabelBudget::PerClass(10),
        LabelBudget::PerClass(50),
        LabelBudget::PerClass(100),
    ];
}

impl fmt::Display for LabelBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelBudget::PerClass(k) => write!(f, "{k}"),
            LabelBudget::All => f.write_str("all"),
        }
    }
}

impl FromStr for LabelBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(LabelBudget::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(LabelBudget::PerClass(k)),
            _ => Err(Error::InvalidConfig(format!("label budget must be a positive integer or `all`, got {s:?}"))),
        }
    }
}

impl From<LabelBudget> for String {
    fn from(b: LabelBudget) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for LabelBudget {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Uniformly keeps `min(k, n_c)` windows of every class. Unlabelled windows
/// are dropped. Output is grouped by class, original order within a class.
pub fn subsample_labels(windows: &[Window], budget: LabelBudget, seed: u64) -> Vec<Window> {
    let mut by_class: BTreeMap<usize, Vec<&Window>> = BTreeMap::new();
    for w in windows {
        if let Some(c) = w.label {
            by_class.entry(c).or_default().push(w);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for members in by_class.values() {
        match budget {
            LabelBudget::All => out.extend(members.iter().map(|w| (*w).clone())),
            LabelBudget::PerClass(k) => {
                let mut picked = rand::seq::index::sample(&mut rng, members.len(), k.min(members.len())).into_vec();
                picked.sort_unstable();
                out.extend(picked.into_iter().map(|i| members[i].clone()));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub budget: LabelBudget,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl FinetuneConfig {
    pub fn new(mode: FinetuneMode) -> Self {
        Self {
            mode,
            budget: LabelBudget::All,
            encoder: EncoderConfig::default(),
            classifier: ClassifierConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

/// Encoder + classifier ready for inference (always evaluation mode).
#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub encoder: Encoder,
    pub classifier: Classifier,
    pub params: ParameterSet,
    pub norm: NormStats,
}

impl TrainedClassifier {
    pub fn logits(&self, windows: &[Window]) -> Result<Tensor> {
        let reps = representations(&self.encoder, &self.params, &self.norm, windows)?;
        Ok(classifier_logits(&self.classifier, &self.params, &reps))
    }

    pub fn predict(&self, windows: &[Window]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(windows)?))
    }

    /// Macro-F1 against the windows' labels (unlabelled windows skipped).
    pub fn evaluate(&self, windows: &[Window]) -> Result<f64> {
        let labelled: Vec<Window> = windows.iter().filter(|w| w.label.is_some()).cloned().collect();
        let preds = self.predict(&labelled)?;
        let labels: Vec<usize> = labelled.iter().map(|w| w.label.unwrap()).collect();
        macro_f1(&preds, &labels, self.classifier.n_classes)
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Best-validation model.
    pub model: TrainedClassifier,
    pub history: Vec<FinetuneEpoch>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub train_windows: usize,
}

const REP_BATCH: usize = 256;
const BUDGET_SALT: u64 = 0x4255_4447;
const CLASSIFIER_SALT: u64 = 0x434c_4153;

/// Pooled encoder outputs in evaluation mode, `[n, representation_dim]`.
pub fn representations(encoder: &Encoder, params: &ParameterSet, norm: &NormStats, windows: &[Window]) -> Result<Tensor> {
    if windows.is_empty() {
        return Err(Error::EmptyInput("no windows to encode"));
    }
    let dim = encoder.cfg.representation_dim;
    let mut data = Vec::with_capacity(windows.len() * dim);
    for chunk in windows.chunks(REP_BATCH) {
        let normed: Vec<Window> = chunk.iter().map(|w| norm.apply(w)).collect();
        let x = windows_to_tensor(&normed.iter().collect::<Vec<_>>())?;
        let mut pass = Pass::new(params, 0);
        let xi = pass.input(x);
        let out = encoder.forward(&mut pass, params, xi, false)?;
        data.extend_from_slice(pass.graph.value(out.pooled).data());
    }
    Tensor::from_vec(&[windows.len(), dim], data)
}

/// Evaluation-mode logits.
fn classifier_logits(clf: &Classifier, params: &ParameterSet, reps: &Tensor) -> Tensor {
    let mut pass = Pass::new(params, 0);
    let x = pass.input(reps.clone());
    let y = clf.forward(&mut pass, params, x, false);
    pass.graph.value(y).clone()
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.shape()[1];
    t.data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let d = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
    }
    Tensor::from_vec(&[idx.len(), d], data).unwrap()
}

fn cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum::<f64>()
        / labels.len() as f64
}

/// Trains a classifier on labelled windows in the given mode, early
/// stopping on validation macro-F1. `encoder_init` is the pretrained
/// encoder (required for frozen and tuned, refused for baseline).
pub fn finetune(
    cfg: &FinetuneConfig,
    encoder_init: Option<&ParameterSet>,
    train: &[Window],
    val: &[Window],
    n_classes: usize,
) -> Result<FinetuneOutcome> {
    if cfg.batch_size < 2 || cfg.max_epochs == 0 || cfg.patience == 0 {
        return Err(Error::InvalidConfig("fine-tuning needs batch_size >= 2 and positive epochs/patience".into()));
    }
    match (cfg.mode, encoder_init) {
        (FinetuneMode::Baseline, Some(_)) => {
            return Err(Error::InvalidConfig("baseline mode trains a random encoder; no checkpoint expected".into()))
        }
        (FinetuneMode::Frozen | FinetuneMode::Tuned, None) => {
            return Err(Error::MissingCheckpoint(format!("{} mode needs a pretrained encoder", cfg.mode)))
        }
        _ => {}
    }
    let labelled: Vec<Window> = train.iter().filter(|w| w.label.is_some()).cloned().collect();
    let val: Vec<Window> = val.iter().filter(|w| w.label.is_some()).cloned().collect();
    let distinct: std::collections::BTreeSet<usize> = labelled.iter().filter_map(|w| w.label).collect();
    if distinct.len() < 2 {
        return Err(Error::SingleClass(distinct.len()));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("fine-tuning needs labelled validation windows"));
    }
    if let Some(&bad) = distinct.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidConfig(format!("label {bad} outside {n_classes} classes")));
    }

    let norm = fit_norm_stats(&labelled)?;
    let subset = subsample_labels(&labelled, cfg.budget, derive_seed(cfg.seed, &[BUDGET_SALT]));
    let labels: Vec<usize> = subset.iter().map(|w| w.label.unwrap()).collect();
    let val_labels: Vec<usize> = val.iter().map(|w| w.label.unwrap()).collect();

    let (encoder, mut params) = Encoder::build(cfg.encoder.clone(), cfg.seed)?;
    if let Some(init) = encoder_init {
        params.load_from(init)?;
    }
    let classifier = Classifier::new(cfg.classifier.clone(), encoder.cfg.representation_dim, n_classes)?;
    classifier.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[CLASSIFIER_SALT])));

    let frozen = cfg.mode == FinetuneMode::Frozen;
    if frozen {
        let names: Vec<String> = params.names_with_prefix(ENCODER_PREFIX).map(str::to_string).collect();
        params.set_freeze(&names)?;
    }
    // A frozen encoder is a fixed function, so its outputs are computed once.
    let cached = if frozen {
        Some((
            representations(&encoder, &params, &norm, &subset)?,
            representations(&encoder, &params, &norm, &val)?,
        ))
    } else {
        None
    };
    let normed: Vec<Window> = if frozen { Vec::new() } else { subset.iter().map(|w| norm.apply(w)).collect() };

    let mut opt = Optimizer::new(cfg.optimizer);
    let mut stopper = EarlyStopper::new(Direction::Maximize, cfg.patience);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut order: Vec<usize> = (0..subset.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 5])));
        let mut total = 0.0;
        for (bi, chunk) in batches(order.len(), cfg.batch_size).into_iter().enumerate() {
            let idx: Vec<usize> = chunk.iter().map(|&i| order[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut pass = Pass::new(&params, derive_seed(cfg.seed, &[epoch as u64, 6, bi as u64]));
            let reps = match &cached {
                Some((train_reps, _)) => pass.input(rows(train_reps, &idx)),
                None => {
                    let ws: Vec<&Window> = idx.iter().map(|&i| &normed[i]).collect();
                    let xi = pass.input(windows_to_tensor(&ws)?);
                    encoder.forward(&mut pass, &params, xi, true)?.pooled
                }
            };
            let logits = classifier.forward(&mut pass, &params, reps, true);
            let loss = pass.graph.softmax_cross_entropy(logits, &y);
            let value = pass.graph.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("fine-tuning batch {bi} in {} mode gave {value}", cfg.mode),
                });
            }
            let grads = pass.graph.backward(loss);
            opt.step(&mut params, &pass.binding, &grads);
            pass.commit_bn_updates(&mut params);
            total += value * idx.len() as f64;
        }

        let val_reps = match &cached {
            Some((_, v)) => v.clone(),
            None => representations(&encoder, &params, &norm, &val)?,
        };
        let val_logits = classifier_logits(&classifier, &params, &val_reps);
        let val_f1 = macro_f1(&argmax_rows(&val_logits), &val_labels, n_classes)?;
        let val_loss = cross_entropy(&val_logits, &val_labels);
        history.push(FinetuneEpoch {
            epoch,
            train_loss: total / subset.len() as f64,
            val_loss,
            val_macro_f1: val_f1,
        });
        log::debug!("{} epoch {epoch}: val macro-F1 {val_f1:.4} loss {val_loss:.4}", cfg.mode);
        let obs = stopper.observe(epoch, val_f1);
        if obs.improved {
            best_params = params.clone();
        }
        if obs.stop {
            break;
        }
    }

    Ok(FinetuneOutcome {
        model: TrainedClassifier {
            encoder,
            classifier,
            params: best_params,
            norm,
        },
        best_epoch: stopper.best_epoch(),
        best_val_macro_f1: stopper.best().unwrap_or(0.0),
        history,
        train_windows: subset.len(),
    })
}
