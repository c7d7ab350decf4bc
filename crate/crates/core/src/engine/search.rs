use rand::prelude::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::early_stop::Direction;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub weight_decays: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            batch_sizes: vec![64, 128, 256],
            weight_decays: vec![0.0, 1e-5, 1e-4],
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty()
            || self.batch_sizes.is_empty()
            || self.weight_decays.is_empty()
            || self.optimizers.is_empty()
        {
            return Err(Error::InvalidConfig("every search dimension needs at least one value".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStage {
    /// Minimise pretext validation loss.
    Pretext,
    /// Maximise mean validation macro-F1 across folds; every sampled trial
    /// is repeated with plain SGD.
    Classifier,
}

impl SearchStage {
    pub fn direction(self) -> Direction {
        match self {
            SearchStage::Pretext => Direction::Minimize,
            SearchStage::Classifier => Direction::Maximize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
}

/// `n_trials` seeded draws from `space`. For the classifier stage the
/// draws use the first listed optimizer and are followed by the same draws
/// with SGD, giving `2 * n_trials` trials.
pub fn sample_trials(space: &SearchSpace, stage: SearchStage, n_trials: usize, seed: u64) -> Result<Vec<TrialConfig>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<TrialConfig> = (0..n_trials)
        .map(|_| {
            let learning_rate = *space.learning_rates.choose(&mut rng).unwrap();
            let batch_size = *space.batch_sizes.choose(&mut rng).unwrap();
            let weight_decay = *space.weight_decays.choose(&mut rng).unwrap();
            let kind = match stage {
                SearchStage::Pretext => *space.optimizers.choose(&mut rng).unwrap(),
                SearchStage::Classifier => space.optimizers[0],
            };
            TrialConfig {
                optimizer: OptimizerConfig {
                    kind,
                    learning_rate,
                    weight_decay,
                },
                batch_size,
            }
        })
        .collect();
    if stage == SearchStage::Classifier {
        let sgd: Vec<TrialConfig> = trials
            .iter()
            .map(|t| TrialConfig {
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::Sgd,
                    ..t.optimizer
                },
                ..*t
            })
            .collect();
        trials.extend(sgd);
    }
    Ok(trials)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: TrialConfig,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best: TrialConfig,
    pub best_score: f64,
    pub trials: Vec<TrialResult>,
}

/// Evaluates every trial and returns the best. Ties go to the lowest trial
/// index; failed or non-finite trials are recorded and skipped.
pub fn run_trials(
    trials: &[TrialConfig],
    direction: Direction,
    mut evaluate: impl FnMut(usize, &TrialConfig) -> Result<f64>,
) -> Result<SearchOutcome> {
    if trials.is_empty() {
        return Err(Error::InvalidConfig("no trials to run".into()));
    }
    let mut results = Vec::with_capacity(trials.len());
    let mut best: Option<(usize, f64)> = None;
    for (index, config) in trials.iter().enumerate() {
        let (score, error) = match evaluate(index, config) {
            Ok(s) if s.is_finite() => (Some(s), None),
            Ok(s) => (None, Some(format!("non-finite score {s}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        log::info!("trial {index}: {config:?} -> {score:?}");
        if let Some(s) = score {
            let better = match (best, direction) {
                (None, _) => true,
                (Some((_, b)), Direction::Minimize) => s < b,
                (Some((_, b)), Direction::Maximize) => s > b,
            };
            if better {
                best = Some((index, s));
            }
        }
        results.push(TrialResult {
            index,
            config: *config,
            score,
            error,
        });
    }
    let Some((best_index, best_score)) = best else {
        let failures = results
            .iter()
            .map(|r| format!("#{}: {}", r.index, r.error.as_deref().unwrap_or("?")))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::AllTrialsFailed {
            n: results.len(),
            failures,
        });
    };
    Ok(SearchOutcome {
        best_index,
        best: trials[best_index],
        best_score,
        trials: results,
    })
}

/// Samples trials for `stage` and evaluates them with `evaluate`.
pub fn hyperparameter_search(
    space: &SearchSpace,
    stage: SearchStage,
    n_trials: usize,
    seed: u64,
    evaluate: impl FnMut(usize, &TrialConfig) -> Result<f64>,
) -> Result<SearchOutcome> {
    let trials = sample_trials(space, stage, n_trials, seed)?;
    run_trials(&trials, stage.direction(), evaluate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_stage_duplicates_with_sgd() {
        let trials = sample_trials(&SearchSpace::default(), SearchStage::Classifier, 20, 3).unwrap();
        assert_eq!(trials.len(), 40);
        for i in 0..20 {
            assert_eq!(trials[i].optimizer.kind, OptimizerKind::Adam);
            assert_eq!(trials[i + 20].optimizer.kind, OptimizerKind::Sgd);
            assert_eq!(trials[i].optimizer.learning_rate, trials[i + 20].optimizer.learning_rate);
            assert_eq!(trials[i].batch_size, trials[i + 20].batch_size);
        }
        assert_eq!(sample_trials(&SearchSpace::default(), SearchStage::Pretext, 20, 3).unwrap().len(), 20);
    }

    #[test]
    fn single_config_space() {
        let space = SearchSpace {
            learning_rates: vec![0.5],
            batch_sizes: vec![8],
            weight_decays: vec![0.0],
            optimizers: vec![OptimizerKind::Sgd],
        };
        let out = hyperparameter_search(&space, SearchStage::Pretext, 20, 1, |_, _| Ok(1.0)).unwrap();
        assert_eq!(out.best.optimizer.learning_rate, 0.5);
        assert_eq!(out.best_index, 0);
    }

    #[test]
    fn ties_and_failures() {
        let space = SearchSpace::default();
        let scores = [0.3, 0.7, 0.7, f64::NAN, 0.1];
        let out = hyperparameter_search(&space, SearchStage::Pretext, 5, 2, |i, _| {
            if i == 0 {
                Err(Error::InvalidConfig("boom".into()))
            } else {
                Ok(scores[i])
            }
        })
        .unwrap();
        assert_eq!(out.best_index, 4);
        assert!(out.trials[0].error.is_some() && out.trials[3].error.is_some());
        let out = run_trials(&sample_trials(&space, SearchStage::Pretext, 5, 2).unwrap(), Direction::Maximize, |i, _| {
            Ok([0.3, 0.7, 0.7, 0.2, 0.1][i])
        })
        .unwrap();
        assert_eq!(out.best_index, 1);
        let err = hyperparameter_search(&space, SearchStage::Pretext, 3, 2, |_, _| Err(Error::EmptyInput("x")));
        assert!(matches!(err, Err(Error::AllTrialsFailed { n: 3, .. })));
    }

    #[test]
    fn seeded_search_repeats() {
        let space = SearchSpace::default();
        let run = || {
            hyperparameter_search(&space, SearchStage::Classifier, 20, 9, |_, t| {
                Ok(t.optimizer.learning_rate * t.batch_size as f64)
            })
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
