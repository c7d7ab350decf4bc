use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cell::ExperimentCell;
use crate::error::{IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunOutcome {
    Ok {
        test_macro_f1: f64,
        val_macro_f1: f64,
        best_epoch: usize,
    },
    Failed {
        error: String,
    },
}

/// One (cell, fold, seed) run as stored in the ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunResult {
    pub key: String,
    pub cell: ExperimentCell,
    pub fold: usize,
    pub seed: u64,
    pub outcome: RunOutcome,
}

impl TrainRunResult {
    pub fn test_macro_f1(&self) -> Option<f64> {
        match self.outcome {
            RunOutcome::Ok { test_macro_f1, .. } => Some(test_macro_f1),
            RunOutcome::Failed { .. } => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, RunOutcome::Ok { .. })
    }
}

/// Content hash identifying a run: the cell, fold, seed and a digest of
/// every configuration input that can change its result.
pub fn run_key(cell: &ExperimentCell, fold: usize, seed: u64, config_digest: &str) -> String {
    #[derive(Serialize)]
    struct KeyInput<'a> {
        cell: &'a ExperimentCell,
        fold: usize,
        seed: u64,
        config: &'a str,
    }
    let json = serde_json::to_vec(&KeyInput {
        cell,
        fold,
        seed,
        config: config_digest,
    })
    .expect("key input serialises");
    hex::encode(Sha256::digest(json))
}

/// A directory of JSON records, one file per run, named by run key.
/// Writes go through a temporary file and a rename, so a record is either
/// complete or absent.
#[derive(Clone, Debug)]
pub struct Ledger {
    dir: PathBuf,
}

impl Ledger {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).at(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.record_path(key).is_file()
    }

    pub fn get(&self, key: &str) -> Result<Option<TrainRunResult>> {
        let path = self.record_path(key);
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?))
    }

    pub fn record(&self, result: &TrainRunResult) -> Result<()> {
        let path = self.record_path(&result.key);
        let tmp = self.dir.join(format!(".{}.tmp{}", result.key, std::process::id()));
        fs::write(&tmp, serde_json::to_string_pretty(result)?).at(&tmp)?;
        fs::rename(&tmp, &path).at(&path)
    }

    /// Every record, ordered by cell, fold and seed.
    pub fn load(&self) -> Result<Vec<TrainRunResult>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).at(&self.dir)? {
            let path = entry.at(&self.dir)?.path();
            let is_record = path.extension().is_some_and(|e| e == "json")
                && !path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
            if is_record && path.is_file() {
                out.push(serde_json::from_str::<TrainRunResult>(&fs::read_to_string(&path).at(&path)?)?);
            }
        }
        out.sort_by(|a, b| (&a.cell, a.fold, a.seed, &a.key).cmp(&(&b.cell, b.fold, b.seed, &b.key)));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::LabelBudget;

    fn result(seed: u64, f1: f64) -> TrainRunResult {
        let cell = ExperimentCell::baseline("d", LabelBudget::All);
        TrainRunResult {
            key: run_key(&cell, 0, seed, "cfg"),
            cell,
            fold: 0,
            seed,
            outcome: RunOutcome::Ok {
                test_macro_f1: f1,
                val_macro_f1: f1,
                best_epoch: 3,
            },
        }
    }

    #[test]
    fn keys_depend_on_every_input() {
        let c = ExperimentCell::baseline("d", LabelBudget::All);
        let k = run_key(&c, 0, 0, "a");
        assert_eq!(k, run_key(&c, 0, 0, "a"));
        assert_ne!(k, run_key(&c, 1, 0, "a"));
        assert_ne!(k, run_key(&c, 0, 1, "a"));
        assert_ne!(k, run_key(&c, 0, 0, "b"));
        assert_ne!(k, run_key(&c.with_budget(LabelBudget::PerClass(2)), 0, 0, "a"));
    }

    #[test]
    fn records_round_trip_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path()).unwrap();
        for (s, f) in [(3, 0.1), (1, 0.5), (2, 0.25)] {
            ledger.record(&result(s, f)).unwrap();
        }
        let failed = TrainRunResult {
            outcome: RunOutcome::Failed { error: "boom".into() },
            ..result(0, 0.0)
        };
        ledger.record(&failed).unwrap();
        assert!(ledger.contains(&failed.key));
        assert_eq!(ledger.get(&failed.key).unwrap(), Some(failed));
        let seeds: Vec<u64> = ledger.load().unwrap().iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![0, 1, 2, 3]);
        assert!(!fs::read_dir(dir.path()).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with('.')));
    }
}
