use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{FinetuneMode, LabelBudget};
use crate::error::{Error, Result};
use crate::objectives::PretextKind;

/// Where the pretext encoder was trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// A separate large unlabelled corpus, trained once and shared by all folds.
    Capture,
    /// The target dataset's own training users, trained once per fold.
    Target,
    None,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Capture => "capture",
            Source::Target => "target",
            Source::None => "none",
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Source::Capture, Source::Target, Source::None]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pretext source {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointStage {
    Before,
    Best,
    Last,
}

impl CheckpointStage {
    pub const ALL: [CheckpointStage; 3] = [CheckpointStage::Before, CheckpointStage::Best, CheckpointStage::Last];

    pub fn name(self) -> &'static str {
        match self {
            CheckpointStage::Before => "before",
            CheckpointStage::Best => "best",
            CheckpointStage::Last => "last",
        }
    }
}

/// One column entry of the results table: everything that defines a run
/// except the fold and the seed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub dataset_id: String,
    pub pretext: Option<PretextKind>,
    pub source: Source,
    pub mode: FinetuneMode,
    pub budget: LabelBudget,
    pub stage: CheckpointStage,
}

impl ExperimentCell {
    pub fn baseline(dataset_id: &str, budget: LabelBudget) -> Self {
        Self {
            dataset_id: dataset_id.to_string(),
            pretext: None,
            source: Source::None,
            mode: FinetuneMode::Baseline,
            budget,
            stage: CheckpointStage::Best,
        }
    }

    pub fn pretrained(dataset_id: &str, pretext: PretextKind, source: Source, mode: FinetuneMode, budget: LabelBudget) -> Self {
        Self {
            dataset_id: dataset_id.to_string(),
            pretext: Some(pretext),
            source,
            mode,
            budget,
            stage: CheckpointStage::Best,
        }
    }

    pub fn with_budget(&self, budget: LabelBudget) -> Self {
        Self { budget, ..self.clone() }
    }

    pub fn with_stage(&self, stage: CheckpointStage) -> Self {
        Self { stage, ..self.clone() }
    }

    /// A cell without a pretext is a baseline run from scratch, and only
    /// such a cell may be one.
    pub fn validate(&self) -> Result<()> {
        let none = self.pretext.is_none();
        if none != (self.mode == FinetuneMode::Baseline) || none != (self.source == Source::None) {
            return Err(Error::InvalidConfig(format!(
                "inconsistent cell {self}: baseline runs have no pretext and no source, pretrained runs need both"
            )));
        }
        Ok(())
    }

    /// Column name in the results table, e.g. `Tuning Target`.
    pub fn strategy(&self) -> String {
        match (self.mode, self.source) {
            (FinetuneMode::Baseline, _) => "Baseline".into(),
            (mode, source) => {
                let m = if mode == FinetuneMode::Frozen { "Frozen" } else { "Tuning" };
                let s = if source == Source::Capture { "Capture" } else { "Target" };
                format!("{m} {s}")
            }
        }
    }

    pub fn pretext_name(&self) -> &'static str {
        self.pretext.map_or("none", PretextKind::name)
    }
}

impl fmt::Display for ExperimentCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}/{}/{}",
            self.dataset_id,
            self.pretext_name(),
            self.source.name(),
            self.mode,
            self.budget,
            self.stage.name()
        )
    }
}
