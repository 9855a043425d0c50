//! Task repository: task files, templates, few-shot sampling, partitions
//! and synthetic task suites.

mod partition;
mod repo;
mod sampling;
mod synth;
mod taskfile;
mod template;

pub use partition::{load_partition, Partition, Role};
pub use repo::{Gym, GymIndex, IndexEntry};
pub use sampling::{
    holdout_test, sample_few_shot, FewShotSplit, DEFAULT_SEEDS, HOLDOUT_FRACTION, OTHER_SHOTS, SHOTS_PER_CLASS,
};
pub use synth::{synth_suite, Family, FamilySpec, SynthConfig};
pub use taskfile::{load_task, load_task_with_seed, save_task, HOLDOUT_SEED};
pub use template::Template;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Metric;

#[derive(Debug, Error)]
pub enum GymError {
    #[error("record is missing field {0:?}")]
    MissingField(String),
    #[error("task {task}: {reason}")]
    InvalidTask { task: String, reason: String },
    #[error("task {task}{}: need {required} examples, pool has {available}", class.as_ref().map(|c| format!(" class {c:?}")).unwrap_or_default())]
    InsufficientPool {
        task: String,
        class: Option<String>,
        required: usize,
        available: usize,
    },
    #[error("need at least {required} raw examples, got {available}")]
    TooFewExamples { required: usize, available: usize },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("partition {partition}: tasks in more than one set: {}", overlaps.iter().map(|(t, a, b)| format!("{t} ({a}/{b})")).collect::<Vec<_>>().join(", "))]
    Overlap {
        partition: String,
        overlaps: Vec<(String, Role, Role)>,
    },
    #[error("partition {partition}: {role} set is empty")]
    EmptySet { partition: String, role: Role },
    #[error("unknown tasks: {}", .0.join(", "))]
    UnknownTasks(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl GymError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GymError::Io {
            path: path.into(),
            source,
        }
    }
}

/// One input/output pair in text-to-text form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
}

impl Example {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Other,
}

/// A named task: the full original training pool and a held-out test set.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub name: String,
    pub kind: TaskKind,
    pub label_set: Option<Vec<String>>,
    pub metric: Metric,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
}

/// Drops repeated examples, keeping first occurrences in order.
pub fn dedupe(examples: Vec<Example>) -> Vec<Example> {
    let mut seen = HashSet::new();
    examples.into_iter().filter(|e| seen.insert(e.clone())).collect()
}

impl Task {
    /// Builds a task, removing duplicate pool examples and checking the
    /// task invariants.
    pub fn new(
        name: impl Into<String>,
        kind: TaskKind,
        label_set: Option<Vec<String>>,
        metric: Metric,
        pool: Vec<Example>,
        test: Vec<Example>,
    ) -> Result<Self, GymError> {
        let task = Task {
            name: name.into(),
            kind,
            label_set,
            metric,
            pool: dedupe(pool),
            test,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), GymError> {
        let invalid = |reason: String| GymError::InvalidTask {
            task: self.name.clone(),
            reason,
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid(format!("unusable task name {:?}", self.name)));
        }
        match (self.kind, &self.label_set) {
            (TaskKind::Classification, None) => return Err(invalid("classification task without a label set".into())),
            (TaskKind::Classification, Some(l)) if l.is_empty() => return Err(invalid("empty label set".into())),
            (TaskKind::Other, Some(_)) => return Err(invalid("label set given for a non-classification task".into())),
            _ => {}
        }
        if self.metric.needs_labels() && self.kind != TaskKind::Classification {
            return Err(invalid(format!("metric {} needs a classification task", self.metric)));
        }
        if self.metric == Metric::Matthews && self.label_set.as_ref().map(Vec::len) != Some(2) {
            return Err(invalid("matthews needs exactly two labels".into()));
        }
        for e in self.pool.iter().chain(&self.test) {
            if e.input.trim().is_empty() || e.output.trim().is_empty() {
                return Err(invalid(format!("empty input or output in {e:?}")));
            }
            if let Some(labels) = &self.label_set {
                if !labels.contains(&e.output) {
                    return Err(invalid(format!("output {:?} not in the label set", e.output)));
                }
            }
        }
        let test: HashSet<&Example> = self.test.iter().collect();
        if let Some(e) = self.pool.iter().find(|e| test.contains(e)) {
            return Err(invalid(format!("example {e:?} is in both pool and test")));
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        self.label_set.as_deref().unwrap_or(&[])
    }
}
