//! On-disk gym layout:
//!
//! ```text
//! <root>/index.json
//! <root>/tasks/<name>.jsonl
//! <root>/splits/<name>/<seed>.json
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sampling::{sample_few_shot, FewShotSplit};
use super::taskfile::{load_task, task_to_string};
use super::{GymError, Task, TaskKind};
use crate::metrics::Metric;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub kind: TaskKind,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_set: Option<Vec<String>>,
    pub pool: usize,
    pub test: usize,
    pub task_file: String,
    pub split_files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GymIndex {
    pub seeds: Vec<u64>,
    pub tasks: Vec<IndexEntry>,
}

/// A materialized task repository.
#[derive(Clone, Debug)]
pub struct Gym {
    root: PathBuf,
    index: GymIndex,
}

fn write(path: &Path, contents: &str) -> Result<(), GymError> {
    fs::write(path, contents).map_err(|e| GymError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), GymError> {
    fs::create_dir_all(path).map_err(|e| GymError::io(path, e))
}

impl Gym {
    /// Writes every task, its few-shot splits for each seed, and the index.
    /// Output bytes depend only on the tasks and seeds.
    pub fn build(root: &Path, tasks: &[Task], seeds: &[u64]) -> Result<Self, GymError> {
        let mut names = BTreeSet::new();
        for t in tasks {
            if !names.insert(&t.name) {
                return Err(GymError::InvalidTask {
                    task: t.name.clone(),
                    reason: "duplicate task name".into(),
                });
            }
        }
        // Sample everything first so a failure leaves nothing half-written.
        let mut sampled = Vec::with_capacity(tasks.len());
        for t in tasks {
            let splits = seeds
                .iter()
                .map(|&s| sample_few_shot(t, s))
                .collect::<Result<Vec<_>, _>>()?;
            sampled.push(splits);
        }
        mkdir(&root.join("tasks"))?;
        let mut entries = Vec::with_capacity(tasks.len());
        for (t, splits) in tasks.iter().zip(sampled) {
            let task_file = format!("tasks/{}.jsonl", t.name);
            write(&root.join(&task_file), &task_to_string(t)?)?;
            let dir = root.join("splits").join(&t.name);
            mkdir(&dir)?;
            let mut split_files = Vec::with_capacity(splits.len());
            for s in &splits {
                let rel = format!("splits/{}/{}.json", t.name, s.seed);
                write(&root.join(&rel), &(serde_json::to_string_pretty(s)? + "\n"))?;
                split_files.push(rel);
            }
            entries.push(IndexEntry {
                name: t.name.clone(),
                kind: t.kind,
                metric: t.metric,
                label_set: t.label_set.clone(),
                pool: t.pool.len(),
                test: t.test.len(),
                task_file,
                split_files,
            });
        }
        let index = GymIndex {
            seeds: seeds.to_vec(),
            tasks: entries,
        };
        write(&root.join("index.json"), &(serde_json::to_string_pretty(&index)? + "\n"))?;
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn open(root: &Path) -> Result<Self, GymError> {
        let path = root.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| GymError::io(&path, e))?;
        let index: GymIndex = serde_json::from_str(&text).map_err(|e| GymError::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index(&self) -> &GymIndex {
        &self.index
    }

    pub fn seeds(&self) -> &[u64] {
        &self.index.seeds
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.index.tasks.iter().map(|e| e.name.clone()).collect()
    }

    fn entry(&self, name: &str) -> Result<&IndexEntry, GymError> {
        self.index
            .tasks
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| GymError::UnknownTasks(vec![name.to_string()]))
    }

    pub fn task(&self, name: &str) -> Result<Task, GymError> {
        load_task(&self.root.join(&self.entry(name)?.task_file))
    }

    pub fn split(&self, name: &str, seed: u64) -> Result<FewShotSplit, GymError> {
        self.entry(name)?;
        let path = self.root.join("splits").join(name).join(format!("{seed}.json"));
        let text = fs::read_to_string(&path).map_err(|e| GymError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| GymError::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Every split of `name`, in seed order.
    pub fn splits(&self, name: &str) -> Result<Vec<FewShotSplit>, GymError> {
        self.index.seeds.iter().map(|&s| self.split(name, s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gym::{synth_suite, SynthConfig, DEFAULT_SEEDS};

    #[test]
    fn build_and_reopen() {
        let tasks = synth_suite(&SynthConfig::default(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let gym = Gym::build(dir.path(), &tasks, &DEFAULT_SEEDS).unwrap();
        let again = Gym::open(dir.path()).unwrap();
        assert_eq!(again.index(), gym.index());
        let t = &tasks[0];
        assert_eq!(&again.task(&t.name).unwrap(), t);
        assert_eq!(again.splits(&t.name).unwrap().len(), 5);
        assert_eq!(again.split(&t.name, 42).unwrap(), sample_few_shot(t, 42).unwrap());
    }
}
