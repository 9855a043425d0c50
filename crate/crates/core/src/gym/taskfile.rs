//! Line-delimited task files. The first line is a header object with the
//! task metadata; every further line is one record:
//!
//! ```text
//! {"name": "sst", "kind": "classification", "label_set": ["negative", "positive"], "metric": "accuracy"}
//! {"input": "a fine film", "output": "positive", "split": "train"}
//! {"fields": {"premise": "P", "hypothesis": "H", "label": "entailment"}, "split": "dev"}
//! ```
//!
//! `split` is `train` (the default), `dev` (an official development set,
//! which becomes the test set) or `test` (an already withheld test set).
//! Records given only as `fields` are rendered with the header's template.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampling::holdout_test;
use super::template::Template;
use super::{Example, GymError, Task, TaskKind};
use crate::metrics::Metric;

/// Seed of the test holdout applied when a task file has no test records.
pub const HOLDOUT_SEED: u64 = 0;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_set: Option<Vec<String>>,
    metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<Template>,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fields: Option<BTreeMap<String, String>>,
    #[serde(default)]
    split: Split,
}

pub fn load_task(path: &Path) -> Result<Task, GymError> {
    load_task_with_seed(path, HOLDOUT_SEED)
}

/// Reads a task file; when it has no `test` records the test set is formed
/// by [`holdout_test`] with `holdout_seed`.
pub fn load_task_with_seed(path: &Path, holdout_seed: u64) -> Result<Task, GymError> {
    let text = fs::read_to_string(path).map_err(|e| GymError::io(path, e))?;
    let parse_err = |line: usize, message: String| GymError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty task file".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, e.to_string()))?;
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        let line_no = i + 1;
        let record: Record = serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
        let example = match (&record.input, &record.output, &record.fields) {
            (Some(input), Some(output), _) => Example::new(input.clone(), output.clone()),
            (_, _, Some(fields)) => {
                let template = header
                    .template
                    .as_ref()
                    .ok_or_else(|| parse_err(line_no, "record has only fields but the header has no template".into()))?;
                template
                    .apply(fields)
                    .map_err(|e| parse_err(line_no, e.to_string()))?
            }
            _ => return Err(parse_err(line_no, "record needs input and output, or fields".into())),
        };
        match record.split {
            Split::Train => train.push(example),
            Split::Dev => dev.push(example),
            Split::Test => test.push(example),
        }
    }
    let (pool, test) = if !test.is_empty() {
        if !dev.is_empty() {
            return Err(parse_err(1, "a task file may hold dev or test records, not both".into()));
        }
        (train, test)
    } else {
        holdout_test(train, (!dev.is_empty()).then_some(dev), holdout_seed)?
    };
    Task::new(header.name, header.kind, header.label_set, header.metric, pool, test)
}

/// Renders a task in the file format: pool as `train`, test as `test`.
pub fn task_to_string(task: &Task) -> Result<String, GymError> {
    let header = Header {
        name: task.name.clone(),
        kind: task.kind,
        label_set: task.label_set.clone(),
        metric: task.metric,
        template: None,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (split, examples) in [(Split::Train, &task.pool), (Split::Test, &task.test)] {
        for e in examples {
            let r = Record {
                input: Some(e.input.clone()),
                output: Some(e.output.clone()),
                fields: None,
                split,
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&r)?);
        }
    }
    Ok(out)
}

pub fn save_task(task: &Task, path: &Path) -> Result<(), GymError> {
    fs::write(path, task_to_string(task)?).map_err(|e| GymError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let task = Task::new(
            "t",
            TaskKind::Classification,
            Some(vec!["yes".into(), "no".into()]),
            Metric::Accuracy,
            vec![Example::new("a", "yes"), Example::new("b", "no")],
            vec![Example::new("c", "no")],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_task(&task, &path).unwrap();
        assert_eq!(load_task(&path).unwrap(), task);
    }

    #[test]
    fn template_records_and_holdout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nli.jsonl");
        let mut text = String::from(
            r#"{"name":"nli","kind":"classification","label_set":["entailment","neutral"],"metric":"classification_f1","template":{"name":"nli","fields":[["premise:","premise"],["hypothesis:","hypothesis"]],"target":"label"}}"#,
        );
        text.push('\n');
        for i in 0..20 {
            let label = if i % 2 == 0 { "entailment" } else { "neutral" };
            let _ = writeln!(
                text,
                r#"{{"fields":{{"premise":"p{i}","hypothesis":"h{i}","label":"{label}"}}}}"#
            );
        }
        fs::write(&path, text).unwrap();
        let task = load_task(&path).unwrap();
        assert_eq!(task.test.len(), 4);
        assert_eq!(task.pool.len(), 16);
        assert!(task.pool.iter().chain(&task.test).all(|e| e.input.starts_with("premise: p")));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"name\":\"b\",\"kind\":\"other\",\"metric\":\"rouge_l\"}\n{\"input\":\"x\",\"output\":\"y\"}\n{oops\n",
        )
        .unwrap();
        match load_task(&path).unwrap_err() {
            GymError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }
}
