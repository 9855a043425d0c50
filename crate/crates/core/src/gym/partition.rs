use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GymError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Dev => "dev",
            Role::Test => "test",
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    train: Vec<String>,
    dev: Vec<String>,
    test: Vec<String>,
}

/// Named train/dev/test sets of task names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub name: String,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Partition {
    /// Reads a partition document without checking its invariants. The
    /// syntax is JSON relaxed to also accept single-quoted strings and
    /// trailing commas.
    pub fn parse(name: &str, text: &str, path: &Path) -> Result<Self, GymError> {
        let file: PartitionFile = json5::from_str(text).map_err(|e| {
            let json5::Error::Message { msg, location } = e;
            GymError::Parse {
                path: path.to_path_buf(),
                line: location.map_or(1, |l| l.line),
                message: msg,
            }
        })?;
        Ok(Partition {
            name: name.to_string(),
            train: file.train,
            dev: file.dev,
            test: file.test,
        })
    }

    pub fn sets(&self) -> [(Role, &[String]); 3] {
        [(Role::Train, &self.train), (Role::Dev, &self.dev), (Role::Test, &self.test)]
    }

    /// Every task listed in more than one set (or twice in one set), with
    /// the sets involved.
    pub fn overlaps(&self) -> Vec<(String, Role, Role)> {
        let mut seen: BTreeMap<&str, Role> = BTreeMap::new();
        let mut out = Vec::new();
        for (role, names) in self.sets() {
            for n in names {
                match seen.get(n.as_str()) {
                    Some(&first) => out.push((n.clone(), first, role)),
                    None => {
                        seen.insert(n, role);
                    }
                }
            }
        }
        out
    }

    /// Sets must be pairwise disjoint; train and test must be non-empty.
    pub fn validate(&self) -> Result<(), GymError> {
        let overlaps = self.overlaps();
        if !overlaps.is_empty() {
            return Err(GymError::Overlap {
                partition: self.name.clone(),
                overlaps,
            });
        }
        for (role, names) in [(Role::Train, &self.train), (Role::Test, &self.test)] {
            if names.is_empty() {
                return Err(GymError::EmptySet {
                    partition: self.name.clone(),
                    role,
                });
            }
        }
        Ok(())
    }

    /// Names that are not among `known`, sorted.
    pub fn unknown_tasks(&self, known: &BTreeSet<String>) -> Vec<String> {
        let listed: BTreeSet<&String> = self.train.iter().chain(&self.dev).chain(&self.test).collect();
        listed.into_iter().filter(|n| !known.contains(*n)).cloned().collect()
    }

    pub fn check_known(&self, known: &BTreeSet<String>) -> Result<(), GymError> {
        let unknown = self.unknown_tasks(known);
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(GymError::UnknownTasks(unknown))
        }
    }

    /// Removes overlapping tasks from the earlier set they appear in, so a
    /// test task is never trained on.
    pub fn without_overlaps(&self) -> Self {
        let test: BTreeSet<&String> = self.test.iter().collect();
        let dev: BTreeSet<&String> = self.dev.iter().collect();
        let mut train_seen = BTreeSet::new();
        let mut dev_seen = BTreeSet::new();
        Partition {
            name: self.name.clone(),
            train: self
                .train
                .iter()
                .filter(|n| !test.contains(n) && !dev.contains(n) && train_seen.insert(*n))
                .cloned()
                .collect(),
            dev: self
                .dev
                .iter()
                .filter(|n| !test.contains(n) && dev_seen.insert(*n))
                .cloned()
                .collect(),
            test: {
                let mut seen = BTreeSet::new();
                self.test.iter().filter(|n| seen.insert(*n)).cloned().collect()
            },
        }
    }
}

/// Reads and validates a partition file; the partition is named after the
/// file stem.
pub fn load_partition(path: &Path) -> Result<Partition, GymError> {
    let text = fs::read_to_string(path).map_err(|e| GymError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let p = Partition::parse(&name, &text, path)?;
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Partition, GymError> {
        Partition::parse("p", text, Path::new("p.json"))
    }

    #[test]
    fn relaxed_syntax() {
        let p = parse("{\n \"train\": ['a', 'b',],\n \"dev\": [],\n \"test\": [\"c\"],\n}\n").unwrap();
        assert_eq!(p.train, vec!["a", "b"]);
        assert!(p.dev.is_empty());
        p.validate().unwrap();
    }

    #[test]
    fn overlap_is_reported_by_name() {
        let p = parse(r#"{"train": ["a", "x"], "dev": [], "test": ["x"]}"#).unwrap();
        let err = p.validate().unwrap_err();
        assert!(err.to_string().contains("x (train/test)"), "{err}");
        assert_eq!(p.without_overlaps().train, vec!["a"]);
    }

    #[test]
    fn parse_error_has_line() {
        let err = parse("{\n\"train\": [\n\"a\" \"b\"]\n}").unwrap_err();
        match err {
            GymError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_names() {
        let p = parse(r#"{"train": ["a"], "dev": [], "test": ["b"]}"#).unwrap();
        let known: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(p.unknown_tasks(&known), vec!["b"]);
    }
}
