//! Synthetic task families. Every task draws its own lexicon of random
//! letter strings, disjoint from the other tasks of the suite, so tasks of
//! one family share structure but not vocabulary.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::holdout_test;
use super::{Example, GymError, Task, TaskKind};
use crate::metrics::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Output repeats the input words.
    Copy,
    /// Output is the input words in reverse order.
    Reverse,
    /// Output is the input in capitals.
    Uppercase,
    /// Output is the input words sorted.
    Sort,
    /// Whether a marker word occurs an even or odd number of times.
    Parity,
    /// Whether a keyword occurs at all.
    Keyword,
    /// Which of 2 to 4 word classes the input is drawn from.
    Lexicon,
    /// Copy the value paired with the queried key out of a context.
    Slot,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Copy => "copy",
            Family::Reverse => "reverse",
            Family::Uppercase => "uppercase",
            Family::Sort => "sort",
            Family::Parity => "parity",
            Family::Keyword => "keyword",
            Family::Lexicon => "lexicon",
            Family::Slot => "slot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: Family,
    pub tasks: usize,
    /// Number of classes for the lexicon family (2 to 4).
    #[serde(default = "default_classes")]
    pub classes: usize,
}

fn default_classes() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub families: Vec<FamilySpec>,
    /// Raw examples per task before the test holdout.
    pub examples_per_task: usize,
    pub lexicon_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let spec = |family, tasks| FamilySpec {
            family,
            tasks,
            classes: default_classes(),
        };
        Self {
            families: vec![
                spec(Family::Copy, 2),
                spec(Family::Reverse, 2),
                spec(Family::Uppercase, 2),
                spec(Family::Sort, 2),
                spec(Family::Parity, 1),
                spec(Family::Keyword, 1),
                spec(Family::Lexicon, 1),
                spec(Family::Slot, 1),
            ],
            examples_per_task: 240,
            lexicon_size: 8,
            min_words: 2,
            max_words: 4,
            min_word_len: 3,
            max_word_len: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), GymError> {
        let bad = |reason: &str| GymError::InvalidTask {
            task: "synthetic suite".into(),
            reason: reason.into(),
        };
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(bad("need 1 <= min_words <= max_words"));
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return Err(bad("need 1 <= min_word_len <= max_word_len"));
        }
        if self.lexicon_size < 2 {
            return Err(bad("lexicon_size must be at least 2"));
        }
        if self.families.iter().any(|f| f.family == Family::Lexicon && !(2..=4).contains(&f.classes)) {
            return Err(bad("lexicon family needs 2 to 4 classes"));
        }
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.families.iter().map(|f| f.tasks).sum()
    }
}

/// Words that structure inputs and outputs and must never be drawn into a
/// task lexicon.
const RESERVED: [&str; 10] = ["copy", "reverse", "uppercase", "sort", "parity", "even", "odd", "yes", "no", "tag"];

struct Words<'a> {
    rng: &'a mut ChaCha8Rng,
    used: HashSet<String>,
    min_len: usize,
    max_len: usize,
}

impl Words<'_> {
    fn fresh(&mut self, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let len = self.rng.random_range(self.min_len..=self.max_len);
            let w: String = (0..len).map(|_| self.rng.random_range(b'a'..=b'z') as char).collect();
            if !RESERVED.contains(&w.as_str()) && self.used.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String], n: usize) -> Vec<&'a str> {
    (0..n).map(|_| words[rng.random_range(0..words.len())].as_str()).collect()
}

struct Generated {
    kind: TaskKind,
    labels: Option<Vec<String>>,
    metric: Metric,
    examples: Vec<Example>,
}

fn generate(
    family: FamilySpec,
    cfg: &SynthConfig,
    words: &mut Words<'_>,
    rng: &mut ChaCha8Rng,
) -> Generated {
    let target = cfg.examples_per_task;
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(target);
    let mut add = |e: Example, examples: &mut Vec<Example>| {
        if seen.insert(e.clone()) {
            examples.push(e);
        }
    };
    let attempts = target * 50;
    let (min_w, max_w) = (cfg.min_words, cfg.max_words);
    let prefix = family.family.name();
    match family.family {
        Family::Copy | Family::Reverse | Family::Uppercase | Family::Sort => {
            let lex = words.fresh(cfg.lexicon_size);
            for _ in 0..attempts {
                if examples.len() == target {
                    break;
                }
                let n = rng.random_range(min_w..=max_w);
                let payload = pick(rng, &lex, n);
                let output = match family.family {
                    Family::Copy => payload.join(" "),
                    Family::Reverse => payload.iter().rev().copied().collect::<Vec<_>>().join(" "),
                    Family::Uppercase => payload.join(" ").to_uppercase(),
                    _ => {
                        let mut s = payload.clone();
                        s.sort_unstable();
                        s.join(" ")
                    }
                };
                add(Example::new(format!("{prefix}: {}", payload.join(" ")), output), &mut examples);
            }
            Generated {
                kind: TaskKind::Other,
                labels: None,
                metric: Metric::RougeL,
                examples,
            }
        }
        Family::Parity | Family::Keyword => {
            let lex = words.fresh(cfg.lexicon_size + 1);
            let (marker, filler) = (lex[0].as_str(), &lex[1..]);
            let labels: Vec<String> = match family.family {
                Family::Parity => vec!["even".into(), "odd".into()],
                _ => vec!["yes".into(), "no".into()],
            };
            // Alternate labels so the classes stay balanced.
            let mut next = 0usize;
            for _ in 0..attempts {
                if examples.len() == target {
                    break;
                }
                let label = next % 2;
                let n = rng.random_range(min_w..=max_w);
                let mut seq = pick(rng, filler, n);
                let markers = match (family.family, label) {
                    (Family::Parity, 0) => 2 * rng.random_range(0..=1),
                    (Family::Parity, _) => 1 + 2 * rng.random_range(0..=1),
                    (_, 0) => 1,
                    _ => 0,
                };
                for _ in 0..markers {
                    let at = rng.random_range(0..=seq.len());
                    seq.insert(at, marker);
                }
                let before = examples.len();
                add(
                    Example::new(format!("{prefix}: {}", seq.join(" ")), labels[label].clone()),
                    &mut examples,
                );
                if examples.len() > before {
                    next += 1;
                }
            }
            Generated {
                kind: TaskKind::Classification,
                labels: Some(labels),
                metric: if family.family == Family::Parity {
                    Metric::Accuracy
                } else {
                    Metric::ClassificationF1
                },
                examples,
            }
        }
        Family::Lexicon => {
            let c = family.classes;
            let labels = words.fresh(c);
            let groups: Vec<Vec<String>> = (0..c).map(|_| words.fresh(cfg.lexicon_size)).collect();
            let mut next = 0usize;
            for _ in 0..attempts {
                if examples.len() == target {
                    break;
                }
                let class = next % c;
                let n = rng.random_range(min_w..=max_w);
                let seq = pick(rng, &groups[class], n);
                let before = examples.len();
                add(
                    Example::new(format!("tag: {}", seq.join(" ")), labels[class].clone()),
                    &mut examples,
                );
                if examples.len() > before {
                    next += 1;
                }
            }
            Generated {
                kind: TaskKind::Classification,
                labels: Some(labels),
                metric: Metric::ClassificationF1,
                examples,
            }
        }
        Family::Slot => {
            let keys = words.fresh(cfg.lexicon_size);
            let values = words.fresh(cfg.lexicon_size);
            for _ in 0..attempts {
                if examples.len() == target {
                    break;
                }
                let n = rng.random_range(min_w.max(2)..=max_w.max(2));
                let mut ks: Vec<&String> = keys.iter().collect();
                ks.shuffle(rng);
                ks.truncate(n);
                let vs = pick(rng, &values, n);
                let q = rng.random_range(0..n);
                let context: Vec<String> = ks.iter().zip(&vs).map(|(k, v)| format!("{k} {v}")).collect();
                add(
                    Example::new(
                        format!("question: {} context: {}", ks[q], context.join(" ")),
                        vs[q].to_string(),
                    ),
                    &mut examples,
                );
            }
            Generated {
                kind: TaskKind::Other,
                labels: None,
                metric: Metric::QaF1,
                examples,
            }
        }
    }
}

/// Generates the configured families. Task names are `<family>_<index>`,
/// numbered per family. Each task's test set is withheld as for any task
/// without an official dev set.
pub fn synth_suite(cfg: &SynthConfig, seed: u64) -> Result<Vec<Task>, GymError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut word_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut words = Words {
        rng: &mut word_rng,
        used: HashSet::new(),
        min_len: cfg.min_word_len,
        max_len: cfg.max_word_len,
    };
    let mut tasks = Vec::with_capacity(cfg.task_count());
    for spec in &cfg.families {
        for i in 0..spec.tasks {
            let g = generate(spec.clone(), cfg, &mut words, &mut rng);
            let (pool, test) = holdout_test(g.examples, None, rng.random())?;
            tasks.push(Task::new(
                format!("{}_{i:02}", spec.family.name()),
                g.kind,
                g.labels,
                g.metric,
                pool,
                test,
            )?);
        }
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_outputs_equal_payload() {
        let tasks = synth_suite(&SynthConfig::default(), 1).unwrap();
        let copy = tasks.iter().find(|t| t.name == "copy_00").unwrap();
        for e in copy.pool.iter().chain(&copy.test) {
            assert_eq!(e.input.strip_prefix("copy: ").unwrap(), e.output);
        }
    }

    #[test]
    fn parity_is_balanced_binary() {
        let tasks = synth_suite(&SynthConfig::default(), 2).unwrap();
        let t = tasks.iter().find(|t| t.name == "parity_00").unwrap();
        assert_eq!(t.labels().len(), 2);
        let all: Vec<&Example> = t.pool.iter().chain(&t.test).collect();
        let even = all.iter().filter(|e| e.output == "even").count();
        assert!(even.abs_diff(all.len() - even) <= 1);
    }

    #[test]
    fn lexicons_are_disjoint_within_a_suite() {
        let tasks = synth_suite(&SynthConfig::default(), 3).unwrap();
        let mut owner: std::collections::HashMap<String, String> = Default::default();
        for t in &tasks {
            for e in t.pool.iter().chain(&t.test) {
                for w in e.input.split(' ').skip(1) {
                    if w == "context:" {
                        continue;
                    }
                    if let Some(o) = owner.insert(w.to_string(), t.name.clone()) {
                        assert_eq!(o, t.name, "word {w} shared");
                    }
                }
            }
        }
    }
}
