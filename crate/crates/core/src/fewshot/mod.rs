//! Few-shot learning stage: grid-searched fine-tuning of a checkpoint on
//! one task split, selection on dev, and a single scoring pass on test.

use std::cell::Cell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::gym::{Example, FewShotSplit, Task};
use crate::metrics::{arg, ArgReport, Metric, MetricsError, ScorePair};
use crate::model::{loss_and_grad, predict, Batch, Checkpoint, ModelError, Parameters};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::shuffle::EpochOrder;

#[derive(Debug, Error)]
pub enum FewshotError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid fine-tuning config: {0}")]
    Config(String),
    #[error("task {task}: {detail}")]
    Task { task: String, detail: String },
    #[error("non-finite training loss at update {step}")]
    NonFinite { step: usize },
    #[error("task {task}: every grid cell failed ({failures})")]
    AllCellsFailed { task: String, failures: String },
}

/// Fine-tuning hyperparameters and grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub total_updates: usize,
    pub warmup_updates: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for FinetuneConfig {
    /// Grid sized for small randomly initialized models.
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-3, 3e-4, 1e-4],
            batch_sizes: vec![4, 8],
            ..Self::paper()
        }
    }
}

impl FinetuneConfig {
    /// The grid and schedule used for pre-trained models.
    pub fn paper() -> Self {
        Self {
            learning_rates: vec![1e-5, 2e-5, 5e-5],
            batch_sizes: vec![2, 4, 8],
            total_updates: 1000,
            warmup_updates: 100,
            eval_every: 100,
            seed: 0,
            optimizer: OptimizerConfig::adam(),
        }
    }

    pub fn validate(&self) -> Result<(), FewshotError> {
        let bad = |m: &str| Err(FewshotError::Config(m.to_string()));
        if self.learning_rates.is_empty() || self.batch_sizes.is_empty() {
            return bad("the grid needs at least one learning rate and one batch size");
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning rates must be positive");
        }
        if self.batch_sizes.contains(&0) {
            return bad("batch sizes must be positive");
        }
        if self.total_updates > 0 && self.warmup_updates >= self.total_updates {
            return bad("warmup_updates must be below total_updates");
        }
        if self.eval_every == 0 || !self.total_updates.is_multiple_of(self.eval_every) {
            return bad("eval_every must divide total_updates");
        }
        Ok(())
    }

    /// Grid cells as `(lr, batch size)`.
    pub fn cells(&self) -> Vec<(f64, usize)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.batch_sizes.iter().map(move |&b| (lr, b)))
            .collect()
    }
}

/// Linear warmup from 0 to `peak` over `warmup` updates, then linear decay
/// to 0 at `total`. `step` counts completed updates.
pub fn schedule(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else if total > warmup {
        peak * total.saturating_sub(step) as f64 / (total - warmup) as f64
    } else {
        0.0
    }
}

/// Result of one fine-tuning run.
#[derive(Clone, Debug)]
pub struct Finetuned<T: Real> {
    /// Snapshot with the best dev score.
    pub params: Parameters<T>,
    pub best_step: usize,
    pub dev_score: f64,
    /// `(update, dev score)` at each evaluation.
    pub dev_curve: Vec<(usize, f64)>,
    /// Mean training loss over each evaluation interval.
    pub losses: Vec<f64>,
}

fn encode(start: &Checkpoint<impl Real>, examples: &[Example]) -> Vec<(Vec<usize>, Vec<usize>)> {
    examples
        .iter()
        .map(|e| (start.vocab.encode(&e.input), start.vocab.encode(&e.output)))
        .collect()
}

fn score<T: Real>(
    params: &Parameters<T>,
    start: &Checkpoint<T>,
    task: &Task,
    examples: &[Example],
) -> Result<f64, FewshotError> {
    let preds = examples
        .iter()
        .map(|e| predict(params, &start.config, &start.vocab, &e.input))
        .collect::<Result<Vec<_>, _>>()?;
    let golds: Vec<&str> = examples.iter().map(|e| e.output.as_str()).collect();
    let preds: Vec<&str> = preds.iter().map(String::as_str).collect();
    let labels: Vec<&str> = task.labels().iter().map(String::as_str).collect();
    Ok(task.metric.score(&preds, &golds, &labels)?)
}

/// Fine-tunes `start` on the split's train set with one grid cell and
/// keeps the snapshot that scores best on dev (earliest on ties).
pub fn finetune<T: Real>(
    start: &Checkpoint<T>,
    task: &Task,
    split: &FewShotSplit,
    lr: f64,
    batch_size: usize,
    config: &FinetuneConfig,
) -> Result<Finetuned<T>, FewshotError> {
    if !(lr >= 0.0 && lr.is_finite()) || batch_size == 0 {
        return Err(FewshotError::Config("grid values must be non-negative".into()));
    }
    if split.train.is_empty() || split.dev.is_empty() {
        return Err(FewshotError::Task {
            task: split.task.clone(),
            detail: "split needs train and dev examples".into(),
        });
    }
    let train = encode(start, &split.train);
    let mut order = EpochOrder::new(config.seed ^ split.seed, 3, train.len());
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut params = start.params.clone();
    let rows = batch_size.min(train.len());
    let mut best: Option<(usize, f64, Parameters<T>)> = None;
    let mut dev_curve = Vec::new();
    let mut losses = Vec::new();
    let mut interval = 0.0;
    for step in 0..config.total_updates {
        let chosen: Vec<_> = (step * rows..(step + 1) * rows).map(|p| train[order.at(p)].clone()).collect();
        let batch = Batch::new(&chosen, &start.config)?;
        let (loss, grads) = loss_and_grad(&params, &start.config, &batch)?;
        let loss = loss.to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() || !grads.iter().all(|g| g.all_finite()) {
            return Err(FewshotError::NonFinite { step });
        }
        interval += loss;
        let rate = T::from_f64_lossy(schedule(step, lr, config.warmup_updates, config.total_updates));
        let next = optimizer
            .step(params.arrays(), &grads, rate)
            .map_err(|_| FewshotError::NonFinite { step })?;
        params = params.with_arrays(next)?;
        let done = step + 1;
        if done % config.eval_every == 0 {
            losses.push(interval / config.eval_every as f64);
            interval = 0.0;
            let s = score(&params, start, task, &split.dev)?;
            dev_curve.push((done, s));
            if best.as_ref().is_none_or(|b| s > b.1) {
                best = Some((done, s, params.clone()));
            }
        }
    }
    let (best_step, dev_score, params) = match best {
        Some(b) => b,
        None => {
            let s = score(&params, start, task, &split.dev)?;
            dev_curve.push((0, s));
            (0, s, params)
        }
    };
    Ok(Finetuned {
        params,
        best_step,
        dev_score,
        dev_curve,
        losses,
    })
}

/// One grid cell's record in a result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub lr: f64,
    pub batch_size: usize,
    pub best_step: Option<usize>,
    pub dev_score: Option<f64>,
    pub dev_curve: Vec<(usize, f64)>,
    pub losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

/// Outcome of the few-shot stage for one task and sampling seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub seed: u64,
    pub metric: Metric,
    pub dev_score: f64,
    pub test_score: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Times the test set was read while producing this result.
    pub test_reads: usize,
    pub cells: Vec<CellRecord>,
}

/// Test examples that count how often they are scored.
struct TestSet<'a> {
    examples: &'a [Example],
    reads: Cell<usize>,
}

impl<'a> TestSet<'a> {
    fn new(examples: &'a [Example]) -> Self {
        Self {
            examples,
            reads: Cell::new(0),
        }
    }

    fn read(&self) -> &'a [Example] {
        self.reads.set(self.reads.get() + 1);
        self.examples
    }
}

/// Runs every grid cell, picks the best dev score (ties: lower lr, then
/// smaller batch) and scores that snapshot on the task's test set once.
pub fn hp_search<T: Real>(
    start: &Checkpoint<T>,
    task: &Task,
    split: &FewShotSplit,
    config: &FinetuneConfig,
) -> Result<TaskResult, FewshotError> {
    config.validate()?;
    if split.task != task.name {
        return Err(FewshotError::Task {
            task: task.name.clone(),
            detail: format!("split belongs to {}", split.task),
        });
    }
    if task.test.is_empty() {
        return Err(FewshotError::Task {
            task: task.name.clone(),
            detail: "no test examples".into(),
        });
    }
    let runs: Vec<_> = config
        .cells()
        .into_par_iter()
        .map(|(lr, b)| (lr, b, finetune(start, task, split, lr, b, config)))
        .collect();
    let mut cells = Vec::with_capacity(runs.len());
    let mut winner: Option<(f64, usize, f64, &Finetuned<T>)> = None;
    for (lr, b, run) in &runs {
        match run {
            Ok(f) => {
                cells.push(CellRecord {
                    lr: *lr,
                    batch_size: *b,
                    best_step: Some(f.best_step),
                    dev_score: Some(f.dev_score),
                    dev_curve: f.dev_curve.clone(),
                    losses: f.losses.clone(),
                    failed: None,
                });
                let better = match winner {
                    None => true,
                    Some((wl, wb, ws, _)) => {
                        f.dev_score > ws || (f.dev_score == ws && (*lr < wl || (*lr == wl && *b < wb)))
                    }
                };
                if better {
                    winner = Some((*lr, *b, f.dev_score, f));
                }
            }
            Err(FewshotError::NonFinite { step }) => cells.push(CellRecord {
                lr: *lr,
                batch_size: *b,
                best_step: None,
                dev_score: None,
                dev_curve: Vec::new(),
                losses: Vec::new(),
                failed: Some(format!("non-finite loss at update {step}")),
            }),
            Err(e) => return Err(FewshotError::Task {
                task: task.name.clone(),
                detail: e.to_string(),
            }),
        }
    }
    let Some((lr, batch_size, dev_score, best)) = winner else {
        let failures = cells
            .iter()
            .filter_map(|c| c.failed.as_ref().map(|f| format!("lr {} batch {}: {f}", c.lr, c.batch_size)))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(FewshotError::AllCellsFailed {
            task: task.name.clone(),
            failures,
        });
    };
    let test = TestSet::new(&task.test);
    let test_score = score(&best.params, start, task, test.read())?;
    Ok(TaskResult {
        task: task.name.clone(),
        seed: split.seed,
        metric: task.metric,
        dev_score,
        test_score,
        lr,
        batch_size,
        test_reads: test.reads.get(),
        cells,
    })
}

/// The baseline: the same search started from the untouched base model.
pub fn evaluate_direct<T: Real>(
    base: &Checkpoint<T>,
    task: &Task,
    split: &FewShotSplit,
    config: &FinetuneConfig,
) -> Result<TaskResult, FewshotError> {
    hp_search(base, task, split, config)
}

/// Per-task aggregate over sampling seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub metric: Metric,
    pub mean_dev: f64,
    pub mean_test: f64,
    pub seeds: Vec<TaskResult>,
}

/// Averages each task's results over its seeds, in first-seen task order.
pub fn summarize(results: &[TaskResult]) -> Vec<TaskSummary> {
    let mut out: Vec<TaskSummary> = Vec::new();
    for r in results {
        match out.iter_mut().find(|s| s.task == r.task) {
            Some(s) => s.seeds.push(r.clone()),
            None => out.push(TaskSummary {
                task: r.task.clone(),
                metric: r.metric,
                mean_dev: 0.0,
                mean_test: 0.0,
                seeds: vec![r.clone()],
            }),
        }
    }
    for s in &mut out {
        let n = s.seeds.len() as f64;
        s.mean_dev = s.seeds.iter().map(|r| r.dev_score).sum::<f64>() / n;
        s.mean_test = s.seeds.iter().map(|r| r.test_score).sum::<f64>() / n;
    }
    out
}

/// Average relative gain of `method` over `baseline` on mean test scores;
/// both must cover the same tasks.
pub fn relative_gain(method: &[TaskSummary], baseline: &[TaskSummary]) -> Result<ArgReport, FewshotError> {
    let mut pairs = Vec::with_capacity(baseline.len());
    for b in baseline {
        let m = method.iter().find(|m| m.task == b.task).ok_or_else(|| FewshotError::Task {
            task: b.task.clone(),
            detail: "missing from the compared results".into(),
        })?;
        pairs.push(ScorePair::new(&b.task, b.metric.name(), b.mean_test, m.mean_test));
    }
    if method.len() != baseline.len() {
        return Err(FewshotError::Config("compared results cover different tasks".into()));
    }
    Ok(arg(&pairs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_and_decays() {
        assert_eq!(schedule(50, 1e-5, 100, 1000), 5e-6);
        assert_eq!(schedule(0, 1e-5, 100, 1000), 0.0);
        assert_eq!(schedule(100, 1e-5, 100, 1000), 1e-5);
        assert!((schedule(550, 1e-5, 100, 1000) - 5e-6).abs() < 1e-18);
        assert_eq!(schedule(1000, 1e-5, 100, 1000), 0.0);
    }

    #[test]
    fn paper_grid_has_nine_cells_and_ten_evaluations() {
        let c = FinetuneConfig::paper();
        c.validate().unwrap();
        assert_eq!(c.cells().len(), 9);
        assert_eq!(c.total_updates / c.eval_every, 10);
        assert_eq!(FinetuneConfig::default().cells().len(), 6);
    }

    #[test]
    fn invalid_configs() {
        let mut c = FinetuneConfig::paper();
        c.eval_every = 300;
        assert!(c.validate().is_err());
        let mut c = FinetuneConfig::paper();
        c.warmup_updates = 1000;
        assert!(c.validate().is_err());
        let mut c = FinetuneConfig::paper();
        c.learning_rates.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn test_set_counts_reads() {
        let ex = [Example::new("a", "b")];
        let t = TestSet::new(&ex);
        t.read();
        assert_eq!(t.reads.get(), 1);
    }
}
