use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crossfit_core::fewshot::hp_search;
use crossfit_core::gym::{FewShotSplit, Task};
use crossfit_core::model::{Checkpoint, Parameters};
use crossfit_core::optim::OptimizerState;
use crossfit_core::upstream::{
    train, Best, LogEntry, Observer, Options, TrainState, UpstreamError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, RunManifest, Status};
use crate::pipeline::{base_checkpoint, open_gym, open_partition, thread_pool};

const STAGE: &str = "upstream";

#[derive(Serialize, Deserialize)]
struct SavedState {
    step: usize,
    best: Option<(usize, f64)>,
}

fn step_file(step: usize) -> String {
    format!("checkpoints/step-{step:06}.ckpt")
}

fn json_line<T: Serialize>(file: &mut File, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Keeps only lines whose `step` is at most `last`.
fn truncate_jsonl(path: &Path, last: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut kept = String::new();
    for line in reader.lines() {
        let line = line?;
        let value: serde_json::Value = serde_json::from_str(&line)?;
        if value["step"].as_u64().is_some_and(|s| s as usize <= last) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    write_atomic(path, kept.as_bytes())
}

struct RunDir {
    dir: PathBuf,
    manifest: RunManifest,
    log: File,
    validations: File,
    base: Checkpoint<f32>,
    partition: String,
    halt_after: Option<usize>,
    best_written: Option<usize>,
}

impl RunDir {
    fn stamp(&self, params: &Parameters<f32>, step: usize, score: Option<f64>) -> Checkpoint<f32> {
        let mut c = self.base.clone();
        c.params = params.clone();
        c.provenance.method = Some(self.manifest_method());
        c.provenance.partition = Some(self.partition.clone());
        c.provenance.meta_step = step as u64;
        c.provenance.validation_score = score;
        c
    }

    fn manifest_method(&self) -> String {
        self.manifest.config["method"].as_str().unwrap_or_default().to_string()
    }
}

impl Observer<f32> for RunDir {
    fn on_step(&mut self, entry: &LogEntry) -> Result<(), UpstreamError> {
        json_line(&mut self.log, entry).map_err(|e| UpstreamError::Observer(format!("writing run log: {e:#}")))
    }

    fn on_checkpoint(&mut self, state: &TrainState<f32>, score: Option<f64>) -> Result<bool, UpstreamError> {
        let mut save = || -> Result<()> {
            let current = self.stamp(&state.params, state.step, score);
            current.save(&self.dir.join(step_file(state.step)))?;
            if let Some(s) = score {
                json_line(&mut self.validations, &serde_json::json!({ "step": state.step, "score": s }))?;
            }
            if let Some(best) = &state.best {
                if self.best_written != Some(best.step) {
                    self.stamp(&best.params, best.step, Some(best.score))
                        .save(&self.dir.join("state/best.ckpt"))?;
                    self.best_written = Some(best.step);
                }
            }
            write_atomic(
                &self.dir.join("state/optimizer.json"),
                serde_json::to_string(&state.optimizer)?.as_bytes(),
            )?;
            let saved = SavedState {
                step: state.step,
                best: state.best.as_ref().map(|b| (b.step, b.score)),
            };
            write_atomic(&self.dir.join("state/state.json"), serde_json::to_string(&saved)?.as_bytes())?;
            self.manifest.set_stage(STAGE, Status::Incomplete, Some(state.step));
            self.manifest.save(&self.dir)?;
            Ok(())
        };
        save().map_err(|e| UpstreamError::Observer(format!("saving run state: {e:#}")))?;
        Ok(self.halt_after.is_none_or(|h| state.step < h))
    }
}

fn load_state(dir: &Path, base: &Checkpoint<f32>) -> Result<TrainState<f32>> {
    let saved: SavedState = serde_json::from_str(&fs::read_to_string(dir.join("state/state.json"))?)?;
    let optimizer: OptimizerState = serde_json::from_str(&fs::read_to_string(dir.join("state/optimizer.json"))?)?;
    let params = Checkpoint::<f32>::load(&dir.join(step_file(saved.step)))?.params;
    let best = match saved.best {
        Some((step, score)) => Some(Best {
            step,
            score,
            params: Checkpoint::<f32>::load(&dir.join("state/best.ckpt"))?.params,
        }),
        None => None,
    };
    if params.layout() != base.params.layout() {
        bail!("saved state in {} does not match the configured model", dir.display());
    }
    Ok(TrainState {
        step: saved.step,
        params,
        optimizer,
        best,
    })
}

/// Scores parameters on the validation tasks: mean relative gain of the
/// single-cell few-shot protocol over the untrained model, over tasks whose
/// baseline score is positive (mean raw score if there are none).
struct DevScorer {
    tasks: Vec<(Task, FewShotSplit, f64)>,
    base: Checkpoint<f32>,
    cell: crossfit_core::fewshot::FinetuneConfig,
}

impl DevScorer {
    fn new(base: &Checkpoint<f32>, tasks: Vec<(Task, FewShotSplit)>, cfg: &RunConfig) -> Result<Self> {
        let cell = cfg.validation_cell();
        let baselines = tasks
            .par_iter()
            .map(|(t, s)| hp_search(base, t, s, &cell).map(|r| r.test_score))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            tasks: tasks.into_iter().zip(baselines).map(|((t, s), b)| (t, s, b)).collect(),
            base: base.clone(),
            cell,
        })
    }

    fn score(&self, params: &Parameters<f32>) -> Result<f64, UpstreamError> {
        let start = Checkpoint {
            params: params.clone(),
            ..self.base.clone()
        };
        let scores = self
            .tasks
            .par_iter()
            .map(|(t, s, _)| hp_search(&start, t, s, &self.cell).map(|r| r.test_score))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| UpstreamError::Validation(e.to_string()))?;
        let gains: Vec<f64> = self
            .tasks
            .iter()
            .zip(&scores)
            .filter(|((_, _, b), _)| *b > 0.0)
            .map(|((_, _, b), s)| (s - b) / b)
            .collect();
        let values = if gains.is_empty() { scores } else { gains };
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn run(mut cfg: RunConfig, out: &Path, allow_overlap: bool, halt_after: Option<usize>) -> Result<()> {
    cfg.resolve_seeds();
    cfg.validate()?;
    let gym = open_gym(&cfg)?;
    let partition_path = cfg.partition_path()?.to_path_buf();
    let partition = open_partition(&partition_path, allow_overlap, &gym)?;
    let pool = thread_pool(cfg.jobs)?;
    let first_seed = *gym.seeds().first().context("gym has no sampling seeds")?;
    let splits = partition
        .train
        .iter()
        .map(|t| gym.split(t, first_seed))
        .collect::<Result<Vec<_>, _>>()?;
    let dev_tasks = partition
        .dev
        .iter()
        .map(|t| Ok((gym.task(t)?, gym.split(t, first_seed)?)))
        .collect::<Result<Vec<_>>>()?;
    let base = base_checkpoint(&cfg, &gym)?;

    let snapshot = serde_json::to_value(&cfg)?;
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    fs::create_dir_all(out.join("state"))?;
    let resume = match RunManifest::load(out)? {
        Some(m) if m.command != STAGE => bail!("{} holds a {} run", out.display(), m.command),
        Some(m) if m.is_complete() => bail!("{} already holds a completed run", out.display()),
        Some(m) if m.config != snapshot => bail!("{} was started with a different config", out.display()),
        Some(m) => match m.stages.get(STAGE).and_then(|s| s.step) {
            Some(step) => {
                truncate_jsonl(&out.join("log.jsonl"), step)?;
                truncate_jsonl(&out.join("validation.jsonl"), step)?;
                Some(load_state(out, &base)?)
            }
            None => None,
        },
        None => None,
    };
    if resume.is_none() {
        for f in ["log.jsonl", "validation.jsonl"] {
            write_atomic(&out.join(f), b"")?;
        }
    }
    write_atomic(&out.join("config.json"), (serde_json::to_string_pretty(&cfg)? + "\n").as_bytes())?;
    base.save(&out.join("base.ckpt"))?;
    let mut manifest = RunManifest::new(STAGE, snapshot);
    manifest.set_stage(STAGE, Status::Incomplete, resume.as_ref().map(|s| s.step));
    manifest.save(out)?;

    let append = |name: &str| {
        OpenOptions::new()
            .append(true)
            .open(out.join(name))
            .with_context(|| format!("opening {name}"))
    };
    let mut run_dir = RunDir {
        dir: out.to_path_buf(),
        manifest,
        log: append("log.jsonl")?,
        validations: append("validation.jsonl")?,
        base: base.clone(),
        partition: partition.name.clone(),
        halt_after,
        best_written: resume.as_ref().and_then(|s| s.best.as_ref().map(|b| b.step)),
    };
    let resumed_from = resume.as_ref().map(|s| s.step);
    let outcome = pool.install(|| -> Result<_> {
        let scorer = if dev_tasks.is_empty() {
            None
        } else {
            Some(DevScorer::new(&base, dev_tasks, &cfg)?)
        };
        let validate = |p: &Parameters<f32>| scorer.as_ref().map_or(Ok(0.0), |s| s.score(p));
        let options = Options {
            validator: scorer.as_ref().map(|_| &validate as &(dyn Fn(&Parameters<f32>) -> _ + Sync)),
            resume,
            observer: Some(&mut run_dir),
        };
        Ok(train(&base, &splits, cfg.method, &cfg.meta, options)?)
    })?;
    if let Some(step) = resumed_from {
        println!("resumed from step {step}");
    }
    if !outcome.completed {
        println!("halted after step {}; rerun the same command to resume", outcome.state.step);
        return Ok(());
    }
    let mut checkpoint = outcome.checkpoint;
    checkpoint.provenance.partition = Some(partition.name.clone());
    checkpoint.save(&out.join("checkpoint.ckpt"))?;
    let skipped = outcome.log.iter().filter(|e| e.skipped.is_some()).count();
    let mut manifest = run_dir.manifest;
    manifest.set_stage(STAGE, Status::Complete, Some(cfg.meta.total_steps));
    manifest.save(out)?;
    println!(
        "{} on {}: {} steps ({} skipped), selected step {}{}",
        cfg.method,
        partition.name,
        cfg.meta.total_steps,
        skipped,
        checkpoint.provenance.meta_step,
        checkpoint
            .provenance
            .validation_score
            .map(|s| format!(", validation score {s:.4}"))
            .unwrap_or_default()
    );
    Ok(())
}
