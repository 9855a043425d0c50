use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use crossfit_core::fewshot::{evaluate_direct, hp_search, summarize, FinetuneConfig, TaskResult};
use crossfit_core::model::Checkpoint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{digest, write_atomic, RunManifest, Status};
use crate::pipeline::{base_checkpoint, open_gym, open_partition, thread_pool};
use crate::UsageError;

const STAGE: &str = "fewshot";

/// Where the fine-tuned weights came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Source {
    pub label: String,
    pub checkpoint: Option<String>,
    pub checkpoint_sha256: Option<String>,
}

/// Per-task line of `summary.json`.
#[derive(Serialize)]
struct SummaryLine<'a> {
    task: &'a str,
    metric: &'a str,
    mean_dev: f64,
    mean_test: f64,
    test_scores: Vec<f64>,
}

pub fn run(
    mut cfg: RunConfig,
    checkpoint: Option<&Path>,
    direct: bool,
    paper_grid: bool,
    out: &Path,
    allow_overlap: bool,
) -> Result<()> {
    if direct == checkpoint.is_some() {
        return Err(UsageError("pass exactly one of --checkpoint PATH or --direct".into()).into());
    }
    if paper_grid {
        cfg.finetune = FinetuneConfig::paper();
    }
    cfg.resolve_seeds();
    cfg.validate()?;
    let gym = open_gym(&cfg)?;
    let partition = open_partition(cfg.partition_path()?, allow_overlap, &gym)?;
    let (start, source) = match checkpoint {
        Some(path) => {
            if !path.is_file() {
                bail!("checkpoint {} not found", path.display());
            }
            let c = Checkpoint::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
            let source = Source {
                label: c.provenance.method.clone().unwrap_or_else(|| "checkpoint".into()),
                checkpoint: Some(path.display().to_string()),
                checkpoint_sha256: Some(digest(path)?),
            };
            (c, source)
        }
        None => (
            base_checkpoint(&cfg, &gym)?,
            Source {
                label: "direct".into(),
                checkpoint: None,
                checkpoint_sha256: None,
            },
        ),
    };
    let mut jobs = Vec::new();
    for name in &partition.test {
        let task = gym.task(name)?;
        for split in gym.splits(name)? {
            jobs.push((task.clone(), split));
        }
    }
    let pool = thread_pool(cfg.jobs)?;
    let results: Vec<TaskResult> = pool.install(|| {
        jobs.par_iter()
            .map(|(task, split)| {
                if direct {
                    evaluate_direct(&start, task, split, &cfg.finetune)
                } else {
                    hp_search(&start, task, split, &cfg.finetune)
                }
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    fs::create_dir_all(out.join("results")).with_context(|| format!("creating {}", out.display()))?;
    let summaries = summarize(&results);
    for s in &summaries {
        let path = out.join("results").join(format!("{}.json", s.task));
        write_atomic(&path, (serde_json::to_string_pretty(&s.seeds)? + "\n").as_bytes())?;
    }
    let lines: Vec<SummaryLine> = summaries
        .iter()
        .map(|s| SummaryLine {
            task: &s.task,
            metric: s.metric.name(),
            mean_dev: s.mean_dev,
            mean_test: s.mean_test,
            test_scores: s.seeds.iter().map(|r| r.test_score).collect(),
        })
        .collect();
    write_atomic(
        &out.join("summary.json"),
        (serde_json::to_string_pretty(&lines)? + "\n").as_bytes(),
    )?;
    let snapshot = serde_json::json!({
        "source": source,
        "partition": partition.name,
        "run": cfg,
    });
    let mut manifest = RunManifest::new(STAGE, snapshot);
    manifest.set_stage(STAGE, Status::Complete, None);
    manifest.save(out)?;
    println!(
        "{}: {} task results over {} test tasks written to {}",
        source.label,
        results.len(),
        summaries.len(),
        out.display()
    );
    for s in &summaries {
        println!("  {:<24} {:<18} {:.4}", s.task, s.metric.name(), s.mean_test);
    }
    Ok(())
}
