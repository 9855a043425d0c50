use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use crossfit_core::gym::{load_task, synth_suite, Gym, SynthConfig, Task, DEFAULT_SEEDS};

use crate::manifest::{RunManifest, Status};
use crate::UsageError;

/// Every `*.jsonl` task file in `dir`, all failures reported together.
fn load_task_dir(dir: &Path) -> Result<Vec<Task>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no task files (*.jsonl) in {}", dir.display());
    }
    let mut tasks = Vec::new();
    let mut errors = Vec::new();
    for p in &paths {
        match load_task(p) {
            Ok(t) => tasks.push(t),
            Err(e) => errors.push(format!("  {}: {e}", p.display())),
        }
    }
    if !errors.is_empty() {
        bail!("invalid task files:\n{}", errors.join("\n"));
    }
    Ok(tasks)
}

pub fn run(config: Option<&Path>, tasks: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let (tasks, snapshot) = match (config, tasks) {
        (Some(_), Some(_)) => return Err(UsageError("pass either --config or --tasks, not both".into()).into()),
        (_, Some(dir)) => (
            load_task_dir(dir)?,
            serde_json::json!({ "tasks": dir, "seeds": DEFAULT_SEEDS }),
        ),
        (cfg, None) => {
            let synth = match cfg {
                Some(path) => {
                    let text =
                        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                    serde_json::from_str::<SynthConfig>(&text)
                        .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?
                }
                None => SynthConfig::default(),
            };
            let tasks = synth_suite(&synth, seed)?;
            (
                tasks,
                serde_json::json!({ "synth": synth, "seed": seed, "seeds": DEFAULT_SEEDS }),
            )
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let gym = Gym::build(out, &tasks, &DEFAULT_SEEDS)?;
    let mut manifest = RunManifest::new("gym", snapshot);
    manifest.set_stage("gym", Status::Complete, None);
    manifest.save(out)?;
    println!(
        "wrote {} tasks and {} splits to {}",
        gym.index().tasks.len(),
        gym.index().tasks.len() * gym.seeds().len(),
        out.display()
    );
    Ok(())
}
