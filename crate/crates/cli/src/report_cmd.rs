use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crossfit_core::fewshot::{relative_gain, summarize, TaskResult, TaskSummary};
use crossfit_core::metrics::{render_comparison, Comparison};

use crate::manifest::{write_atomic, RunManifest, Status};

struct Results {
    label: String,
    dir: PathBuf,
    summaries: Vec<TaskSummary>,
}

/// `DIR` or `LABEL=DIR`; the label defaults to the run's source.
fn load(spec: &str) -> Result<Results> {
    let (label, dir) = match spec.split_once('=') {
        Some((l, d)) if !l.is_empty() => (Some(l.to_string()), PathBuf::from(d)),
        _ => (None, PathBuf::from(spec)),
    };
    let manifest = RunManifest::load(&dir)?.with_context(|| format!("{} has no manifest", dir.display()))?;
    if manifest.command != "fewshot" {
        bail!("{} is not a few-shot results directory", dir.display());
    }
    manifest.verify(&dir)?;
    let mut paths: Vec<_> = fs::read_dir(dir.join("results"))
        .with_context(|| format!("listing {}/results", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut results: Vec<TaskResult> = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p)?;
        let rs: Vec<TaskResult> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        results.extend(rs);
    }
    let label = label.unwrap_or_else(|| {
        manifest.config["source"]["label"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| dir.display().to_string())
    });
    Ok(Results {
        label,
        summaries: summarize(&results),
        dir,
    })
}

fn task_set(r: &Results) -> BTreeSet<&str> {
    r.summaries.iter().map(|s| s.task.as_str()).collect()
}

pub fn run(baseline: &str, methods: &[String], out: &Path) -> Result<()> {
    let base = load(baseline)?;
    let others = methods.iter().map(|m| load(m)).collect::<Result<Vec<_>>>()?;
    let want = task_set(&base);
    let mut problems = Vec::new();
    for o in &others {
        let got = task_set(o);
        let missing: Vec<_> = want.difference(&got).copied().collect();
        let extra: Vec<_> = got.difference(&want).copied().collect();
        if !missing.is_empty() || !extra.is_empty() {
            problems.push(format!(
                "{} ({}): missing [{}], extra [{}]",
                o.label,
                o.dir.display(),
                missing.join(", "),
                extra.join(", ")
            ));
        }
    }
    if !problems.is_empty() {
        bail!("task sets differ from the baseline:\n  {}", problems.join("\n  "));
    }
    let mut columns = Vec::new();
    for o in &others {
        columns.push((o.label.clone(), relative_gain(&o.summaries, &base.summaries)?));
    }
    let comparison = Comparison::new(columns)?;
    let table = render_comparison(&comparison);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    write_atomic(
        &out.join("report.json"),
        (serde_json::to_string_pretty(&comparison)? + "\n").as_bytes(),
    )?;
    let snapshot = serde_json::json!({
        "baseline": base.dir,
        "methods": others.iter().map(|o| (o.label.clone(), o.dir.clone())).collect::<Vec<_>>(),
    });
    let mut manifest = RunManifest::new("report", snapshot);
    manifest.set_stage("report", Status::Complete, None);
    manifest.save(out)?;
    print!("{table}");
    Ok(())
}
