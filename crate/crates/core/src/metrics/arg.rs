use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// One task's score before and after upstream learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub task: String,
    pub metric: String,
    pub base: f64,
    pub new: f64,
}

impl ScorePair {
    pub fn new(task: impl Into<String>, metric: impl Into<String>, base: f64, new: f64) -> Self {
        Self {
            task: task.into(),
            metric: metric.into(),
            base,
            new,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgReport {
    pub pairs: Vec<ScorePair>,
    pub relative_gains: Vec<f64>,
    pub arg: f64,
}

/// Relative gain `(new - base) / base` per task and their mean.
pub fn arg(pairs: &[ScorePair]) -> Result<ArgReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut gains = Vec::with_capacity(pairs.len());
    for p in pairs {
        if !(p.base > 0.0) {
            return Err(MetricsError::NonPositiveBase {
                task: p.task.clone(),
                base: p.base,
            });
        }
        gains.push((p.new - p.base) / p.base);
    }
    let arg = gains.iter().sum::<f64>() / gains.len() as f64;
    Ok(ArgReport {
        pairs: pairs.to_vec(),
        relative_gains: gains,
        arg,
    })
}

/// ARG columns for several methods against one shared baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<(String, ArgReport)>,
}

impl Comparison {
    /// All reports must cover the same tasks in the same order with the same
    /// baseline scores.
    pub fn new(methods: Vec<(String, ArgReport)>) -> Result<Self, MetricsError> {
        if let Some((_, first)) = methods.first() {
            for (name, r) in &methods[1..] {
                let same = r.pairs.len() == first.pairs.len()
                    && r.pairs
                        .iter()
                        .zip(&first.pairs)
                        .all(|(a, b)| a.task == b.task && a.base == b.base);
                if !same {
                    return Err(MetricsError::Mismatch(format!(
                        "method {name} does not share the baseline tasks"
                    )));
                }
            }
        }
        Ok(Self { methods })
    }
}

/// Plain-text table: one row per task (baseline score, then score and
/// relative gain per method) and a closing ARG row.
pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::new();
    let Some((_, first)) = c.methods.first() else {
        return out;
    };
    let task_w = first.pairs.iter().map(|p| p.task.len()).max().unwrap_or(4).max(4);
    let metric_w = first.pairs.iter().map(|p| p.metric.len()).max().unwrap_or(6).max(6);
    let _ = write!(out, "{:<task_w$}  {:<metric_w$}  {:>9}", "task", "metric", "baseline");
    for (name, _) in &c.methods {
        let _ = write!(out, "  {:>12}  {:>12}", name, format!("gain({name})"));
    }
    out.push('\n');
    for (i, p) in first.pairs.iter().enumerate() {
        let _ = write!(out, "{:<task_w$}  {:<metric_w$}  {:>9.4}", p.task, p.metric, p.base);
        for (_, r) in &c.methods {
            let _ = write!(
                out,
                "  {:>12.4}  {:>11.2}%",
                r.pairs[i].new,
                100.0 * r.relative_gains[i]
            );
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<task_w$}  {:<metric_w$}  {:>9}", "ARG", "", "");
    for (_, r) in &c.methods {
        let _ = write!(out, "  {:>12}  {:>11.2}%", "", 100.0 * r.arg);
    }
    out.push('\n');
    out
}
