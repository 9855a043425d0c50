//! Task metrics and the average relative gain aggregate.

mod arg;
mod scores;
mod text;

pub use arg::{arg, render_comparison, ArgReport, Comparison, ScorePair};
pub use scores::{
    accuracy, classification_f1, exact_match, lcs_len, matthews, parse_number, pearson, qa_f1, rouge_l,
};
pub use text::{normalize, normalize_answer, tokens};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions but {golds} references")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no predictions to score")]
    Empty,
    #[error("empty label set")]
    EmptyLabelSet,
    #[error("reference {0:?} is not in the label set")]
    GoldOutsideLabels(String),
    #[error("Matthews correlation needs exactly 2 labels, got {0}")]
    NotBinary(usize),
    #[error("correlation needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("task {task}: baseline score {base} is not positive, relative gain undefined")]
    NonPositiveBase { task: String, base: f64 },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("{0}")]
    Mismatch(String),
}

/// The seven task metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ClassificationF1,
    Accuracy,
    QaF1,
    ExactMatch,
    RougeL,
    Matthews,
    Pearson,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::ClassificationF1,
        Metric::Accuracy,
        Metric::QaF1,
        Metric::ExactMatch,
        Metric::RougeL,
        Metric::Matthews,
        Metric::Pearson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ClassificationF1 => "classification_f1",
            Metric::Accuracy => "accuracy",
            Metric::QaF1 => "qa_f1",
            Metric::ExactMatch => "exact_match",
            Metric::RougeL => "rouge_l",
            Metric::Matthews => "matthews",
            Metric::Pearson => "pearson",
        }
    }

    /// Whether the metric needs a label set (and so a classification task).
    pub fn needs_labels(self) -> bool {
        matches!(self, Metric::ClassificationF1 | Metric::Matthews)
    }

    /// Scores predictions against references. Per-example metrics are
    /// averaged over the list.
    pub fn score<S: AsRef<str>>(self, preds: &[S], golds: &[S], labels: &[S]) -> Result<f64, MetricsError> {
        let mean = |f: fn(&str, &str) -> f64| -> Result<f64, MetricsError> {
            if preds.len() != golds.len() {
                return Err(MetricsError::LengthMismatch {
                    preds: preds.len(),
                    golds: golds.len(),
                });
            }
            if preds.is_empty() {
                return Err(MetricsError::Empty);
            }
            let total: f64 = preds.iter().zip(golds).map(|(p, g)| f(p.as_ref(), g.as_ref())).sum();
            Ok(total / preds.len() as f64)
        };
        match self {
            Metric::ClassificationF1 => classification_f1(preds, golds, labels),
            Metric::Accuracy => accuracy(preds, golds),
            Metric::QaF1 => mean(qa_f1),
            Metric::ExactMatch => exact_match(preds, golds),
            Metric::RougeL => mean(rouge_l),
            Metric::Matthews => matthews(preds, golds, labels),
            Metric::Pearson => {
                let p: Vec<f64> = preds.iter().map(|s| parse_number(s.as_ref())).collect();
                let g: Vec<f64> = golds.iter().map(|s| parse_number(s.as_ref())).collect();
                pearson(&p, &g)
            }
        }
    }

    /// Inclusive range of attainable scores.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Matthews | Metric::Pearson => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, MetricsError> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MetricsError::UnknownMetric(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("bleu".parse::<Metric>().is_err());
    }

    #[test]
    fn per_example_metrics_average() {
        let s = Metric::QaF1.score(&["a b", "x"], &["a b", "y"], &[]).unwrap();
        assert_eq!(s, 0.5);
    }
}
