use std::collections::{BTreeSet, HashMap};

use super::text::{normalize, normalize_answer, tokens};
use super::MetricsError;

fn check_lengths<A, B>(preds: &[A], golds: &[B]) -> Result<(), MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn match_rate<S: AsRef<str>>(preds: &[S], golds: &[S], norm: fn(&str) -> String) -> Result<f64, MetricsError> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| norm(p.as_ref()) == norm(g.as_ref()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of predictions equal to their gold after [`normalize`].
pub fn accuracy<S: AsRef<str>>(preds: &[S], golds: &[S]) -> Result<f64, MetricsError> {
    match_rate(preds, golds, normalize)
}

/// Fraction of predictions equal to their gold after [`normalize_answer`].
pub fn exact_match<S: AsRef<str>>(preds: &[S], golds: &[S]) -> Result<f64, MetricsError> {
    match_rate(preds, golds, normalize_answer)
}

/// Macro-averaged F1 over the classes that occur among the golds, plus any
/// label-set class that was predicted without occurring among the golds.
/// Predictions outside the label set are wrong for every class.
pub fn classification_f1<S: AsRef<str>>(preds: &[S], golds: &[S], labels: &[S]) -> Result<f64, MetricsError> {
    check_lengths(preds, golds)?;
    if labels.is_empty() {
        return Err(MetricsError::EmptyLabelSet);
    }
    let labels: BTreeSet<String> = labels.iter().map(|l| normalize(l.as_ref())).collect();
    let preds: Vec<String> = preds.iter().map(|p| normalize(p.as_ref())).collect();
    let golds: Vec<String> = golds.iter().map(|g| normalize(g.as_ref())).collect();
    if let Some(g) = golds.iter().find(|g| !labels.contains(*g)) {
        return Err(MetricsError::GoldOutsideLabels(g.clone()));
    }
    let mut counts: HashMap<&str, (usize, usize, usize)> = HashMap::new();
    for (p, g) in preds.iter().zip(&golds) {
        if p == g {
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(g).or_default().2 += 1;
            if labels.contains(p) {
                counts.entry(p).or_default().1 += 1;
            }
        }
    }
    let total: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        .sum();
    Ok(total / counts.len() as f64)
}

fn overlap_f1(common: usize, pred_len: usize, gold_len: usize) -> f64 {
    match (pred_len, gold_len) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if common == 0 => 0.0,
        _ => {
            let p = common as f64 / pred_len as f64;
            let r = common as f64 / gold_len as f64;
            2.0 * p * r / (p + r)
        }
    }
}

/// Token-overlap F1 with multiset counting.
pub fn qa_f1(pred: &str, gold: &str) -> f64 {
    let pred = tokens(pred);
    let gold = tokens(gold);
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    overlap_f1(common, pred.len(), gold.len())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F-measure over tokens.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let pred = tokens(pred);
    let gold = tokens(gold);
    overlap_f1(lcs_len(&pred, &gold), pred.len(), gold.len())
}

/// Matthews correlation for a two-label task. The first label is taken as
/// positive; predictions outside the label set count as wrong.
pub fn matthews<S: AsRef<str>>(preds: &[S], golds: &[S], labels: &[S]) -> Result<f64, MetricsError> {
    check_lengths(preds, golds)?;
    let labels: Vec<String> = labels.iter().map(|l| normalize(l.as_ref())).collect();
    if labels.len() != 2 || labels[0] == labels[1] {
        return Err(MetricsError::NotBinary(labels.len()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for (p, g) in preds.iter().zip(golds) {
        let p = normalize(p.as_ref());
        let g = normalize(g.as_ref());
        let gold_pos = if g == labels[0] {
            true
        } else if g == labels[1] {
            false
        } else {
            return Err(MetricsError::GoldOutsideLabels(g));
        };
        match (gold_pos, p == g) {
            (true, true) => tp += 1.0,
            (true, false) => fn_ += 1.0,
            (false, true) => tn += 1.0,
            (false, false) => fp += 1.0,
        }
    }
    let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    Ok(if denom == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / denom })
}

/// Sample Pearson correlation; 0 when either side has no variance.
pub fn pearson(preds: &[f64], golds: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(preds, golds)?;
    if preds.len() < 2 {
        return Err(MetricsError::TooFewPoints(preds.len()));
    }
    let n = preds.len() as f64;
    let mp = preds.iter().sum::<f64>() / n;
    let mg = golds.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &g) in preds.iter().zip(golds) {
        sxy += (p - mp) * (g - mg);
        sxx += (p - mp) * (p - mp);
        syy += (g - mg) * (g - mg);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Parses a predicted number; unparsable text scores as 0.
pub fn parse_number(s: &str) -> f64 {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_normalizes() {
        assert_eq!(exact_match(&["the Cat."], &["cat"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["the Cat."], &["cat"]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            accuracy(&["a"], &["a", "b"]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(accuracy::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn hand_confusion_matrix() {
        let f1 = classification_f1(&["a", "a"], &["a", "b"], &["a", "b"]).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(classification_f1(&["z", "y"], &["a", "b"], &["a", "b"]).unwrap(), 0.0);
        assert!(classification_f1(&["a"], &["a"], &[]).is_err());
    }

    #[test]
    fn unseen_class_counts_only_when_predicted() {
        // "c" never appears among golds; predicting it adds a zero-F1 class.
        let without = classification_f1(&["a", "b"], &["a", "b"], &["a", "b", "c"]).unwrap();
        assert_eq!(without, 1.0);
        let with = classification_f1(&["a", "c"], &["a", "b"], &["a", "b", "c"]).unwrap();
        assert!((with - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn token_f1_and_rouge() {
        assert!((qa_f1("the cat sat", "cat sat") - 0.8).abs() < 1e-12);
        assert!((rouge_l("a b c d", "a c d") - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(qa_f1("", ""), 1.0);
        assert_eq!(rouge_l("", "x"), 0.0);
        assert_eq!(qa_f1("x", "y"), 0.0);
    }

    #[test]
    fn mcc_cases() {
        let l = ["yes", "no"];
        assert_eq!(matthews(&["yes", "no"], &["yes", "no"], &l).unwrap(), 1.0);
        assert_eq!(matthews(&["no", "yes"], &["yes", "no"], &l).unwrap(), -1.0);
        let p = ["yes", "no", "yes", "no"];
        let g = ["yes", "no", "no", "yes"];
        assert_eq!(matthews(&p, &g, &l).unwrap(), 0.0);
        assert!(matthews(&["a"], &["a"], &["a", "b", "c"]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.9820).abs() < 1e-4);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(parse_number("x"), 0.0);
        assert_eq!(parse_number(" 2.5 "), 2.5);
    }
}
