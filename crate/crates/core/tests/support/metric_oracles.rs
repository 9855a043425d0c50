//! Brute-force reference implementations for the metric suite. Each is
//! written from the definition, independently of the library code.

#![allow(dead_code)]

use crossfit_core::metrics::{
    accuracy, classification_f1, exact_match, matthews, pearson, qa_f1, rouge_l, Metric,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHABET: [&str; 3] = ["a", "b", "c"];

/// Every token sequence over the alphabet with length at most `max_len`.
pub fn all_sequences(max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for t in ALPHABET {
                let mut s2: Vec<&str> = s.clone();
                s2.push(t);
                next.push(s2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Every length-`n` list over `symbols`.
pub fn all_lists<T: Clone>(symbols: &[T], n: usize) -> Vec<Vec<T>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s: Vec<T>| {
                symbols.iter().map(move |x| {
                    let mut s2 = s.clone();
                    s2.push(x.clone());
                    s2
                })
            })
            .collect();
    }
    out
}

fn is_subsequence(needle: &[&str], hay: &[&str]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs_brute(a: &[&str], b: &[&str]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&str> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

/// Size of the multiset intersection, counted symbol by symbol.
pub fn bag_overlap(a: &[&str], b: &[&str]) -> usize {
    ALPHABET
        .iter()
        .map(|t| {
            let ca = a.iter().filter(|x| *x == t).count();
            let cb = b.iter().filter(|x| *x == t).count();
            ca.min(cb)
        })
        .sum()
}

pub fn f_measure(common: usize, pred_len: usize, gold_len: usize) -> f64 {
    if pred_len == 0 && gold_len == 0 {
        return 1.0;
    }
    if pred_len == 0 || gold_len == 0 || common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred_len as f64;
    let r = common as f64 / gold_len as f64;
    2.0 * p * r / (p + r)
}

/// Macro F1 from an explicit confusion matrix. Row = gold, column = pred;
/// the extra last column collects predictions outside the label set.
pub fn macro_f1_matrix(preds: &[&str], golds: &[&str], labels: &[&str]) -> f64 {
    let k = labels.len();
    let mut m = vec![vec![0usize; k + 1]; k];
    for (p, g) in preds.iter().zip(golds) {
        let gi = labels.iter().position(|l| l == g).expect("gold in labels");
        let pi = labels.iter().position(|l| l == p).unwrap_or(k);
        m[gi][pi] += 1;
    }
    let mut scores = Vec::new();
    for c in 0..k {
        let row: usize = m[c].iter().sum();
        let col: usize = (0..k).map(|r| m[r][c]).sum();
        if row == 0 && col == 0 {
            continue;
        }
        let tp = m[c][c] as f64;
        let precision = if col == 0 { 0.0 } else { tp / col as f64 };
        let recall = if row == 0 { 0.0 } else { tp / row as f64 };
        scores.push(if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        });
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Pearson correlation through the pairwise-difference identity.
pub fn pearson_pairwise(x: &[f64], y: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Matthews correlation as the correlation of the two indicator vectors.
pub fn mcc_indicator(preds: &[&str], golds: &[&str], positive: &str) -> f64 {
    let x: Vec<f64> = preds.iter().map(|p| (*p == positive) as u8 as f64).collect();
    let y: Vec<f64> = golds.iter().map(|g| (*g == positive) as u8 as f64).collect();
    pearson_pairwise(&x, &y)
}

/// Hand-normalized surface forms for exact match: all three strings in a
/// group mean the same answer.
pub const EM_FORMS: [(&str, &str); 3] = [("x", "x"), ("The X.", "x"), ("y", "y")];

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

/// Counts of inputs checked per metric.
#[derive(Debug, Default)]
pub struct Coverage {
    pub per_metric: Vec<(Metric, usize)>,
}

fn sampled_lists<'a>(rng: &mut ChaCha8Rng, symbols: &[&'a str], n: usize, count: usize) -> Vec<(Vec<&'a str>, Vec<&'a str>)> {
    (0..count)
        .map(|_| {
            let a = (0..n).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
            let b = (0..n).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
            (a, b)
        })
        .collect()
}

/// Pairs of label lists of every length 1..=8: exhaustive up to
/// `exhaustive_len`, seeded samples beyond.
fn list_pairs<'a>(symbols: &[&'a str], exhaustive_len: usize, samples: usize) -> Vec<(Vec<&'a str>, Vec<&'a str>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    for n in 1..=8 {
        if n <= exhaustive_len {
            let lists = all_lists(symbols, n);
            for a in &lists {
                for b in &lists {
                    out.push((a.clone(), b.clone()));
                }
            }
        } else {
            out.extend(sampled_lists(&mut rng, symbols, n, samples));
        }
    }
    out
}

/// Runs every metric against its oracle; returns a description of the first
/// disagreement, or the coverage on success.
pub fn check_all() -> Result<Coverage, String> {
    let mut coverage = Coverage::default();

    // Sequence metrics: all pairs up to length 5, plus every sequence up to
    // length 8 against seeded partners of length up to 8.
    let short = all_sequences(5);
    let long = all_sequences(8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pairs: Vec<(&[&str], &[&str])> = Vec::new();
    for a in &short {
        for b in &short {
            pairs.push((a, b));
        }
    }
    for a in &long {
        for _ in 0..8 {
            let b = &long[rng.random_range(0..long.len())];
            pairs.push((a, b));
            pairs.push((b, a));
        }
    }
    for (a, b) in &pairs {
        let (sa, sb) = (a.join(" "), b.join(" "));
        let want = f_measure(lcs_brute(a, b), a.len(), b.len());
        let got = rouge_l(&sa, &sb);
        if !close(got, want) {
            return Err(format!("rouge_l({sa:?}, {sb:?}) = {got}, oracle {want}"));
        }
        let want = f_measure(bag_overlap(a, b), a.len(), b.len());
        let got = qa_f1(&sa, &sb);
        if !close(got, want) {
            return Err(format!("qa_f1({sa:?}, {sb:?}) = {got}, oracle {want}"));
        }
    }
    coverage.per_metric.push((Metric::RougeL, pairs.len()));
    coverage.per_metric.push((Metric::QaF1, pairs.len()));

    // Label-list metrics over a three-symbol alphabet.
    let cases = list_pairs(&ALPHABET, 4, 20_000);
    for (p, g) in &cases {
        let want = p.iter().zip(g).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
        let got = accuracy(p, g).map_err(|e| e.to_string())?;
        if !close(got, want) {
            return Err(format!("accuracy({p:?}, {g:?}) = {got}, oracle {want}"));
        }
        // Label set {a, b}: "c" predictions fall outside it, and golds must
        // be labels, so only cases with golds in {a, b} apply.
        if g.iter().all(|x| *x != "c") {
            let labels = ["a", "b"];
            let want = macro_f1_matrix(p, g, &labels);
            let got = classification_f1(p, g, &labels).map_err(|e| e.to_string())?;
            if !close(got, want) {
                return Err(format!("classification_f1({p:?}, {g:?}) = {got}, oracle {want}"));
            }
        }
        let got = classification_f1(p, g, &ALPHABET).map_err(|e| e.to_string())?;
        let want = macro_f1_matrix(p, g, &ALPHABET);
        if !close(got, want) {
            return Err(format!("classification_f1({p:?}, {g:?}) = {got}, oracle {want}"));
        }
    }
    coverage.per_metric.push((Metric::Accuracy, cases.len()));
    coverage.per_metric.push((Metric::ClassificationF1, cases.len()));

    let forms: Vec<&str> = EM_FORMS.iter().map(|f| f.0).collect();
    let cases = list_pairs(&forms, 4, 20_000);
    for (p, g) in &cases {
        let canon = |s: &str| EM_FORMS.iter().find(|f| f.0 == s).map(|f| f.1).unwrap();
        let want = p.iter().zip(g).filter(|(a, b)| canon(a) == canon(b)).count() as f64 / p.len() as f64;
        let got = exact_match(p, g).map_err(|e| e.to_string())?;
        if !close(got, want) {
            return Err(format!("exact_match({p:?}, {g:?}) = {got}, oracle {want}"));
        }
    }
    coverage.per_metric.push((Metric::ExactMatch, cases.len()));

    // Binary lists are exhaustive up to length 8.
    let cases = list_pairs(&["a", "b"], 8, 0);
    for (p, g) in &cases {
        let want = mcc_indicator(p, g, "a");
        let got = matthews(p, g, &["a", "b"]).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-12 {
            return Err(format!("matthews({p:?}, {g:?}) = {got}, oracle {want}"));
        }
    }
    coverage.per_metric.push((Metric::Matthews, cases.len()));

    let values = [0.0, 1.0, 2.0];
    let labels: Vec<&str> = vec!["0", "1", "2"];
    let cases = list_pairs(&labels, 5, 20_000);
    let mut checked = 0;
    for (p, g) in &cases {
        if p.len() < 2 {
            continue;
        }
        let x: Vec<f64> = p.iter().map(|s| values[s.parse::<usize>().unwrap()]).collect();
        let y: Vec<f64> = g.iter().map(|s| values[s.parse::<usize>().unwrap()]).collect();
        let want = pearson_pairwise(&x, &y);
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        let via_text = Metric::Pearson.score(p, g, &[]).map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-12 || (via_text - want).abs() > 1e-12 {
            return Err(format!("pearson({x:?}, {y:?}) = {got}, oracle {want}"));
        }
        checked += 1;
    }
    coverage.per_metric.push((Metric::Pearson, checked));
    Ok(coverage)
}

/// The hand-computed examples, each as (description, value, expected).
pub fn derived_examples() -> Vec<(&'static str, f64, f64)> {
    vec![
        ("em 'the Cat.' vs 'cat'", exact_match(&["the Cat."], &["cat"]).unwrap(), 1.0),
        (
            "macro f1 [a,a] vs [a,b]",
            classification_f1(&["a", "a"], &["a", "b"], &["a", "b"]).unwrap(),
            1.0 / 3.0,
        ),
        ("qa f1 'the cat sat' vs 'cat sat'", qa_f1("the cat sat", "cat sat"), 0.8),
        ("rouge-l 'a b c d' vs 'a c d'", rouge_l("a b c d", "a c d"), 6.0 / 7.0),
        (
            "mcc tp=fp=tn=fn=1",
            matthews(&["yes", "no", "yes", "no"], &["yes", "no", "no", "yes"], &["yes", "no"]).unwrap(),
            0.0,
        ),
        (
            "pearson [1,2,3] vs [1,2,4]",
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(),
            0.9820,
        ),
    ]
}
