//! Graph-level accuracy and bag-level multi-label measures.
//!
//! Rankings order classes by descending score with ties broken by ascending
//! class index, so every measure is deterministic.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::predictor::BagPrediction;

/// Per-bag contributions, before averaging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BagComponents {
    pub one_error: f64,
    pub hamming_loss: f64,
    pub coverage: f64,
    pub ranking_loss: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    /// `None` when the truth carries no graph labels.
    pub graph_accuracy: Option<f64>,
    pub one_error: f64,
    pub hamming_loss: f64,
    pub coverage: f64,
    pub ranking_loss: f64,
    pub average_precision: f64,
    pub macro_f1: f64,
    pub coverage_normalized: bool,
    pub per_bag: Vec<BagComponents>,
}

/// 1-based rank of each class in descending score order.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; scores.len()];
    for (pos, &c) in order.iter().enumerate() {
        rank[c] = pos + 1;
    }
    rank
}

/// Fraction of graphs with a ground-truth class whose prediction matches it.
pub fn graph_accuracy(preds: &[usize], truth: &[Option<usize>]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            actual: preds.len(),
        });
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, t) in preds.iter().zip(truth) {
        if let Some(t) = t {
            total += 1;
            hit += usize::from(p == t);
        }
    }
    if total == 0 {
        return Err(Error::Metric("graph labels absent".into()));
    }
    Ok(hit as f64 / total as f64)
}

fn bag_components(scores: &[f64], pred: &BTreeSet<usize>, truth: &BTreeSet<usize>, c: usize, normalize: bool) -> BagComponents {
    let rank = ranks(scores);
    let pos: Vec<usize> = truth.iter().copied().collect();
    let neg: Vec<usize> = (0..c).filter(|k| !truth.contains(k)).collect();

    let top = rank.iter().position(|&r| r == 1).unwrap_or(0);
    let one_error = if truth.contains(&top) { 0.0 } else { 1.0 };

    let hamming_loss = pred.symmetric_difference(truth).count() as f64 / c as f64;

    let worst = pos.iter().map(|&p| rank[p]).max().unwrap_or(1);
    let coverage = if normalize {
        (worst - 1) as f64 / c as f64
    } else {
        (worst - 1) as f64
    };

    let swapped = pos
        .iter()
        .flat_map(|&p| neg.iter().map(move |&q| (p, q)))
        .filter(|&(p, q)| scores[p] <= scores[q])
        .count();
    let ranking_loss = swapped as f64 / (pos.len() * neg.len()) as f64;

    let average_precision = pos
        .iter()
        .map(|&p| {
            let above = pos.iter().filter(|&&o| rank[o] <= rank[p]).count();
            above as f64 / rank[p] as f64
        })
        .sum::<f64>()
        / pos.len() as f64;

    BagComponents {
        one_error,
        hamming_loss,
        coverage,
        ranking_loss,
        average_precision,
    }
}

/// Macro-averaged F1 over classes. A class never predicted and never true scores 1.
pub fn macro_f1(preds: &[BTreeSet<usize>], truth: &[BTreeSet<usize>], c: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..c {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (p, t) in preds.iter().zip(truth) {
            match (p.contains(&k), t.contains(&k)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fneg;
        total += if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
    }
    total / c as f64
}

/// The six bag-level measures. `graph_accuracy` is left unset.
pub fn bag_metrics(
    scores: &[Vec<f64>],
    preds: &[BTreeSet<usize>],
    truth: &[BTreeSet<usize>],
    num_classes: usize,
    normalize_coverage: bool,
) -> Result<MetricReport> {
    let n = truth.len();
    if n == 0 {
        return Err(Error::Metric("no bags to evaluate".into()));
    }
    if scores.len() != n {
        return Err(Error::Shape { expected: n, actual: scores.len() });
    }
    if preds.len() != n {
        return Err(Error::Shape { expected: n, actual: preds.len() });
    }
    for (i, (s, t)) in scores.iter().zip(truth).enumerate() {
        if s.len() != num_classes {
            return Err(Error::Shape {
                expected: num_classes,
                actual: s.len(),
            });
        }
        if t.is_empty() {
            return Err(Error::Metric(format!("bag {i} has an empty truth set")));
        }
        if t.len() >= num_classes || t.iter().any(|&k| k >= num_classes) {
            return Err(Error::Metric(format!("bag {i} truth set is not a proper subset of the classes")));
        }
    }
    let per_bag: Vec<BagComponents> = scores
        .iter()
        .zip(preds)
        .zip(truth)
        .map(|((s, p), t)| bag_components(s, p, t, num_classes, normalize_coverage))
        .collect();
    let mean = |f: fn(&BagComponents) -> f64| per_bag.iter().map(f).sum::<f64>() / n as f64;
    Ok(MetricReport {
        graph_accuracy: None,
        one_error: mean(|b| b.one_error),
        hamming_loss: mean(|b| b.hamming_loss),
        coverage: mean(|b| b.coverage),
        ranking_loss: mean(|b| b.ranking_loss),
        average_precision: mean(|b| b.average_precision),
        macro_f1: macro_f1(preds, truth, num_classes),
        coverage_normalized: normalize_coverage,
        per_bag,
    })
}

/// Scores predictions against a labeled dataset, matching bags by id.
/// Graph accuracy uses argmax graph predictions and is computed when the
/// truth carries graph labels.
pub fn evaluate(preds: &[BagPrediction], truth: &Dataset, normalize_coverage: bool) -> Result<MetricReport> {
    let by_id: HashMap<&str, &BagPrediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut scores = Vec::new();
    let mut sets = Vec::new();
    let mut truth_sets = Vec::new();
    let mut graph_preds = Vec::new();
    let mut graph_truth = Vec::new();
    for bag in &truth.bags {
        let p = by_id
            .get(bag.id.as_str())
            .ok_or_else(|| Error::Metric(format!("no prediction for bag {:?}", bag.id)))?;
        if p.graphs.len() != bag.graphs.len() {
            return Err(Error::Metric(format!(
                "bag {:?}: {} graph predictions for {} graphs",
                bag.id,
                p.graphs.len(),
                bag.graphs.len()
            )));
        }
        scores.push(p.scores.clone());
        sets.push(p.labels.clone());
        truth_sets.push(bag.labels.clone());
        if let Some(gl) = &bag.graph_labels {
            graph_preds.extend(p.graphs.iter().map(|g| g.class));
            graph_truth.extend(gl.iter().copied());
        }
    }
    let mut report = bag_metrics(&scores, &sets, &truth_sets, truth.num_classes, normalize_coverage)?;
    if graph_truth.iter().any(Option::is_some) {
        report.graph_accuracy = Some(graph_accuracy(&graph_preds, &graph_truth)?);
    }
    Ok(report)
}

impl MetricReport {
    fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("graph_accuracy", self.graph_accuracy),
            ("one_error", Some(self.one_error)),
            ("hamming_loss", Some(self.hamming_loss)),
            ("coverage", Some(self.coverage)),
            ("ranking_loss", Some(self.ranking_loss)),
            ("average_precision", Some(self.average_precision)),
            ("macro_f1", Some(self.macro_f1)),
        ]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "metric,value")?;
        for (name, v) in self.rows() {
            match v {
                Some(v) => writeln!(w, "{name},{v:?}")?,
                None => writeln!(w, "{name},")?,
            }
        }
        w.flush()
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.rows() {
            match v {
                Some(v) => writeln!(f, "{name:<18} {v:>8.4}")?,
                None => writeln!(f, "{name:<18} {:>8}", "n/a")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(graph_accuracy(&[0, 1], &[Some(0), Some(1)]).unwrap(), 1.0);
        assert_eq!(graph_accuracy(&[1, 0], &[Some(0), Some(1)]).unwrap(), 0.0);
        let acc = graph_accuracy(&[0, 1, 2, 0, 1], &[Some(0), Some(1), Some(0), Some(1), Some(0)]).unwrap();
        assert_eq!(acc, 0.4);
        // unlabeled graphs are skipped
        assert_eq!(graph_accuracy(&[0, 1], &[Some(0), None]).unwrap(), 1.0);
        let err = graph_accuracy(&[0], &[None]).unwrap_err();
        assert!(err.to_string().contains("graph labels absent"));
    }

    #[test]
    fn hand_enumerated_bag() {
        let r = bag_metrics(&[vec![0.1, 0.9, 0.5]], &[set(&[1])], &[set(&[0])], 3, true).unwrap();
        assert_eq!(r.one_error, 1.0);
        assert_eq!(r.coverage, 2.0 / 3.0);
        assert_eq!(r.ranking_loss, 1.0);
        assert_eq!(r.average_precision, 1.0 / 3.0);
        let u = bag_metrics(&[vec![0.1, 0.9, 0.5]], &[set(&[1])], &[set(&[0])], 3, false).unwrap();
        assert_eq!(u.coverage, 2.0);
    }

    #[test]
    fn perfect_model() {
        let scores = vec![vec![2.0, -1.0, 0.5], vec![-3.0, 1.0, -0.5]];
        let truth = vec![set(&[0, 2]), set(&[1])];
        let r = bag_metrics(&scores, &truth, &truth, 3, true).unwrap();
        assert_eq!(r.one_error, 0.0);
        assert_eq!(r.ranking_loss, 0.0);
        assert_eq!(r.hamming_loss, 0.0);
        assert_eq!(r.average_precision, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn reversed_model_has_full_ranking_loss() {
        let r = bag_metrics(&[vec![-2.0, 1.0, 0.5]], &[set(&[])], &[set(&[0])], 3, true).unwrap();
        assert_eq!(r.ranking_loss, 1.0);
    }

    #[test]
    fn ties_break_by_class_index() {
        assert_eq!(ranks(&[0.0, 0.0, 1.0]), vec![2, 3, 1]);
    }

    #[test]
    fn macro_f1_zero_division() {
        // class 2 never predicted or true -> 1; class 1 true but never predicted -> 0
        let f = macro_f1(&[set(&[0])], &[set(&[0, 1])], 3);
        assert_eq!(f, (1.0 + 0.0 + 1.0) / 3.0);
    }

    #[test]
    fn empty_or_full_truth_is_an_error() {
        assert!(bag_metrics(&[vec![0.0, 1.0]], &[set(&[])], &[set(&[])], 2, true).is_err());
        assert!(bag_metrics(&[vec![0.0, 1.0]], &[set(&[])], &[set(&[0, 1])], 2, true).is_err());
    }

    #[test]
    fn display_is_aligned() {
        let r = bag_metrics(&[vec![0.1, 0.9, 0.5]], &[set(&[1])], &[set(&[0])], 3, true).unwrap();
        let s = r.to_string();
        assert!(s.lines().all(|l| l.len() == 27), "{s}");
    }
}
