//! Graph- and bag-level label prediction.
//!
//! A class is predicted for a graph when its score clears the implicit zero
//! label, `f_c(g) > 0`. A bag's labels are the union of its graphs' labels,
//! which coincides with thresholding the bag score `F_c(B) = max_g f_c(g)`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Bag, Dataset, Graph};
use crate::model::{argmax_first, DualModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Single best class (lowest index on ties).
    #[default]
    Argmax,
    /// Every class with a positive score; may be empty.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagMode {
    /// Union of the graphs' threshold sets.
    #[default]
    Union,
    /// Classes whose bag score is positive.
    ThresholdBag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphPrediction {
    Class(usize),
    Labels(BTreeSet<usize>),
}

pub fn argmax_class(scores: &[f64]) -> usize {
    argmax_first(scores).1
}

pub fn threshold_set(scores: &[f64]) -> BTreeSet<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(c, _)| c)
        .collect()
}

/// Per-graph outcome with both decision rules applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphOutcome {
    pub scores: Vec<f64>,
    pub class: usize,
    pub labels: BTreeSet<usize>,
}

impl GraphOutcome {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        GraphOutcome {
            class: argmax_class(&scores),
            labels: threshold_set(&scores),
            scores,
        }
    }

    pub fn prediction(&self, mode: GraphMode) -> GraphPrediction {
        match mode {
            GraphMode::Argmax => GraphPrediction::Class(self.class),
            GraphMode::Threshold => GraphPrediction::Labels(self.labels.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub id: String,
    pub labels: BTreeSet<usize>,
    /// `F_c(B)` per class.
    pub scores: Vec<f64>,
    /// Set when no class cleared the threshold.
    pub empty: bool,
    pub graphs: Vec<GraphOutcome>,
}

pub fn predict_graph(m: &DualModel, g: &Graph, mode: GraphMode) -> Result<GraphPrediction> {
    let scores = m.graph_scores(&[g])?.remove(0);
    Ok(GraphOutcome::from_scores(scores).prediction(mode))
}

/// Combines per-graph outcomes into a bag prediction.
pub fn combine(id: &str, graphs: Vec<GraphOutcome>, num_classes: usize, mode: BagMode) -> BagPrediction {
    let scores: Vec<f64> = (0..num_classes)
        .map(|c| {
            let col: Vec<f64> = graphs.iter().map(|g| g.scores[c]).collect();
            argmax_first(&col).0
        })
        .collect();
    let labels = match mode {
        BagMode::Union => graphs.iter().flat_map(|g| g.labels.iter().copied()).collect(),
        BagMode::ThresholdBag => threshold_set(&scores),
    };
    BagPrediction {
        id: id.to_string(),
        empty: labels.is_empty(),
        labels,
        scores,
        graphs,
    }
}

pub fn predict_bag(m: &DualModel, b: &Bag, mode: BagMode) -> Result<BagPrediction> {
    let graphs: Vec<&Graph> = b.graphs.iter().collect();
    let outcomes = m
        .graph_scores(&graphs)?
        .into_iter()
        .map(GraphOutcome::from_scores)
        .collect();
    Ok(combine(&b.id, outcomes, m.num_classes, mode))
}

/// Predictions for every bag, in dataset order.
pub fn predict_dataset(m: &DualModel, ds: &Dataset, mode: BagMode) -> Result<Vec<BagPrediction>> {
    ds.bags.par_iter().map(|b| predict_bag(m, b, mode)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeSet<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BagRecord {
    id: String,
    labels: BTreeSet<usize>,
    scores: Vec<f64>,
    empty: bool,
    graphs: Vec<GraphRecord>,
}

/// Writes one JSON record per bag. Graph records carry their scores plus
/// the decision of `mode`.
pub fn write_predictions<W: Write>(preds: &[BagPrediction], mode: GraphMode, mut w: W) -> std::io::Result<()> {
    for p in preds {
        let rec = BagRecord {
            id: p.id.clone(),
            labels: p.labels.clone(),
            scores: p.scores.clone(),
            empty: p.empty,
            graphs: p
                .graphs
                .iter()
                .map(|g| GraphRecord {
                    scores: g.scores.clone(),
                    class: (mode == GraphMode::Argmax).then_some(g.class),
                    labels: (mode == GraphMode::Threshold).then(|| g.labels.clone()),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_predictions(preds: &[BagPrediction], mode: GraphMode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(preds, mode, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Reads records written by [`write_predictions`]; decisions missing from a
/// graph record are recomputed from its scores.
pub fn parse_predictions(text: &str) -> Result<Vec<BagPrediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: BagRecord = serde_json::from_str(line).map_err(|e| Error::parse(i + 1, "prediction", e))?;
        let graphs = rec
            .graphs
            .into_iter()
            .map(|g| {
                let mut o = GraphOutcome::from_scores(g.scores);
                if let Some(c) = g.class {
                    o.class = c;
                }
                if let Some(l) = g.labels {
                    o.labels = l;
                }
                o
            })
            .collect();
        out.push(BagPrediction {
            id: rec.id,
            labels: rec.labels,
            scores: rec.scores,
            empty: rec.empty,
            graphs,
        });
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<BagPrediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

/// Baseline that predicts the most frequent training class everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DummyClassifier {
    /// Fraction of training bags carrying each class.
    pub frequency: Vec<f64>,
    pub top: usize,
}

impl DummyClassifier {
    pub fn fit(ds: &Dataset) -> Self {
        let mut counts = vec![0.0; ds.num_classes];
        for b in &ds.bags {
            for &l in &b.labels {
                counts[l] += 1.0;
            }
        }
        let n = ds.num_bags().max(1) as f64;
        let frequency: Vec<f64> = counts.iter().map(|c| c / n).collect();
        DummyClassifier {
            top: argmax_class(&frequency),
            frequency,
        }
    }

    pub fn predict_bag(&self, b: &Bag) -> BagPrediction {
        let graphs = b
            .graphs
            .iter()
            .map(|_| {
                let mut scores = vec![0.0; self.frequency.len()];
                scores[self.top] = 1.0;
                GraphOutcome::from_scores(scores)
            })
            .collect();
        BagPrediction {
            id: b.id.clone(),
            labels: [self.top].into_iter().collect(),
            scores: self.frequency.clone(),
            empty: false,
            graphs,
        }
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Vec<BagPrediction> {
        ds.bags.iter().map(|b| self.predict_bag(b)).collect()
    }
}
