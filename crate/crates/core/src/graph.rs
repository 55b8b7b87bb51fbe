//! Graphs, bags and datasets, with validation and the line-delimited
//! interchange format.
//!
//! A dataset file is UTF-8 JSON Lines. The first line is a header record,
//! every following non-blank line is one bag:
//!
//! ```text
//! {"format":"mgml-dataset","version":1,"num_classes":3,"vertex_variant":"label"}
//! {"id":"b0","labels":[0,2],"graphs":[{"vertices":[4,1,4],"edges":[[0,1],[1,2]]}],"graph_labels":[2]}
//! ```
//!
//! Attribute graphs carry one real vector per vertex instead of an integer
//! label, and the header records the shared dimension as `attr_dim`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "mgml-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Property attached to a vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum VertexData {
    Label(u32),
    Attributes(Vec<f64>),
}

impl VertexData {
    pub fn variant(&self) -> VertexVariant {
        match self {
            VertexData::Label(_) => VertexVariant::Label,
            VertexData::Attributes(_) => VertexVariant::Attribute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexVariant {
    Label,
    Attribute,
}

impl fmt::Display for VertexVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexVariant::Label => f.write_str("label"),
            VertexVariant::Attribute => f.write_str("attribute"),
        }
    }
}

/// Simple undirected graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Graph {
    pub vertices: Vec<VertexData>,
    pub edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(vertices: Vec<VertexData>, edges: Vec<(usize, usize)>) -> Self {
        Graph { vertices, edges }
    }

    /// Graph whose vertices carry discrete labels.
    pub fn labeled(labels: &[u32], edges: &[(usize, usize)]) -> Self {
        Graph {
            vertices: labels.iter().map(|&l| VertexData::Label(l)).collect(),
            edges: edges.to_vec(),
        }
    }

    /// Graph whose vertices carry attribute vectors.
    pub fn attributed(attrs: Vec<Vec<f64>>, edges: &[(usize, usize)]) -> Self {
        Graph {
            vertices: attrs.into_iter().map(VertexData::Attributes).collect(),
            edges: edges.to_vec(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Variant of the first vertex, `None` for an empty graph.
    pub fn variant(&self) -> Option<VertexVariant> {
        self.vertices.first().map(VertexData::variant)
    }

    /// Neighbor lists; assumes edge endpoints are in range.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Vertex labels, or `None` if any vertex is an attribute vertex.
    pub fn vertex_labels(&self) -> Option<Vec<u32>> {
        self.vertices
            .iter()
            .map(|v| match v {
                VertexData::Label(l) => Some(*l),
                VertexData::Attributes(_) => None,
            })
            .collect()
    }

    /// Attribute vectors, or `None` if any vertex is a label vertex.
    pub fn vertex_attributes(&self) -> Option<Vec<&[f64]>> {
        self.vertices
            .iter()
            .map(|v| match v {
                VertexData::Attributes(a) => Some(a.as_slice()),
                VertexData::Label(_) => None,
            })
            .collect()
    }
}

/// A bag of graphs describing one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub graphs: Vec<Graph>,
    /// Relevant classes; empty for unlabeled test bags.
    pub labels: BTreeSet<usize>,
    /// Planted per-graph class, used only for evaluation. `None` entries mark
    /// graphs without a class.
    pub graph_labels: Option<Vec<Option<usize>>>,
}

impl Bag {
    pub fn new(id: impl Into<String>, graphs: Vec<Graph>, labels: impl IntoIterator<Item = usize>) -> Self {
        Bag {
            id: id.into(),
            graphs,
            labels: labels.into_iter().collect(),
            graph_labels: None,
        }
    }

    pub fn with_graph_labels(mut self, graph_labels: Vec<Option<usize>>) -> Self {
        self.graph_labels = Some(graph_labels);
        self
    }

    /// Relevant classes in ascending order.
    pub fn positives(&self) -> Vec<usize> {
        self.labels.iter().copied().collect()
    }

    /// Irrelevant classes in ascending order.
    pub fn negatives(&self, num_classes: usize) -> Vec<usize> {
        (0..num_classes).filter(|c| !self.labels.contains(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub vertex_variant: VertexVariant,
    /// Attribute dimension; `Some` exactly for the attribute variant.
    pub attr_dim: Option<usize>,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn new(num_classes: usize, vertex_variant: VertexVariant, attr_dim: Option<usize>, bags: Vec<Bag>) -> Self {
        Dataset {
            num_classes,
            vertex_variant,
            attr_dim,
            bags,
        }
    }

    pub fn num_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn num_graphs(&self) -> usize {
        self.bags.iter().map(|b| b.graphs.len()).sum()
    }

    /// All graphs in (bag, graph) order.
    pub fn graphs(&self) -> impl Iterator<Item = &Graph> {
        self.bags.iter().flat_map(|b| b.graphs.iter())
    }
}

/// Which invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    TooFewClasses,
    AttributeDimension,
    DuplicateBagId,
    EmptyBag,
    EmptyGraph,
    EdgeOutOfRange,
    SelfLoop,
    DuplicateEdge,
    VariantMismatch,
    NonFiniteAttribute,
    EmptyLabelSet,
    FullLabelSet,
    LabelOutOfRange,
    GraphLabelCount,
    GraphLabelOutOfRange,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::TooFewClasses => "too few classes",
            Rule::AttributeDimension => "attribute dimension",
            Rule::DuplicateBagId => "duplicate bag id",
            Rule::EmptyBag => "empty bag",
            Rule::EmptyGraph => "empty graph",
            Rule::EdgeOutOfRange => "edge out of range",
            Rule::SelfLoop => "self-loop",
            Rule::DuplicateEdge => "duplicate edge",
            Rule::VariantMismatch => "vertex variant mismatch",
            Rule::NonFiniteAttribute => "non-finite attribute",
            Rule::EmptyLabelSet => "empty label set",
            Rule::FullLabelSet => "full label set",
            Rule::LabelOutOfRange => "label out of range",
            Rule::GraphLabelCount => "graph label count",
            Rule::GraphLabelOutOfRange => "graph label out of range",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending bag id; `None` for dataset-level rules.
    pub bag: Option<String>,
    pub graph: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(bag) = &self.bag {
            write!(f, "bag {bag:?}")?;
            if let Some(g) = self.graph {
                write!(f, ", graph {g}")?;
            }
            f.write_str(": ")?;
        }
        write!(f, "{}", self.rule)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Checks every invariant required of a training set: all structural rules
/// plus non-empty, non-full label sets on every bag.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    validate(ds, true)
}

/// Structural rules only; label sets may be empty or full (test data).
pub fn validate_structure(ds: &Dataset) -> Vec<Violation> {
    validate(ds, false)
}

/// `Ok(())` when [`validate_dataset`] finds nothing.
pub fn ensure_trainable(ds: &Dataset) -> Result<()> {
    let v = validate_dataset(ds);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(v))
    }
}

fn validate(ds: &Dataset, training: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    let global = |rule, detail: String| Violation {
        bag: None,
        graph: None,
        rule,
        detail,
    };
    if ds.num_classes < 2 {
        out.push(global(Rule::TooFewClasses, format!("num_classes = {}", ds.num_classes)));
    }
    match (ds.vertex_variant, ds.attr_dim) {
        (VertexVariant::Label, Some(d)) => {
            out.push(global(Rule::AttributeDimension, format!("label variant declares attr_dim {d}")))
        }
        (VertexVariant::Attribute, None) => {
            out.push(global(Rule::AttributeDimension, "attribute variant without attr_dim".into()))
        }
        (VertexVariant::Attribute, Some(0)) => {
            out.push(global(Rule::AttributeDimension, "attr_dim must be at least 1".into()))
        }
        _ => {}
    }

    let mut seen_ids = HashSet::new();
    for bag in &ds.bags {
        let mut push = |graph: Option<usize>, rule, detail: String| {
            out.push(Violation {
                bag: Some(bag.id.clone()),
                graph,
                rule,
                detail,
            })
        };
        if !seen_ids.insert(bag.id.as_str()) {
            push(None, Rule::DuplicateBagId, String::new());
        }
        if bag.graphs.is_empty() {
            push(None, Rule::EmptyBag, String::new());
        }
        for (gi, g) in bag.graphs.iter().enumerate() {
            check_graph(g, ds.vertex_variant, ds.attr_dim, |rule, detail| push(Some(gi), rule, detail));
        }
        for &l in &bag.labels {
            if l >= ds.num_classes {
                push(None, Rule::LabelOutOfRange, format!("label {l} with {} classes", ds.num_classes));
            }
        }
        if training {
            if bag.labels.is_empty() {
                push(None, Rule::EmptyLabelSet, String::new());
            } else if ds.num_classes >= 2 && (0..ds.num_classes).all(|c| bag.labels.contains(&c)) {
                push(None, Rule::FullLabelSet, "every class is relevant, so no irrelevant class remains".into());
            }
        }
        if let Some(gl) = &bag.graph_labels {
            if gl.len() != bag.graphs.len() {
                push(None, Rule::GraphLabelCount, format!("{} entries for {} graphs", gl.len(), bag.graphs.len()));
            }
            for (gi, l) in gl.iter().enumerate() {
                if let Some(l) = *l {
                    if l >= ds.num_classes {
                        push(Some(gi), Rule::GraphLabelOutOfRange, format!("label {l}"));
                    }
                }
            }
        }
    }
    out
}

fn check_graph(
    g: &Graph,
    variant: VertexVariant,
    attr_dim: Option<usize>,
    mut push: impl FnMut(Rule, String),
) {
    if g.vertices.is_empty() {
        push(Rule::EmptyGraph, String::new());
    }
    for (vi, v) in g.vertices.iter().enumerate() {
        if v.variant() != variant {
            push(Rule::VariantMismatch, format!("vertex {vi} is {}", v.variant()));
            continue;
        }
        if let VertexData::Attributes(a) = v {
            if Some(a.len()) != attr_dim {
                push(Rule::AttributeDimension, format!("vertex {vi} has dimension {}", a.len()));
            }
            if a.iter().any(|x| !x.is_finite()) {
                push(Rule::NonFiniteAttribute, format!("vertex {vi}"));
            }
        }
    }
    let n = g.vertices.len();
    let mut seen = HashSet::new();
    for &(u, v) in &g.edges {
        if u >= n || v >= n {
            push(Rule::EdgeOutOfRange, format!("({u},{v}) with {n} vertices"));
            continue;
        }
        if u == v {
            push(Rule::SelfLoop, format!("({u},{v})"));
            continue;
        }
        if !seen.insert((u.min(v), u.max(v))) {
            push(Rule::DuplicateEdge, format!("({u},{v})"));
        }
    }
}

// ---------------------------------------------------------------------------
// Interchange format

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    num_classes: usize,
    vertex_variant: VertexVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attr_dim: Option<usize>,
}

#[derive(Serialize)]
struct BagOut<'a> {
    id: &'a str,
    labels: &'a BTreeSet<usize>,
    graphs: &'a [Graph],
    #[serde(skip_serializing_if = "Option::is_none")]
    graph_labels: &'a Option<Vec<Option<usize>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BagIn {
    id: String,
    labels: Vec<usize>,
    graphs: Vec<RawGraph>,
    #[serde(default)]
    graph_labels: Option<Vec<Option<usize>>>,
}

/// Graph record before its vertices are decoded against a known variant.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawGraph {
    vertices: Vec<Value>,
    edges: Vec<(usize, usize)>,
}

impl RawGraph {
    pub(crate) fn decode(
        self,
        variant: VertexVariant,
        attr_dim: Option<usize>,
        line: usize,
        field: &str,
    ) -> Result<Graph> {
        let mut vertices = Vec::with_capacity(self.vertices.len());
        for (vi, raw) in self.vertices.into_iter().enumerate() {
            let field = || format!("{field}.vertices[{vi}]");
            let v = match variant {
                VertexVariant::Label => match raw.as_u64() {
                    Some(l) if l <= u32::MAX as u64 => VertexData::Label(l as u32),
                    _ if raw.is_array() => {
                        return Err(Error::parse(line, field(), "attribute vertex in a label-variant dataset"))
                    }
                    _ => return Err(Error::parse(line, field(), format!("expected a non-negative integer label, got {raw}"))),
                },
                VertexVariant::Attribute => {
                    let Value::Array(items) = raw else {
                        if raw.is_u64() {
                            return Err(Error::parse(line, field(), "label vertex in an attribute-variant dataset"));
                        }
                        return Err(Error::parse(line, field(), format!("expected an attribute vector, got {raw}")));
                    };
                    let attrs = items
                        .iter()
                        .map(Value::as_f64)
                        .collect::<Option<Vec<f64>>>()
                        .ok_or_else(|| Error::parse(line, field(), "attribute components must be numbers"))?;
                    if Some(attrs.len()) != attr_dim {
                        return Err(Error::parse(
                            line,
                            field(),
                            format!("attribute dimension {} does not match header attr_dim {:?}", attrs.len(), attr_dim),
                        ));
                    }
                    VertexData::Attributes(attrs)
                }
            };
            vertices.push(v);
        }
        Ok(Graph {
            vertices,
            edges: self.edges,
        })
    }
}

/// Serializes a dataset to the line-delimited format.
pub fn write_dataset_to<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        num_classes: ds.num_classes,
        vertex_variant: ds.vertex_variant,
        attr_dim: ds.attr_dim,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for bag in &ds.bags {
        let rec = BagOut {
            id: &bag.id,
            labels: &bag.labels,
            graphs: &bag.graphs,
            graph_labels: &bag.graph_labels,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Parses the line-delimited format. Line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, htext) = lines.next().ok_or_else(|| Error::Format("no header record".into()))?;
    let header: Header = serde_json::from_str(htext).map_err(|e| Error::parse(hline, "header", e))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::parse(hline, "format", format!("expected {DATASET_FORMAT:?}, got {:?}", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::parse(hline, "version", format!("unsupported version {}", header.version)));
    }
    if header.num_classes < 2 {
        return Err(Error::parse(hline, "num_classes", "at least two classes are required"));
    }
    match (header.vertex_variant, header.attr_dim) {
        (VertexVariant::Attribute, None | Some(0)) => {
            return Err(Error::parse(hline, "attr_dim", "attribute variant requires attr_dim >= 1"))
        }
        (VertexVariant::Label, Some(_)) => {
            return Err(Error::parse(hline, "attr_dim", "label variant must not declare attr_dim"))
        }
        _ => {}
    }

    let c = header.num_classes;
    let mut bags = Vec::new();
    for (line, text) in lines {
        let rec: BagIn = serde_json::from_str(text).map_err(|e| Error::parse(line, "bag", e))?;
        let mut labels = BTreeSet::new();
        for &l in &rec.labels {
            if l >= c {
                return Err(Error::parse(line, "labels", format!("class index {l} out of range for {c} classes")));
            }
            if !labels.insert(l) {
                return Err(Error::parse(line, "labels", format!("duplicate class index {l}")));
            }
        }
        if let Some(gl) = &rec.graph_labels {
            if let Some(l) = gl.iter().flatten().find(|&&l| l >= c) {
                return Err(Error::parse(line, "graph_labels", format!("class index {l} out of range for {c} classes")));
            }
        }
        let graphs = rec
            .graphs
            .into_iter()
            .enumerate()
            .map(|(gi, g)| g.decode(header.vertex_variant, header.attr_dim, line, &format!("graphs[{gi}]")))
            .collect::<Result<Vec<_>>>()?;
        bags.push(Bag {
            id: rec.id,
            graphs,
            labels,
            graph_labels: rec.graph_labels,
        });
    }
    Ok(Dataset {
        num_classes: c,
        vertex_variant: header.vertex_variant,
        attr_dim: header.attr_dim,
        bags,
    })
}
