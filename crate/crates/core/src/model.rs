//! Dual-form classifier.
//!
//! The class-`c` weight vector is never materialized. It is the kernel
//! expansion `w_c = sum_i scale[i] * coeff[c][i] * phi(repr graph of bag i for c)`,
//! so scoring a graph only needs its kernel values against the representative
//! graphs, which the model embeds.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, RawGraph, VertexVariant};
use crate::kernels::{cross_kernel, KernelConfig};

pub const MODEL_FORMAT: &str = "mgml-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    pub num_classes: usize,
    pub lambda: f64,
    pub kernel: KernelConfig,
    pub vertex_variant: VertexVariant,
    pub attr_dim: Option<usize>,
    /// Iteration count the scale was computed with.
    pub t_final: u64,
    /// `C x n` aggregate counter coefficients.
    pub coeff: Vec<Vec<f64>>,
    /// Per-bag `1 / z_i`.
    pub scale: Vec<f64>,
    /// `n x C` index of the representative graph within its training bag.
    pub repr: Vec<Vec<usize>>,
    /// `n x C` position of that graph in `repr_graphs`.
    pub repr_slot: Vec<Vec<usize>>,
    /// Distinct representative graphs.
    pub repr_graphs: Vec<Graph>,
}

/// Maximum score and the lowest index attaining it. `scores` must be non-empty.
pub fn argmax_first(scores: &[f64]) -> (f64, usize) {
    let mut best = (scores[0], 0);
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > best.0 {
            best = (s, j);
        }
    }
    best
}

/// `sum_c sum_h sum_i beta[c][h] beta[c][i] K_c(h, i)` where `kernel(c, h, i)`
/// is the kernel between the class-`c` representatives of bags `h` and `i`.
pub fn weight_norm_sq(beta: &[Vec<f64>], kernel: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for (c, b) in beta.iter().enumerate() {
        for (h, &bh) in b.iter().enumerate() {
            if bh == 0.0 {
                continue;
            }
            let inner: f64 = b.iter().enumerate().map(|(i, &bi)| bi * kernel(c, h, i)).sum();
            total += bh * inner;
        }
    }
    total
}

impl DualModel {
    pub fn num_bags(&self) -> usize {
        self.scale.len()
    }

    /// Effective expansion coefficients `scale[i] * coeff[c][i]`.
    pub fn beta(&self) -> Vec<Vec<f64>> {
        self.coeff
            .iter()
            .map(|row| row.iter().zip(&self.scale).map(|(s, z)| z * s).collect())
            .collect()
    }

    /// `f_c(g)` from `gram_row[i] = K(repr graph of bag i for c, g)`.
    pub fn score_graph(&self, c: usize, gram_row: &[f64]) -> Result<f64> {
        if gram_row.len() != self.num_bags() {
            return Err(Error::Shape {
                expected: self.num_bags(),
                actual: gram_row.len(),
            });
        }
        Ok(self.coeff[c]
            .iter()
            .zip(&self.scale)
            .zip(gram_row)
            .map(|((s, z), k)| z * s * k)
            .sum())
    }

    /// `F_c(B)` and the graph attaining it, from one class-`c` gram row per graph.
    pub fn score_bag(&self, c: usize, rows: &[Vec<f64>]) -> Result<(f64, usize)> {
        if rows.is_empty() {
            return Err(Error::Shape { expected: 1, actual: 0 });
        }
        let scores = rows.iter().map(|r| self.score_graph(c, r)).collect::<Result<Vec<_>>>()?;
        Ok(argmax_first(&scores))
    }

    /// Expands kernel values against `repr_graphs` into the class-`c` row.
    pub fn class_row(&self, c: usize, slot_values: &[f64]) -> Vec<f64> {
        self.repr_slot.iter().map(|slots| slot_values[slots[c]]).collect()
    }

    /// Kernel values of each graph against every representative graph.
    pub fn repr_kernel(&self, graphs: &[&Graph]) -> Result<Vec<Vec<f64>>> {
        if let Some(bad) = graphs.iter().position(|g| g.variant() != Some(self.vertex_variant)) {
            return Err(Error::VariantMismatch(format!(
                "graph {bad} does not match the model's {} vertices",
                self.vertex_variant
            )));
        }
        let reprs: Vec<&Graph> = self.repr_graphs.iter().collect();
        cross_kernel(&self.kernel, graphs, &reprs)
    }

    /// Scores of one graph for every class, from its representative kernel values.
    pub fn scores_from_slots(&self, slot_values: &[f64]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = self.class_row(c, slot_values);
                self.coeff[c]
                    .iter()
                    .zip(&self.scale)
                    .zip(&row)
                    .map(|((s, z), k)| z * s * k)
                    .sum()
            })
            .collect()
    }

    /// Per-class scores for each graph.
    pub fn graph_scores(&self, graphs: &[&Graph]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .repr_kernel(graphs)?
            .iter()
            .map(|slots| self.scores_from_slots(slots))
            .collect())
    }

    /// Squared Frobenius norm of the induced weights, `sum_c |w_c|^2`.
    pub fn norm_sq(&self) -> Result<f64> {
        let reprs: Vec<&Graph> = self.repr_graphs.iter().collect();
        let k = cross_kernel(&self.kernel, &reprs, &reprs)?;
        let slot = &self.repr_slot;
        Ok(weight_norm_sq(&self.beta(), |c, h, i| k[slot[h][c]][slot[i][c]]))
    }

    fn check(&self) -> std::result::Result<(), String> {
        let n = self.num_bags();
        if self.num_classes < 2 {
            return Err("num_classes must be at least 2".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.coeff.len() != self.num_classes || self.coeff.iter().any(|r| r.len() != n) {
            return Err("coefficient matrix shape does not match C x n".into());
        }
        if self.coeff.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        if self.scale.iter().any(|&z| !(z > 0.0 && z.is_finite())) {
            return Err("scale entries must be positive and finite".into());
        }
        if self.repr.len() != n || self.repr_slot.len() != n {
            return Err("representative tables must have one row per bag".into());
        }
        for (r, s) in self.repr.iter().zip(&self.repr_slot) {
            if r.len() != self.num_classes || s.len() != self.num_classes {
                return Err("representative rows must have one entry per class".into());
            }
            if s.iter().any(|&k| k >= self.repr_graphs.len()) {
                return Err("representative slot out of range".into());
            }
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Persistence

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            num_classes: self.num_classes,
            lambda: self.lambda,
            kernel: self.kernel.clone(),
            vertex_variant: self.vertex_variant,
            attr_dim: self.attr_dim,
            n: self.num_bags(),
            t_final: self.t_final,
            num_repr_graphs: self.repr_graphs.len(),
        };
        let mut line = |v: &dyn erased::Ser| -> std::io::Result<()> {
            v.write(&mut w)?;
            w.write_all(b"\n")
        };
        line(&header)?;
        for (class, values) in self.coeff.iter().enumerate() {
            line(&CoeffRecord { class, coeff: values.clone() })?;
        }
        line(&ScaleRecord { scale: self.scale.clone() })?;
        for (bag, (repr, slot)) in self.repr.iter().zip(&self.repr_slot).enumerate() {
            line(&ReprRecord {
                bag,
                repr: repr.clone(),
                slot: slot.clone(),
            })?;
        }
        for g in &self.repr_graphs {
            line(g)?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = RecordReader::new(text);
        let header: ModelHeader = reader.next("header")?;
        if header.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a model file (format {:?})", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                header.version
            )));
        }
        let mut coeff = Vec::with_capacity(header.num_classes);
        for c in 0..header.num_classes {
            let rec: CoeffRecord = reader.next("coefficients")?;
            if rec.class != c {
                return Err(reader.corrupt(format!("expected coefficients for class {c}, got {}", rec.class)));
            }
            coeff.push(rec.coeff);
        }
        let ScaleRecord { scale } = reader.next("scale")?;
        let mut repr = Vec::with_capacity(header.n);
        let mut repr_slot = Vec::with_capacity(header.n);
        for i in 0..header.n {
            let rec: ReprRecord = reader.next("representatives")?;
            if rec.bag != i {
                return Err(reader.corrupt(format!("expected representatives for bag {i}, got {}", rec.bag)));
            }
            repr.push(rec.repr);
            repr_slot.push(rec.slot);
        }
        let mut repr_graphs = Vec::with_capacity(header.num_repr_graphs);
        for k in 0..header.num_repr_graphs {
            let raw: RawGraph = reader.next("representative graph")?;
            let line = reader.line;
            let g = raw
                .decode(header.vertex_variant, header.attr_dim, line, &format!("repr_graphs[{k}]"))
                .map_err(|e| reader.corrupt(e.to_string()))?;
            repr_graphs.push(g);
        }
        if let Some(offset) = reader.trailing() {
            return Err(Error::Format(format!("unexpected trailing data at byte offset {offset}")));
        }
        let model = DualModel {
            num_classes: header.num_classes,
            lambda: header.lambda,
            kernel: header.kernel,
            vertex_variant: header.vertex_variant,
            attr_dim: header.attr_dim,
            t_final: header.t_final,
            coeff,
            scale,
            repr,
            repr_slot,
            repr_graphs,
        };
        model
            .check()
            .map_err(|m| Error::Format(format!("inconsistent model: {m}")))?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format: String,
    version: u32,
    num_classes: usize,
    lambda: f64,
    kernel: KernelConfig,
    vertex_variant: VertexVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attr_dim: Option<usize>,
    n: usize,
    t_final: u64,
    num_repr_graphs: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoeffRecord {
    class: usize,
    coeff: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleRecord {
    scale: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReprRecord {
    bag: usize,
    repr: Vec<usize>,
    slot: Vec<usize>,
}

mod erased {
    use std::io::Write;

    /// Object-safe JSON serialization for heterogeneous record lines.
    pub trait Ser {
        fn write(&self, w: &mut dyn Write) -> std::io::Result<()>;
    }

    impl<T: serde::Serialize> Ser for T {
        fn write(&self, w: &mut dyn Write) -> std::io::Result<()> {
            serde_json::to_writer(w, self).map_err(std::io::Error::from)
        }
    }
}

/// Line reader that tracks byte offsets for error reporting.
struct RecordReader<'a> {
    text: &'a str,
    pos: usize,
    /// Byte offset and 1-based number of the most recent line.
    start: usize,
    line: usize,
}

impl<'a> RecordReader<'a> {
    fn new(text: &'a str) -> Self {
        RecordReader {
            text,
            pos: 0,
            start: 0,
            line: 0,
        }
    }

    fn next_line(&mut self) -> Option<&'a str> {
        while self.pos < self.text.len() {
            let rest = &self.text[self.pos..];
            let (line, advance) = match rest.find('\n') {
                Some(i) => (&rest[..i], i + 1),
                None => (rest, rest.len()),
            };
            self.start = self.pos;
            self.pos += advance;
            self.line += 1;
            if !line.trim().is_empty() {
                return Some(line);
            }
        }
        None
    }

    fn next<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let line = self.next_line().ok_or_else(|| {
            Error::Format(format!(
                "truncated model file: missing {what} record at byte offset {}",
                self.text.len()
            ))
        })?;
        serde_json::from_str(line).map_err(|e| self.corrupt(format!("{what}: {e}")))
    }

    fn corrupt(&self, message: String) -> Error {
        Error::Format(format!(
            "corrupt model record at byte offset {} (line {}): {message}",
            self.start, self.line
        ))
    }

    fn trailing(&mut self) -> Option<usize> {
        self.next_line().map(|_| self.start)
    }
}
