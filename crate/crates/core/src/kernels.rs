//! Graph kernels and the dataset Gram matrix.
//!
//! Two kernels are provided: the Weisfeiler-Lehman subtree kernel for
//! label graphs, and a vertex-histogram kernel that has an explicit finite
//! feature map on label graphs (label counts) and is a summed RBF over vertex
//! pairs on attribute graphs. Other kernels plug in through [`GraphKernel`].

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, VertexVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    WlSubtree {
        wl_iterations: usize,
    },
    VertexHistogram {
        /// RBF bandwidth, required on attribute graphs and absent otherwise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attribute_bandwidth: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub kind: KernelKind,
    /// Cosine normalization `k(a,b) / sqrt(k(a,a) k(b,b))`.
    #[serde(default)]
    pub normalize: bool,
}

impl KernelConfig {
    pub fn wl_subtree(iterations: usize) -> Self {
        KernelConfig {
            kind: KernelKind::WlSubtree {
                wl_iterations: iterations,
            },
            normalize: false,
        }
    }

    /// Vertex-histogram kernel for label graphs.
    pub fn vertex_histogram() -> Self {
        KernelConfig {
            kind: KernelKind::VertexHistogram {
                attribute_bandwidth: None,
            },
            normalize: false,
        }
    }

    /// Summed-RBF vertex kernel for attribute graphs.
    pub fn vertex_rbf(bandwidth: f64) -> Self {
        KernelConfig {
            kind: KernelKind::VertexHistogram {
                attribute_bandwidth: Some(bandwidth),
            },
            normalize: false,
        }
    }

    pub fn normalized(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    /// Checks that the parameters fit the vertex variant they will be used on.
    pub fn check(&self, variant: VertexVariant) -> Result<()> {
        match (&self.kind, variant) {
            (KernelKind::WlSubtree { .. }, VertexVariant::Label) => Ok(()),
            (KernelKind::WlSubtree { .. }, VertexVariant::Attribute) => Err(Error::VariantMismatch(
                "the WL subtree kernel needs label graphs".into(),
            )),
            (KernelKind::VertexHistogram { attribute_bandwidth: None }, VertexVariant::Label) => Ok(()),
            (KernelKind::VertexHistogram { attribute_bandwidth: Some(_) }, VertexVariant::Label) => Err(
                Error::Config("attribute_bandwidth is only meaningful for attribute graphs".into()),
            ),
            (KernelKind::VertexHistogram { attribute_bandwidth: Some(g) }, VertexVariant::Attribute) => {
                if g.is_finite() && *g > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("attribute_bandwidth must be positive, got {g}")))
                }
            }
            (KernelKind::VertexHistogram { attribute_bandwidth: None }, VertexVariant::Attribute) => Err(
                Error::Config("attribute graphs need attribute_bandwidth".into()),
            ),
        }
    }

    /// Unnormalized kernel implementation for this configuration.
    pub fn kernel(&self) -> Box<dyn GraphKernel> {
        match self.kind {
            KernelKind::WlSubtree { wl_iterations } => Box::new(WlSubtree {
                iterations: wl_iterations,
            }),
            KernelKind::VertexHistogram { attribute_bandwidth } => Box::new(VertexHistogram {
                bandwidth: attribute_bandwidth,
            }),
        }
    }
}

/// A positive semi-definite kernel between graphs.
///
/// Only [`GraphKernel::eval`] is required. Kernels that can share work across
/// many graphs (such as a relabeling dictionary) override the block methods;
/// they must return exactly what pairwise evaluation would.
pub trait GraphKernel: Sync + Send {
    fn eval(&self, a: &Graph, b: &Graph) -> Result<f64>;

    /// Upper triangle of the Gram matrix over `graphs`, row-major, mirrored.
    fn gram(&self, graphs: &[&Graph]) -> Result<Vec<f64>> {
        let n = graphs.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| {
                (a..n)
                    .map(|b| {
                        self.eval(graphs[a], graphs[b]).map_err(|e| Error::KernelPair {
                            row: a,
                            col: b,
                            message: e.to_string(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(mirror(n, rows))
    }

    /// Rectangular block `K[r][c] = k(rows[r], cols[c])`.
    fn cross(&self, rows: &[&Graph], cols: &[&Graph]) -> Result<Vec<Vec<f64>>> {
        rows.par_iter()
            .enumerate()
            .map(|(r, a)| {
                cols.iter()
                    .enumerate()
                    .map(|(c, b)| {
                        self.eval(a, b).map_err(|e| Error::KernelPair {
                            row: r,
                            col: c,
                            message: e.to_string(),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

fn mirror(n: usize, upper: Vec<Vec<f64>>) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for (a, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let b = a + off;
            k[a * n + b] = v;
            k[b * n + a] = v;
        }
    }
    k
}

// ---------------------------------------------------------------------------
// Weisfeiler-Lehman subtree kernel

/// Label-count histogram of one relabeling round, sorted by label.
type Histogram = Vec<(u32, u64)>;

/// Injective map from (own label, sorted neighbor labels) to compressed
/// labels, one table per round. Shared by every graph it relabels.
#[derive(Debug, Default)]
pub struct WlRelabeler {
    iterations: usize,
    tables: Vec<HashMap<(u32, Vec<u32>), u32>>,
}

impl WlRelabeler {
    pub fn new(iterations: usize) -> Self {
        WlRelabeler {
            iterations,
            tables: vec![HashMap::new(); iterations],
        }
    }

    /// Per-round label histograms for rounds `0..=iterations`.
    pub fn features(&mut self, g: &Graph) -> Result<Vec<Histogram>> {
        let mut labels = g
            .vertex_labels()
            .ok_or_else(|| Error::VariantMismatch("the WL subtree kernel needs label graphs".into()))?;
        let adj = g.adjacency();
        let mut rounds = Vec::with_capacity(self.iterations + 1);
        rounds.push(histogram(&labels));
        for table in &mut self.tables {
            labels = (0..labels.len())
                .map(|v| {
                    let mut nbrs: Vec<u32> = adj[v].iter().map(|&u| labels[u]).collect();
                    nbrs.sort_unstable();
                    let next = table.len() as u32;
                    *table.entry((labels[v], nbrs)).or_insert(next)
                })
                .collect();
            rounds.push(histogram(&labels));
        }
        Ok(rounds)
    }
}

fn histogram(labels: &[u32]) -> Histogram {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut out: Histogram = Vec::new();
    for l in sorted {
        match out.last_mut() {
            Some((last, n)) if *last == l => *n += 1,
            _ => out.push((l, 1)),
        }
    }
    out
}

fn sparse_dot(a: &Histogram, b: &Histogram) -> u64 {
    let (mut i, mut j, mut acc) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

fn wl_dot(a: &[Histogram], b: &[Histogram]) -> f64 {
    a.iter().zip(b).map(|(x, y)| sparse_dot(x, y)).sum::<u64>() as f64
}

/// WL subtree kernel between two label graphs with `h` relabeling rounds:
/// the sum over rounds `0..=h` of label-histogram dot products.
pub fn wl_subtree_kernel(g1: &Graph, g2: &Graph, h: usize) -> Result<f64> {
    let mut relabel = WlRelabeler::new(h);
    let f1 = relabel.features(g1)?;
    let f2 = relabel.features(g2)?;
    Ok(wl_dot(&f1, &f2))
}

#[derive(Debug, Clone)]
pub struct WlSubtree {
    pub iterations: usize,
}

impl WlSubtree {
    /// Features for all graphs under one dictionary, built in input order.
    fn all_features(&self, graphs: &[&Graph]) -> Result<Vec<Vec<Histogram>>> {
        let mut relabel = WlRelabeler::new(self.iterations);
        graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                relabel.features(g).map_err(|e| Error::KernelPair {
                    row: i,
                    col: i,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

impl GraphKernel for WlSubtree {
    fn eval(&self, a: &Graph, b: &Graph) -> Result<f64> {
        wl_subtree_kernel(a, b, self.iterations)
    }

    fn gram(&self, graphs: &[&Graph]) -> Result<Vec<f64>> {
        let feats = self.all_features(graphs)?;
        let n = graphs.len();
        let upper = (0..n)
            .into_par_iter()
            .map(|a| (a..n).map(|b| wl_dot(&feats[a], &feats[b])).collect())
            .collect();
        Ok(mirror(n, upper))
    }

    fn cross(&self, rows: &[&Graph], cols: &[&Graph]) -> Result<Vec<Vec<f64>>> {
        let all: Vec<&Graph> = rows.iter().chain(cols).copied().collect();
        let feats = self.all_features(&all)?;
        let (fr, fc) = feats.split_at(rows.len());
        Ok(fr
            .par_iter()
            .map(|a| fc.iter().map(|b| wl_dot(a, b)).collect())
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Vertex-histogram kernel

/// Vertex-level kernel summed over all vertex pairs.
///
/// Label graphs: dot product of label-count vectors. Attribute graphs:
/// `sum_u sum_v exp(-bandwidth * |x_u - x_v|^2)`.
pub fn vertex_histogram_kernel(g1: &Graph, g2: &Graph, bandwidth: Option<f64>) -> Result<f64> {
    match (g1.vertex_labels(), g2.vertex_labels()) {
        (Some(l1), Some(l2)) => {
            if bandwidth.is_some() {
                return Err(Error::Config("attribute_bandwidth given for label graphs".into()));
            }
            Ok(sparse_dot(&histogram(&l1), &histogram(&l2)) as f64)
        }
        _ => {
            let (Some(a1), Some(a2)) = (g1.vertex_attributes(), g2.vertex_attributes()) else {
                return Err(Error::VariantMismatch("graphs mix label and attribute vertices".into()));
            };
            let gamma = bandwidth.ok_or_else(|| Error::Config("attribute graphs need attribute_bandwidth".into()))?;
            let mut acc = 0.0;
            for x in &a1 {
                for y in &a2 {
                    if x.len() != y.len() {
                        return Err(Error::VariantMismatch(format!(
                            "attribute dimensions {} and {} differ",
                            x.len(),
                            y.len()
                        )));
                    }
                    let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    acc += (-gamma * d2).exp();
                }
            }
            Ok(acc)
        }
    }
}

#[derive(Debug, Clone)]
pub struct VertexHistogram {
    pub bandwidth: Option<f64>,
}

impl GraphKernel for VertexHistogram {
    fn eval(&self, a: &Graph, b: &Graph) -> Result<f64> {
        vertex_histogram_kernel(a, b, self.bandwidth)
    }
}

// ---------------------------------------------------------------------------
// Configured evaluation (with optional normalization)

fn normalize_entry(k: f64, kaa: f64, kbb: f64) -> f64 {
    let d = kaa.sqrt() * kbb.sqrt();
    if d > 0.0 {
        k / d
    } else {
        0.0
    }
}

/// Kernel value under `cfg`, including normalization.
pub fn kernel_value(cfg: &KernelConfig, a: &Graph, b: &Graph) -> Result<f64> {
    let kernel = cfg.kernel();
    let k = kernel.eval(a, b)?;
    if !cfg.normalize {
        return Ok(k);
    }
    Ok(normalize_entry(k, kernel.eval(a, a)?, kernel.eval(b, b)?))
}

/// Kernel block between two graph lists under `cfg`.
pub fn cross_kernel(cfg: &KernelConfig, rows: &[&Graph], cols: &[&Graph]) -> Result<Vec<Vec<f64>>> {
    let kernel = cfg.kernel();
    let mut block = kernel.cross(rows, cols)?;
    if cfg.normalize {
        let diag = |gs: &[&Graph]| -> Result<Vec<f64>> { gs.par_iter().map(|g| kernel.eval(g, g)).collect() };
        let (dr, dc) = (diag(rows)?, diag(cols)?);
        for (r, row) in block.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = normalize_entry(*v, dr[r], dc[c]);
            }
        }
    }
    Ok(block)
}

/// Symmetric kernel matrix over every graph of a dataset, indexed by a flat
/// (bag, graph) position.
#[derive(Debug, Clone, PartialEq)]
pub struct GramCache {
    /// `offsets[i]` is the flat index of the first graph of bag `i`;
    /// the final entry is the total graph count.
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl GramCache {
    /// Wraps a precomputed row-major matrix.
    pub fn from_parts(bag_sizes: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(bag_sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in bag_sizes {
            acc += s;
            offsets.push(acc);
        }
        if values.len() != acc * acc {
            return Err(Error::Shape {
                expected: acc * acc,
                actual: values.len(),
            });
        }
        Ok(GramCache { offsets, values })
    }

    pub fn size(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn num_bags(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Flat index of graph `graph` in bag `bag`.
    pub fn index(&self, bag: usize, graph: usize) -> usize {
        debug_assert!(self.offsets[bag] + graph < self.offsets[bag + 1]);
        self.offsets[bag] + graph
    }

    pub fn bag_len(&self, bag: usize) -> usize {
        self.offsets[bag + 1] - self.offsets[bag]
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size() + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let n = self.size();
        &self.values[a * n..(a + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when this cache's layout matches the dataset's bags.
    pub fn matches(&self, ds: &Dataset) -> bool {
        self.num_bags() == ds.num_bags() && ds.bags.iter().enumerate().all(|(i, b)| self.bag_len(i) == b.graphs.len())
    }

    /// CSV with a header row of flat indices; each row starts with its own index.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.size();
        write!(w, "index")?;
        for b in 0..n {
            write!(w, ",{b}")?;
        }
        writeln!(w)?;
        for a in 0..n {
            write!(w, "{a}")?;
            for v in self.row(a) {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    /// Parses a CSV written by [`GramCache::write_csv`] for the layout of `ds`.
    pub fn parse_csv(text: &str, ds: &Dataset) -> Result<Self> {
        let n = ds.num_graphs();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty Gram CSV".into()))?;
        let cols = header.split(',').count().saturating_sub(1);
        if cols != n {
            return Err(Error::Format(format!("Gram CSV has {cols} columns but the dataset has {n} graphs")));
        }
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (i, line) in lines {
            let mut fields = line.split(',');
            let idx = fields.next().unwrap_or_default().trim();
            if idx.parse::<usize>().ok() != Some(rows) {
                return Err(Error::parse(i + 1, "index", format!("expected row {rows}, got {idx:?}")));
            }
            let before = values.len();
            for (c, f) in fields.enumerate() {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(i + 1, format!("column {c}"), e))?;
                values.push(v);
            }
            if values.len() - before != n {
                return Err(Error::parse(i + 1, "row", format!("expected {n} values, got {}", values.len() - before)));
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Format(format!("Gram CSV has {rows} rows, expected {n}")));
        }
        for a in 0..n {
            for b in 0..a {
                if values[a * n + b] != values[b * n + a] {
                    return Err(Error::Format(format!("Gram CSV is not symmetric at ({a}, {b})")));
                }
            }
        }
        let sizes: Vec<usize> = ds.bags.iter().map(|b| b.graphs.len()).collect();
        GramCache::from_parts(&sizes, values)
    }

    pub fn load_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, ds)
    }
}

/// Computes every pairwise kernel value over the dataset's graphs.
pub fn compute_gram(ds: &Dataset, cfg: &KernelConfig) -> Result<GramCache> {
    cfg.check(ds.vertex_variant)?;
    let graphs: Vec<&Graph> = ds.graphs().collect();
    let kernel = cfg.kernel();
    let mut values = kernel.gram(&graphs)?;
    if cfg.normalize {
        let n = graphs.len();
        let diag: Vec<f64> = (0..n).map(|a| values[a * n + a]).collect();
        for a in 0..n {
            for b in 0..n {
                values[a * n + b] = normalize_entry(values[a * n + b], diag[a], diag[b]);
            }
        }
    }
    let sizes: Vec<usize> = ds.bags.iter().map(|b| b.graphs.len()).collect();
    GramCache::from_parts(&sizes, values)
}
