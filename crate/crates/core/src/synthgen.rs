//! Seeded synthetic multi-graph multi-label datasets with planted graph labels.
//!
//! Every class owns a fixed motif per size. A bag draws its label set, then
//! emits at least one perturbed motif graph per label, so the bag's labels
//! are exactly the union of its graphs' planted labels.

use std::f64::consts::PI;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Bag, Dataset, Graph, VertexData, VertexVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub num_bags: usize,
    pub min_graphs: usize,
    pub max_graphs: usize,
    /// Upper bound on labels per bag; at most `num_classes - 1`.
    pub max_labels: usize,
    pub min_motif_size: usize,
    pub max_motif_size: usize,
    /// Probability of flipping each vertex pair's edge.
    pub edge_noise: f64,
    pub vertex_variant: VertexVariant,
    /// Attribute dimension (attribute variant only).
    pub attr_dim: usize,
    /// Standard deviation of the additive attribute perturbation.
    pub attr_noise: f64,
    /// Extra unlabeled random graphs per bag.
    pub background_graphs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            num_bags: 60,
            min_graphs: 3,
            max_graphs: 6,
            max_labels: 2,
            min_motif_size: 5,
            max_motif_size: 8,
            edge_noise: 0.02,
            vertex_variant: VertexVariant::Label,
            attr_dim: 4,
            attr_noise: 0.1,
            background_graphs: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_bags == 0 {
            return fail("num_bags must be at least 1".into());
        }
        if self.min_graphs == 0 || self.min_graphs > self.max_graphs {
            return fail(format!("graphs-per-bag range [{}, {}] is empty", self.min_graphs, self.max_graphs));
        }
        if self.max_labels == 0 || self.max_labels > self.num_classes - 1 {
            return fail(format!(
                "max_labels must lie in [1, {}], got {}",
                self.num_classes - 1,
                self.max_labels
            ));
        }
        if self.min_motif_size == 0 || self.min_motif_size > self.max_motif_size {
            return fail(format!(
                "motif size range [{}, {}] is empty",
                self.min_motif_size, self.max_motif_size
            ));
        }
        if !(0.0..1.0).contains(&self.edge_noise) {
            return fail(format!("edge_noise must lie in [0, 1), got {}", self.edge_noise));
        }
        if self.vertex_variant == VertexVariant::Attribute {
            if self.attr_dim == 0 {
                return fail("attr_dim must be at least 1".into());
            }
            if !(self.attr_noise >= 0.0 && self.attr_noise.is_finite()) {
                return fail(format!("attr_noise must be non-negative, got {}", self.attr_noise));
            }
        }
        Ok(())
    }
}

/// Canonical class-`class` motif with `size` vertices, before perturbation.
///
/// Even classes are rings and odd classes are paths. Vertex labels alternate
/// between `class` and `class + 1`, so neighboring classes share one label.
/// Attribute motifs place every vertex at the class centroid.
pub fn motif(class: usize, size: usize, num_classes: usize, variant: VertexVariant, attr_dim: usize) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..size).map(|k| (k - 1, k)).collect();
    if class.is_multiple_of(2) && size >= 3 {
        edges.push((size - 1, 0));
    }
    let vertices = (0..size)
        .map(|k| match variant {
            VertexVariant::Label => VertexData::Label((class + k % 2) as u32),
            VertexVariant::Attribute => VertexData::Attributes(centroid(class, num_classes, attr_dim)),
        })
        .collect();
    Graph { vertices, edges }
}

fn centroid(class: usize, num_classes: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| (PI * (class + 1) as f64 * (j + 1) as f64 / (num_classes + 1) as f64).cos())
        .collect()
}

fn flip_edges(g: &mut Graph, rho: f64, rng: &mut ChaCha8Rng) {
    if rho == 0.0 {
        return;
    }
    let n = g.vertices.len();
    let mut present = vec![false; n * n];
    for &(u, v) in &g.edges {
        present[u.min(v) * n + u.max(v)] = true;
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let on = present[u * n + v] ^ rng.random_bool(rho);
            if on {
                edges.push((u, v));
            }
        }
    }
    g.edges = edges;
}

fn perturb_attributes(g: &mut Graph, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    for v in &mut g.vertices {
        if let VertexData::Attributes(a) = v {
            for x in a.iter_mut() {
                *x += normal.sample(rng);
            }
        }
    }
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Graph {
    let size = rng.random_range(cfg.min_motif_size..=cfg.max_motif_size);
    let vertices = (0..size)
        .map(|_| match cfg.vertex_variant {
            VertexVariant::Label => VertexData::Label(rng.random_range(0..=cfg.num_classes as u32)),
            VertexVariant::Attribute => {
                VertexData::Attributes((0..cfg.attr_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            }
        })
        .collect();
    let mut g = Graph {
        vertices,
        edges: Vec::new(),
    };
    flip_edges(&mut g, 0.3, rng);
    g
}

/// Generates a dataset; identical configs give identical datasets.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.num_classes;
    let mut bags = Vec::with_capacity(cfg.num_bags);
    for i in 0..cfg.num_bags {
        let k = rng.random_range(1..=cfg.max_labels);
        let mut labels: Vec<usize> = index::sample(&mut rng, c, k).into_vec();
        labels.sort_unstable();
        let count = rng.random_range(cfg.min_graphs..=cfg.max_graphs).max(k);
        let mut planted: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        while planted.len() < count {
            planted.push(Some(labels[rng.random_range(0..k)]));
        }
        planted.extend(std::iter::repeat_n(None, cfg.background_graphs));
        planted.shuffle(&mut rng);

        let graphs = planted
            .iter()
            .map(|p| match *p {
                Some(class) => {
                    let size = rng.random_range(cfg.min_motif_size..=cfg.max_motif_size);
                    let mut g = motif(class, size, c, cfg.vertex_variant, cfg.attr_dim);
                    flip_edges(&mut g, cfg.edge_noise, &mut rng);
                    perturb_attributes(&mut g, cfg.attr_noise, &mut rng);
                    g
                }
                None => background(cfg, &mut rng),
            })
            .collect();
        bags.push(Bag::new(format!("bag-{i}"), graphs, labels).with_graph_labels(planted));
    }
    let attr_dim = (cfg.vertex_variant == VertexVariant::Attribute).then_some(cfg.attr_dim);
    Ok(Dataset::new(c, cfg.vertex_variant, attr_dim, bags))
}
