//! Reference implementations and shared checks for the integration and
//! acceptance tests. The references do not call into the library's numerics.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cfmgml::kernels::{compute_gram, KernelConfig};
use cfmgml::predictor::{predict_dataset, BagMode};
use cfmgml::synthgen::{generate, SynthConfig};
use cfmgml::trainer::{initial_representatives, loss_subgradient, repr_scores, surrogate_loss, train};
use cfmgml::{Bag, Dataset, Graph, LossMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_label_graph(rng: &mut impl Rng, max_vertices: usize, num_labels: u32) -> Graph {
    let n = rng.random_range(1..=max_vertices);
    let labels: Vec<u32> = (0..n).map(|_| rng.random_range(0..num_labels)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.4) {
                edges.push((u, v));
            }
        }
    }
    Graph::labeled(&labels, &edges)
}

/// Random trainable dataset of label graphs.
pub fn random_dataset(seed: u64, num_bags: usize, num_classes: usize, max_graphs: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bags = (0..num_bags)
        .map(|i| {
            let k = rng.random_range(1..num_classes);
            let mut labels: Vec<usize> = (0..num_classes).collect();
            while labels.len() > k {
                labels.remove(rng.random_range(0..labels.len()));
            }
            let graphs = (0..rng.random_range(1..=max_graphs))
                .map(|_| random_label_graph(&mut rng, 6, 4))
                .collect();
            Bag::new(format!("r{i}"), graphs, labels)
        })
        .collect();
    Dataset::new(num_classes, cfmgml::VertexVariant::Label, None, bags)
}

/// WL subtree kernel by literal string relabeling: a vertex's round-`r` name
/// is its round-`r-1` name followed by its neighbors' sorted names.
pub fn naive_wl(g1: &Graph, g2: &Graph, h: usize) -> f64 {
    let names = |g: &Graph| -> Vec<Vec<String>> {
        let labels = g.vertex_labels().unwrap();
        let n = labels.len();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &g.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut rounds = vec![labels.iter().map(|l| l.to_string()).collect::<Vec<_>>()];
        for _ in 0..h {
            let prev = rounds.last().unwrap();
            let next = (0..n)
                .map(|v| {
                    let mut nb: Vec<&String> = adj[v].iter().map(|&u| &prev[u]).collect();
                    nb.sort();
                    let nb: Vec<&str> = nb.iter().map(|s| s.as_str()).collect();
                    format!("({};{})", prev[v], nb.join(","))
                })
                .collect();
            rounds.push(next);
        }
        rounds
    };
    let (a, b) = (names(g1), names(g2));
    let mut total = 0u64;
    fn count(r: &[String]) -> BTreeMap<&str, u64> {
        let mut m = BTreeMap::new();
        for s in r {
            *m.entry(s.as_str()).or_default() += 1;
        }
        m
    }
    for (ra, rb) in a.iter().zip(&b) {
        let (ca, cb) = (count(ra), count(rb));
        total += ca.iter().map(|(k, v)| v * cb.get(k).copied().unwrap_or(0)).sum::<u64>();
    }
    total as f64
}

/// Explicit label-count feature vector.
pub fn label_counts(g: &Graph, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for l in g.vertex_labels().unwrap() {
        v[l as usize] += 1.0;
    }
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn feature_dim(ds: &Dataset) -> usize {
    ds.graphs()
        .flat_map(|g| g.vertex_labels().unwrap())
        .max()
        .map_or(1, |m| m as usize + 1)
}

/// Hinge-loss training with explicit weight vectors over the label-count
/// features. Tracks the expansion coefficients `beta[c][i]` with the
/// step `beta <- (1 - 1/t) beta + step / (lambda t)`, materializes
/// `w_c = sum_i beta[c][i] phi(g_ic)` densely, projects onto the
/// `sqrt(2/lambda)` ball and refreshes representatives after every round.
pub struct PrimalOracle {
    pub phi: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<f64>>,
    pub repr: Vec<Vec<usize>>,
    pub w: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub num_classes: usize,
    pub lambda: f64,
    pub full: bool,
}

impl PrimalOracle {
    pub fn new(ds: &Dataset, lambda: f64, seed: u64, full: bool) -> Self {
        let dim = feature_dim(ds);
        let phi = ds
            .bags
            .iter()
            .map(|b| b.graphs.iter().map(|g| label_counts(g, dim)).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let repr = ds
            .bags
            .iter()
            .map(|b| (0..ds.num_classes).map(|_| rng.random_range(0..b.graphs.len())).collect())
            .collect();
        let mut o = PrimalOracle {
            phi,
            beta: vec![vec![0.0; ds.num_bags()]; ds.num_classes],
            repr,
            w: vec![vec![0.0; dim]; ds.num_classes],
            norms: Vec::new(),
            num_classes: ds.num_classes,
            lambda,
            full,
        };
        o.materialize();
        o
    }

    fn materialize(&mut self) {
        for c in 0..self.num_classes {
            let mut w = vec![0.0; self.w[c].len()];
            for (i, b) in self.beta[c].iter().enumerate() {
                for (x, f) in w.iter_mut().zip(&self.phi[i][self.repr[i][c]]) {
                    *x += b * f;
                }
            }
            self.w[c] = w;
        }
    }

    fn project(&mut self) -> f64 {
        let norm = self.w.iter().map(|w| dot(w, w)).sum::<f64>().sqrt();
        let radius = (2.0 / self.lambda).sqrt();
        if norm > radius {
            let f = radius / norm;
            for b in self.beta.iter_mut().flatten() {
                *b *= f;
            }
            self.materialize();
            return self.w.iter().map(|w| dot(w, w)).sum::<f64>().sqrt();
        }
        norm
    }

    pub fn repr_scores(&self) -> Vec<Vec<f64>> {
        (0..self.phi.len())
            .map(|i| (0..self.num_classes).map(|c| dot(&self.w[c], &self.phi[i][self.repr[i][c]])).collect())
            .collect()
    }

    pub fn step(&mut self, ds: &Dataset, t: u64) {
        let scores = self.repr_scores();
        let n = ds.num_bags() as f64;
        let mut step = vec![vec![0.0; ds.num_bags()]; self.num_classes];
        for (i, bag) in ds.bags.iter().enumerate() {
            let f = &scores[i];
            let pos: Vec<usize> = bag.labels.iter().copied().collect();
            let neg: Vec<usize> = (0..self.num_classes).filter(|c| !bag.labels.contains(c)).collect();
            let (p, q) = (pos.len() as f64, neg.len() as f64);
            for &a in &pos {
                if 1.0 - f[a] >= 0.0 {
                    step[a][i] += 1.0 / (n * p * p);
                }
            }
            for &b in &neg {
                if 1.0 + f[b] >= 0.0 {
                    step[b][i] -= 1.0 / (n * q * q);
                }
            }
            if self.full {
                for &a in &pos {
                    for &b in &neg {
                        if 2.0 + f[b] - f[a] >= 0.0 {
                            step[a][i] += 1.0 / (n * p * q);
                            step[b][i] -= 1.0 / (n * p * q);
                        }
                    }
                }
            }
        }
        let t = t as f64;
        for (brow, srow) in self.beta.iter_mut().zip(&step) {
            for (b, s) in brow.iter_mut().zip(srow) {
                *b = (1.0 - 1.0 / t) * *b + s / (self.lambda * t);
            }
        }
        self.materialize();
        let norm = self.project();
        self.norms.push(norm);
    }

    pub fn refresh(&mut self) {
        for i in 0..self.phi.len() {
            for c in 0..self.num_classes {
                let mut best = (f64::NEG_INFINITY, 0);
                for (j, f) in self.phi[i].iter().enumerate() {
                    let s = dot(&self.w[c], f);
                    if s > best.0 {
                        best = (s, j);
                    }
                }
                self.repr[i][c] = best.1;
            }
        }
        self.materialize();
        self.project();
    }

    pub fn train(ds: &Dataset, lambda: f64, seed: u64, rounds: usize, iterations: usize, full: bool) -> Self {
        let mut o = PrimalOracle::new(ds, lambda, seed, full);
        let mut t = 0;
        for _ in 0..rounds {
            for _ in 0..iterations {
                t += 1;
                o.step(ds, t);
            }
            o.refresh();
        }
        o
    }

    /// `F_c(B_i) = max_j <w_c, phi(g_ij)>`.
    pub fn bag_scores(&self) -> Vec<Vec<f64>> {
        self.phi
            .iter()
            .map(|graphs| {
                (0..self.num_classes)
                    .map(|c| graphs.iter().map(|f| dot(&self.w[c], f)).fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            })
            .collect()
    }
}

/// Six bag metrics recomputed from scratch: ranks by counting, every
/// (positive, negative) pair enumerated.
#[derive(Debug, PartialEq)]
pub struct BruteMetrics {
    pub one_error: f64,
    pub hamming_loss: f64,
    pub coverage: f64,
    pub ranking_loss: f64,
    pub average_precision: f64,
    pub macro_f1: f64,
}

pub fn brute_metrics(
    scores: &[Vec<f64>],
    preds: &[BTreeSet<usize>],
    truth: &[BTreeSet<usize>],
    c: usize,
) -> BruteMetrics {
    let n = scores.len() as f64;
    let rank = |s: &[f64], k: usize| 1 + (0..c).filter(|&o| s[o] > s[k] || (s[o] == s[k] && o < k)).count();
    let (mut oe, mut hl, mut cov, mut rl, mut ap) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((s, p), t) in scores.iter().zip(preds).zip(truth) {
        let top = (0..c).find(|&k| rank(s, k) == 1).unwrap();
        if !t.contains(&top) {
            oe += 1.0;
        }
        hl += (0..c).filter(|k| p.contains(k) != t.contains(k)).count() as f64 / c as f64;
        cov += (t.iter().map(|&k| rank(s, k)).max().unwrap() - 1) as f64 / c as f64;
        let mut bad = 0;
        let mut pairs = 0;
        for a in 0..c {
            for b in 0..c {
                if t.contains(&a) && !t.contains(&b) {
                    pairs += 1;
                    if s[a] <= s[b] {
                        bad += 1;
                    }
                }
            }
        }
        rl += bad as f64 / pairs as f64;
        let mut prec = 0.0;
        for &a in t {
            let ra = rank(s, a);
            let above = t.iter().filter(|&&o| rank(s, o) <= ra).count();
            prec += above as f64 / ra as f64;
        }
        ap += prec / t.len() as f64;
    }
    let mut f1 = 0.0;
    for k in 0..c {
        let tp = preds.iter().zip(truth).filter(|(p, t)| p.contains(&k) && t.contains(&k)).count();
        let np = preds.iter().filter(|p| p.contains(&k)).count();
        let nt = truth.iter().filter(|t| t.contains(&k)).count();
        f1 += if np + nt == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (np + nt) as f64
        };
    }
    BruteMetrics {
        one_error: oe / n,
        hamming_loss: hl / n,
        coverage: cov / n,
        ranking_loss: rl / n,
        average_precision: ap / n,
        macro_f1: f1 / c as f64,
    }
}

/// Scores, predicted sets and true sets, one row per bag.
pub type MetricInstance = (Vec<Vec<f64>>, Vec<BTreeSet<usize>>, Vec<BTreeSet<usize>>);

/// Random metric instance with `1 <= |truth| <= c-1` per row. Scores are
/// drawn from a small grid so ties occur.
pub fn random_metric_instance(
    rng: &mut impl Rng,
    rows: usize,
    c: usize,
) -> MetricInstance {
    let mut scores = Vec::new();
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..rows {
        scores.push((0..c).map(|_| rng.random_range(-4..=4) as f64 / 2.0).collect());
        preds.push((0..c).filter(|_| rng.random_bool(0.4)).collect());
        let k = rng.random_range(1..c);
        let mut t: Vec<usize> = (0..c).collect();
        while t.len() > k {
            t.remove(rng.random_range(0..t.len()));
        }
        truth.push(t.into_iter().collect());
    }
    (scores, preds, truth)
}

pub struct FdReport {
    pub points: usize,
    pub comparisons: usize,
    pub max_rel_err: f64,
}

/// Smallest distance of any hinge argument from its kink at scores `f`.
pub fn kink_distance(ds: &Dataset, f: &[Vec<f64>]) -> f64 {
    let mut d = f64::INFINITY;
    for (bag, s) in ds.bags.iter().zip(f) {
        let pos = bag.positives();
        let neg = bag.negatives(ds.num_classes);
        for &p in &pos {
            d = d.min((1.0 - s[p]).abs());
            for &q in &neg {
                d = d.min((2.0 + s[q] - s[p]).abs());
            }
        }
        for &q in &neg {
            d = d.min((1.0 + s[q]).abs());
        }
    }
    d
}

/// Central differences of the surrogate objective along every dual
/// coordinate, against `sum_i (lambda beta_ci + gamma_ci) K_c(h, i)`, at
/// `points` random points whose hinge arguments are all at least `1e-3`
/// from their kinks. Representatives stay frozen.
pub fn finite_difference_check(seed: u64, points: usize, lambda: f64) -> FdReport {
    let ds = generate(&SynthConfig {
        num_classes: 3,
        num_bags: 10,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = KernelConfig::wl_subtree(2).normalized(true);
    let gram = compute_gram(&ds, &cfg).unwrap();
    let repr = initial_representatives(&ds, seed);
    let (c_count, n) = (ds.num_classes, ds.num_bags());
    let k = |c: usize, h: usize, i: usize| gram.get(gram.index(h, repr[h][c]), gram.index(i, repr[i][c]));
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = FdReport {
        points: 0,
        comparisons: 0,
        max_rel_err: 0.0,
    };
    let mut attempts = 0;
    while report.points < points {
        attempts += 1;
        assert!(attempts < 100 * points, "could not find differentiable points");
        let beta: Vec<Vec<f64>> = (0..c_count)
            .map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let scores = repr_scores(&ds, &gram, &repr, &beta);
        if kink_distance(&ds, &scores) < 1e-3 {
            continue;
        }
        report.points += 1;
        let gamma = loss_subgradient(&ds, &scores, LossMode::Full);
        for c in 0..c_count {
            for h in 0..n {
                let analytic: f64 = (0..n).map(|i| (lambda * beta[c][i] + gamma[c][i]) * k(c, h, i)).sum();
                let mut plus = beta.clone();
                plus[c][h] += eps;
                let mut minus = beta.clone();
                minus[c][h] -= eps;
                let fd = (surrogate_loss(&ds, &gram, &repr, &plus, lambda, LossMode::Full)
                    - surrogate_loss(&ds, &gram, &repr, &minus, lambda, LossMode::Full))
                    / (2.0 * eps);
                let rel = (fd - analytic).abs() / analytic.abs().max(1e-6);
                report.max_rel_err = report.max_rel_err.max(rel);
                report.comparisons += 1;
            }
        }
    }
    report
}

pub struct DualPrimalReport {
    pub max_score_gap: f64,
    pub same_representatives: bool,
    pub same_rankings: bool,
}

/// Trains with the vertex-histogram kernel and with [`PrimalOracle`] under
/// the same seed and schedule, then compares bag scores.
pub fn dual_primal_check(ds: &Dataset, lambda: f64, seed: u64, rounds: usize, iterations: usize, mode: LossMode) -> DualPrimalReport {
    let kernel = KernelConfig::vertex_histogram();
    let gram = compute_gram(ds, &kernel).unwrap();
    let cfg = TrainConfig {
        lambda,
        rounds,
        iterations,
        seed,
        loss_mode: mode,
        ..TrainConfig::default()
    };
    let (model, _) = train(ds, &gram, &kernel, &cfg).unwrap();
    let dual: Vec<Vec<f64>> = predict_dataset(&model, ds, BagMode::Union)
        .unwrap()
        .into_iter()
        .map(|p| p.scores)
        .collect();
    let oracle = PrimalOracle::train(ds, lambda, seed, rounds, iterations, mode == LossMode::Full);
    let primal = oracle.bag_scores();
    // every class pair separated by more than 1e-8 in one is ordered alike in the other
    let agree = |a: &[f64], b: &[f64]| {
        (0..a.len()).all(|x| {
            (0..a.len()).all(|y| (a[x] - a[y]).abs() <= 1e-8 || (b[x] - b[y]).abs() <= 1e-8 || (a[x] > a[y]) == (b[x] > b[y]))
        })
    };
    DualPrimalReport {
        max_score_gap: dual
            .iter()
            .flatten()
            .zip(primal.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        same_representatives: model.repr == oracle.repr,
        same_rankings: dual.iter().zip(&primal).all(|(a, b)| agree(a, b)),
    }
}
