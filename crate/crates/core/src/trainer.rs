//! Training: alternating representative-graph selection and kernelized
//! subgradient descent on the hinge surrogate of the thresholding rank loss.
//!
//! For a bag `i` with relevant classes `P` and irrelevant classes `Q`, and
//! scores `F_c = <w_c, phi(g_ic)>` of its class representatives, the surrogate is
//!
//! ```text
//! lambda/2 sum_c |w_c|^2 + 1/n sum_i [ 1/|P|^2 sum_p |1 - F_p|+
//!                                    + 1/|Q|^2 sum_q |1 + F_q|+
//!                                    + 1/(|P||Q|) sum_p sum_q |2 + F_q - F_p|+ ]
//! ```
//!
//! Step sizes are `1/(lambda t)`, so after `t` steps the weights collapse into
//! per-(class, bag) counters of how often each hinge was active:
//! `w_c = sum_i agg[c][i] / z_i * phi(g_ic)` with
//! `agg = |Q|^2 kappa - |P|^2 nu + |P||Q| mu` and `z_i = lambda t n |P|^2 |Q|^2`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ensure_trainable, Dataset, Graph};
use crate::kernels::{GramCache, KernelConfig};
use crate::model::{argmax_first, weight_norm_sq, DualModel};

/// Representative graph index within each bag, `n x C`.
pub type Representatives = Vec<Vec<usize>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Thresholding terms plus the pairwise ranking term.
    Full,
    /// Thresholding (hinged hamming) terms only.
    HammingOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub rounds: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub record_objective: bool,
    /// Zero the counters (and the step count) at the start of every round
    /// after the first instead of carrying them over.
    #[serde(default)]
    pub reset_counters: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            rounds: 10,
            iterations: 100,
            seed: 0,
            loss_mode: LossMode::Full,
            record_objective: false,
            reset_counters: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive and finite, got {}", self.lambda)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Accumulated hinge activity, `C x n` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterState {
    pub kappa: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    /// Number of subgradient steps folded into the counters.
    pub t: u64,
}

impl CounterState {
    pub fn zeros(num_classes: usize, num_bags: usize) -> Self {
        let z = vec![vec![0.0; num_bags]; num_classes];
        CounterState {
            kappa: z.clone(),
            nu: z.clone(),
            mu: z,
            t: 0,
        }
    }

    /// Aggregate coefficient `|Q|^2 kappa - |P|^2 nu + |P||Q| mu` per (class, bag).
    pub fn aggregate(&self, ds: &Dataset) -> Vec<Vec<f64>> {
        let sizes = label_sizes(ds);
        (0..self.kappa.len())
            .map(|c| {
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, q))| {
                        q * q * self.kappa[c][i] - p * p * self.nu[c][i] + p * q * self.mu[c][i]
                    })
                    .collect()
            })
            .collect()
    }

    /// Per-bag `1 / z_i`; `None` before the first step.
    pub fn scale(&self, ds: &Dataset, lambda: f64) -> Option<Vec<f64>> {
        if self.t == 0 {
            return None;
        }
        let n = ds.num_bags() as f64;
        let t = self.t as f64;
        Some(
            label_sizes(ds)
                .iter()
                .map(|&(p, q)| 1.0 / (lambda * t * n * (p * p) * (q * q)))
                .collect(),
        )
    }

    /// Effective expansion coefficients `agg[c][i] / z_i`.
    pub fn beta(&self, ds: &Dataset, lambda: f64) -> Vec<Vec<f64>> {
        let Some(scale) = self.scale(ds, lambda) else {
            return vec![vec![0.0; ds.num_bags()]; self.kappa.len()];
        };
        self.aggregate(ds)
            .into_iter()
            .map(|row| row.iter().zip(&scale).map(|(s, z)| z * s).collect())
            .collect()
    }

    fn scale_by(&mut self, factor: f64) {
        for m in [&mut self.kappa, &mut self.nu, &mut self.mu] {
            for v in m.iter_mut().flatten() {
                *v *= factor;
            }
        }
    }
}

/// `(|P|, |Q|)` per bag as floats.
fn label_sizes(ds: &Dataset) -> Vec<(f64, f64)> {
    ds.bags
        .iter()
        .map(|b| {
            let p = b.labels.len();
            (p as f64, (ds.num_classes - p) as f64)
        })
        .collect()
}

/// Class scores of every bag's representatives, `F[i][c]`.
pub fn repr_scores(ds: &Dataset, gram: &GramCache, repr: &Representatives, beta: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let c_count = ds.num_classes;
    (0..ds.num_bags())
        .into_par_iter()
        .map(|i| {
            (0..c_count)
                .map(|c| {
                    let row = gram.row(gram.index(i, repr[i][c]));
                    beta[c]
                        .iter()
                        .enumerate()
                        .map(|(h, &b)| b * row[gram.index(h, repr[h][c])])
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `sum_c |w_c|^2` for the expansion over the given representatives.
pub fn repr_norm_sq(gram: &GramCache, repr: &Representatives, beta: &[Vec<f64>]) -> f64 {
    weight_norm_sq(beta, |c, h, i| {
        gram.get(gram.index(h, repr[h][c]), gram.index(i, repr[i][c]))
    })
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Surrogate objective from precomputed representative scores and weight norm.
pub fn surrogate_from_scores(ds: &Dataset, scores: &[Vec<f64>], norm_sq: f64, lambda: f64, mode: LossMode) -> f64 {
    let n = ds.num_bags() as f64;
    let mut data = 0.0;
    for (bag, f) in ds.bags.iter().zip(scores) {
        let pos = bag.positives();
        let neg = bag.negatives(ds.num_classes);
        let (p, q) = (pos.len() as f64, neg.len() as f64);
        let mut term = pos.iter().map(|&c| hinge(1.0 - f[c])).sum::<f64>() / (p * p)
            + neg.iter().map(|&c| hinge(1.0 + f[c])).sum::<f64>() / (q * q);
        if mode == LossMode::Full {
            let pairs: f64 = pos
                .iter()
                .flat_map(|&a| neg.iter().map(move |&b| hinge(2.0 + f[b] - f[a])))
                .sum();
            term += pairs / (p * q);
        }
        data += term;
    }
    0.5 * lambda * norm_sq + data / n
}

/// Hinge surrogate at the expansion `beta` over frozen representatives.
pub fn surrogate_loss(
    ds: &Dataset,
    gram: &GramCache,
    repr: &Representatives,
    beta: &[Vec<f64>],
    lambda: f64,
    mode: LossMode,
) -> f64 {
    let scores = repr_scores(ds, gram, repr, beta);
    surrogate_from_scores(ds, &scores, repr_norm_sq(gram, repr, beta), lambda, mode)
}

/// Thresholding rank loss (indicator form) averaged over bags, from bag scores `F[i][c]`.
pub fn rank_loss_from_scores(ds: &Dataset, scores: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (bag, f) in ds.bags.iter().zip(scores) {
        let pos = bag.positives();
        let neg = bag.negatives(ds.num_classes);
        let (p, q) = (pos.len() as f64, neg.len() as f64);
        let below = pos.iter().filter(|&&c| f[c] <= 0.0).count() as f64;
        let above = neg.iter().filter(|&&c| f[c] >= 0.0).count() as f64;
        let swapped = pos
            .iter()
            .flat_map(|&a| neg.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| f[a] <= f[b])
            .count() as f64;
        total += below / (p * p) + above / (q * q) + swapped / (p * q);
    }
    total / ds.num_bags() as f64
}

pub fn rank_loss(ds: &Dataset, gram: &GramCache, repr: &Representatives, beta: &[Vec<f64>]) -> f64 {
    rank_loss_from_scores(ds, &repr_scores(ds, gram, repr, beta))
}

/// Counter increments contributed by one iteration's active hinges.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeActivity {
    pub kappa: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
}

/// Active hinges at the scores `F[i][c]`. A hinge sitting exactly at its kink
/// counts as active.
pub fn hinge_activity(ds: &Dataset, scores: &[Vec<f64>], mode: LossMode) -> HingeActivity {
    let (c_count, n) = (ds.num_classes, ds.num_bags());
    let mut act = HingeActivity {
        kappa: vec![vec![0.0; n]; c_count],
        nu: vec![vec![0.0; n]; c_count],
        mu: vec![vec![0.0; n]; c_count],
    };
    for (i, (bag, f)) in ds.bags.iter().zip(scores).enumerate() {
        let pos = bag.positives();
        let neg = bag.negatives(c_count);
        for &p in &pos {
            if f[p] <= 1.0 {
                act.kappa[p][i] += 1.0;
            }
        }
        for &q in &neg {
            if f[q] >= -1.0 {
                act.nu[q][i] += 1.0;
            }
        }
        if mode == LossMode::Full {
            for &p in &pos {
                for &q in &neg {
                    if f[q] >= f[p] - 2.0 {
                        act.mu[p][i] += 1.0;
                        act.mu[q][i] -= 1.0;
                    }
                }
            }
        }
    }
    act
}

/// Subgradient of the data term: `grad_{w_c} = sum_i coef[c][i] phi(g_ic)`.
pub fn loss_subgradient(ds: &Dataset, scores: &[Vec<f64>], mode: LossMode) -> Vec<Vec<f64>> {
    let act = hinge_activity(ds, scores, mode);
    let n = ds.num_bags() as f64;
    let sizes = label_sizes(ds);
    (0..ds.num_classes)
        .map(|c| {
            sizes
                .iter()
                .enumerate()
                .map(|(i, &(p, q))| {
                    let agg = q * q * act.kappa[c][i] - p * p * act.nu[c][i] + p * q * act.mu[c][i];
                    -agg / (n * p * p * q * q)
                })
                .collect()
        })
        .collect()
}

/// Scales the counters so that `|W|_F <= sqrt(2/lambda)`. Returns the norm after projection.
pub fn project(state: &mut CounterState, ds: &Dataset, gram: &GramCache, repr: &Representatives, lambda: f64) -> f64 {
    let norm = repr_norm_sq(gram, repr, &state.beta(ds, lambda)).max(0.0).sqrt();
    let radius = (2.0 / lambda).sqrt();
    if norm > radius {
        state.scale_by(radius / norm);
        return repr_norm_sq(gram, repr, &state.beta(ds, lambda)).max(0.0).sqrt();
    }
    norm
}

/// One subgradient step with representatives frozen, followed by projection.
/// Returns the weight norm after projection.
pub fn subgradient_step(
    state: &mut CounterState,
    ds: &Dataset,
    gram: &GramCache,
    repr: &Representatives,
    lambda: f64,
    mode: LossMode,
) -> f64 {
    let beta = state.beta(ds, lambda);
    let scores = repr_scores(ds, gram, repr, &beta);
    let act = hinge_activity(ds, &scores, mode);
    for (dst, src) in [
        (&mut state.kappa, &act.kappa),
        (&mut state.nu, &act.nu),
        (&mut state.mu, &act.mu),
    ] {
        for (d, s) in dst.iter_mut().flatten().zip(src.iter().flatten()) {
            *d += s;
        }
    }
    state.t += 1;
    project(state, ds, gram, repr, lambda)
}

/// For each bag and class, the graph maximizing the current class score;
/// ties go to the lowest index.
pub fn select_representatives(
    ds: &Dataset,
    gram: &GramCache,
    repr: &Representatives,
    beta: &[Vec<f64>],
) -> Representatives {
    (0..ds.num_bags())
        .into_par_iter()
        .map(|i| {
            (0..ds.num_classes)
                .map(|c| {
                    let scores: Vec<f64> = (0..gram.bag_len(i))
                        .map(|j| {
                            let row = gram.row(gram.index(i, j));
                            beta[c]
                                .iter()
                                .enumerate()
                                .map(|(h, &b)| b * row[gram.index(h, repr[h][c])])
                                .sum()
                        })
                        .collect();
                    argmax_first(&scores).1
                })
                .collect()
        })
        .collect()
}

/// Seeded uniform draw of one graph per (bag, class).
pub fn initial_representatives(ds: &Dataset, seed: u64) -> Representatives {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ds.bags
        .iter()
        .map(|b| (0..ds.num_classes).map(|_| rng.random_range(0..b.graphs.len())).collect())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainTrace {
    /// Surrogate objective after each iteration (empty unless recorded).
    pub objective: Vec<f64>,
    /// `|W|_F` after each iteration's projection.
    pub norms: Vec<f64>,
    /// Representatives in force during each round.
    pub repr_snapshots: Vec<Representatives>,
    pub final_norm: f64,
    pub wall_time_secs: f64,
}

/// Runs `rounds` rounds of `iterations` subgradient steps, refreshing the
/// representatives after each round.
pub fn train(
    ds: &Dataset,
    gram: &GramCache,
    kernel: &KernelConfig,
    cfg: &TrainConfig,
) -> Result<(DualModel, TrainTrace)> {
    let start = Instant::now();
    cfg.validate()?;
    ensure_trainable(ds)?;
    if !gram.matches(ds) {
        return Err(Error::Shape {
            expected: ds.num_graphs(),
            actual: gram.size(),
        });
    }

    let (c_count, n) = (ds.num_classes, ds.num_bags());
    let mut repr = initial_representatives(ds, cfg.seed);
    let mut state = CounterState::zeros(c_count, n);
    let mut trace = TrainTrace::default();

    for round in 0..cfg.rounds {
        if round > 0 && cfg.reset_counters {
            state = CounterState::zeros(c_count, n);
        }
        trace.repr_snapshots.push(repr.clone());
        for _ in 0..cfg.iterations {
            let norm = subgradient_step(&mut state, ds, gram, &repr, cfg.lambda, cfg.loss_mode);
            trace.norms.push(norm);
            if cfg.record_objective {
                let beta = state.beta(ds, cfg.lambda);
                let scores = repr_scores(ds, gram, &repr, &beta);
                trace
                    .objective
                    .push(surrogate_from_scores(ds, &scores, norm * norm, cfg.lambda, cfg.loss_mode));
            }
        }
        repr = select_representatives(ds, gram, &repr, &state.beta(ds, cfg.lambda));
        // the new expansion can have a different norm
        trace.final_norm = project(&mut state, ds, gram, &repr, cfg.lambda);
    }

    let model = build_model(ds, kernel, cfg.lambda, &state, &repr);
    trace.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, trace))
}

/// Freezes counters and representatives into a standalone model.
pub fn build_model(
    ds: &Dataset,
    kernel: &KernelConfig,
    lambda: f64,
    state: &CounterState,
    repr: &Representatives,
) -> DualModel {
    let mut repr_graphs: Vec<Graph> = Vec::new();
    let mut seen: Vec<((usize, usize), usize)> = Vec::new();
    let repr_slot = repr
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&j| match seen.iter().find(|(k, _)| *k == (i, j)) {
                    Some(&(_, slot)) => slot,
                    None => {
                        let slot = repr_graphs.len();
                        repr_graphs.push(ds.bags[i].graphs[j].clone());
                        seen.push(((i, j), slot));
                        slot
                    }
                })
                .collect()
        })
        .collect();
    let t_final = state.t.max(1);
    let scale = CounterState { t: t_final, ..state.clone() }
        .scale(ds, lambda)
        .expect("t_final is positive");
    DualModel {
        num_classes: ds.num_classes,
        lambda,
        kernel: kernel.clone(),
        vertex_variant: ds.vertex_variant,
        attr_dim: ds.attr_dim,
        t_final,
        coeff: state.aggregate(ds),
        scale,
        repr: repr.clone(),
        repr_slot,
        repr_graphs,
    }
}
