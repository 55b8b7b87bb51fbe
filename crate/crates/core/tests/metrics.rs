mod common;

use std::collections::BTreeSet;

use cfmgml::graph::{Bag, Dataset, Graph, VertexVariant};
use cfmgml::metrics::{bag_metrics, evaluate, MetricReport};
use cfmgml::predictor::{combine, BagMode, GraphOutcome};
use common::{brute_metrics, random_metric_instance};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_matches_oracle(r: &MetricReport, scores: &[Vec<f64>], preds: &[BTreeSet<usize>], truth: &[BTreeSet<usize>], c: usize) {
    let b = brute_metrics(scores, preds, truth, c);
    assert_eq!(r.one_error, b.one_error);
    assert_eq!(r.hamming_loss, b.hamming_loss);
    assert_eq!(r.coverage, b.coverage);
    assert_eq!(r.ranking_loss, b.ranking_loss);
    assert_eq!(r.average_precision, b.average_precision);
    assert_eq!(r.macro_f1, b.macro_f1);
}

#[test]
fn metrics_equal_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..500 {
        let c = rng.random_range(2..=5);
        let rows = rng.random_range(1..6);
        let (scores, preds, truth) = random_metric_instance(&mut rng, rows, c);
        let r = bag_metrics(&scores, &preds, &truth, c, true).unwrap();
        assert_matches_oracle(&r, &scores, &preds, &truth, c);
    }
}

#[test]
fn reversed_perfect_scores_have_unit_ranking_loss() {
    let truth: Vec<BTreeSet<usize>> = vec![[0, 2].into(), [1].into()];
    let perfect: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| (0..4).map(|c| if t.contains(&c) { 1.0 } else { -1.0 }).collect())
        .collect();
    let reversed: Vec<Vec<f64>> = perfect.iter().map(|r| r.iter().map(|s| -s).collect()).collect();
    let empty = vec![BTreeSet::new(); 2];
    assert_eq!(bag_metrics(&perfect, &empty, &truth, 4, true).unwrap().ranking_loss, 0.0);
    let r = bag_metrics(&reversed, &empty, &truth, 4, true).unwrap();
    assert_eq!(r.ranking_loss, 1.0);
    assert_eq!(r.one_error, 1.0);
}

#[test]
fn unnormalized_coverage_counts_ranks() {
    let scores = vec![vec![0.1, 0.9, 0.5, -1.0]];
    let truth = vec![BTreeSet::from([0, 1])];
    let preds = vec![BTreeSet::new()];
    let n = bag_metrics(&scores, &preds, &truth, 4, true).unwrap();
    let u = bag_metrics(&scores, &preds, &truth, 4, false).unwrap();
    assert_eq!(u.coverage, 2.0);
    assert_eq!(n.coverage, 0.5);
}

#[test]
fn background_graphs_are_not_scored() {
    let g = Graph::labeled(&[0], &[]);
    let bag = Bag::new("b", vec![g.clone(), g.clone(), g], [1]).with_graph_labels(vec![Some(1), None, Some(0)]);
    let truth = Dataset::new(3, VertexVariant::Label, None, vec![bag]);
    let outcome = || GraphOutcome::from_scores(vec![-1.0, 1.0, -1.0]);
    let pred = combine("b", vec![outcome(), outcome(), outcome()], 3, BagMode::Union);
    let r = evaluate(&[pred], &truth, true).unwrap();
    assert_eq!(r.graph_accuracy, Some(0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rates_lie_in_unit_interval(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..=6);
        let (scores, preds, truth) = random_metric_instance(&mut rng, 5, c);
        let r = bag_metrics(&scores, &preds, &truth, c, true).unwrap();
        for v in [r.one_error, r.hamming_loss, r.coverage, r.ranking_loss, r.average_precision, r.macro_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        assert_matches_oracle(&r, &scores, &preds, &truth, c);
    }

    #[test]
    fn class_permutation_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(2..=6);
        let (_, preds, truth) = random_metric_instance(&mut rng, 6, c);
        // distinct scores so no tie-break is involved
        let scores: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let mut s: Vec<f64> = (0..c).map(|k| k as f64 - 0.5 * c as f64).collect();
                s.shuffle(&mut rng);
                s
            })
            .collect();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);
        let move_scores: Vec<Vec<f64>> = scores
            .iter()
            .map(|s| {
                let mut out = vec![0.0; c];
                for k in 0..c {
                    out[perm[k]] = s[k];
                }
                out
            })
            .collect();
        let move_set = |sets: &[BTreeSet<usize>]| -> Vec<BTreeSet<usize>> {
            sets.iter().map(|s| s.iter().map(|&k| perm[k]).collect()).collect()
        };
        let a = bag_metrics(&scores, &preds, &truth, c, true).unwrap();
        let b = bag_metrics(&move_scores, &move_set(&preds), &move_set(&truth), c, true).unwrap();
        prop_assert_eq!(a.one_error, b.one_error);
        prop_assert_eq!(a.hamming_loss, b.hamming_loss);
        prop_assert_eq!(a.coverage, b.coverage);
        prop_assert_eq!(a.ranking_loss, b.ranking_loss);
        // per-bag precision sums run in class order
        prop_assert!((a.average_precision - b.average_precision).abs() <= 1e-15);
        prop_assert!((a.macro_f1 - b.macro_f1).abs() <= 1e-15);
    }
}
