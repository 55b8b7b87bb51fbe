use std::collections::BTreeSet;

use cfmgml::graph::{parse_dataset, validate_dataset, write_dataset_to, VertexVariant};
use cfmgml::kernels::{kernel_value, KernelConfig};
use cfmgml::synthgen::{generate, motif, SynthConfig};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = SynthConfig> {
    (
        2usize..6,
        1usize..12,
        1usize..4,
        0usize..3,
        0.0f64..0.3,
        any::<bool>(),
        0usize..2,
        any::<u64>(),
    )
        .prop_map(|(c, n, min_g, extra, rho, attr, bg, seed)| SynthConfig {
            num_classes: c,
            num_bags: n,
            min_graphs: min_g,
            max_graphs: min_g + extra,
            max_labels: (c - 1).min(3),
            min_motif_size: 2,
            max_motif_size: 6,
            edge_noise: rho,
            vertex_variant: if attr { VertexVariant::Attribute } else { VertexVariant::Label },
            attr_dim: 3,
            attr_noise: 0.5,
            background_graphs: bg,
            seed,
        })
}

#[test]
fn noiseless_graphs_are_nearest_to_their_motif() {
    let cfg = SynthConfig {
        edge_noise: 0.0,
        num_bags: 40,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let kernel = KernelConfig::wl_subtree(2).normalized(true);
    let (mut hit, mut total) = (0, 0);
    for b in &ds.bags {
        for (g, planted) in b.graphs.iter().zip(b.graph_labels.as_ref().unwrap()) {
            let sims: Vec<f64> = (0..cfg.num_classes)
                .map(|c| {
                    let m = motif(c, g.num_vertices(), cfg.num_classes, cfg.vertex_variant, cfg.attr_dim);
                    kernel_value(&kernel, g, &m).unwrap()
                })
                .collect();
            let best = (0..sims.len()).max_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(b.cmp(&a))).unwrap();
            total += 1;
            hit += usize::from(Some(best) == *planted);
        }
    }
    assert_eq!(hit, total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialization_round_trips(cfg in config()) {
        let ds = generate(&cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let back = parse_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(&back, &ds);
        // a second pass is byte-identical
        let mut again = Vec::new();
        write_dataset_to(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn generated_datasets_are_valid(cfg in config()) {
        let ds = generate(&cfg).unwrap();
        prop_assert!(validate_dataset(&ds).is_empty());
        for b in &ds.bags {
            prop_assert!(!b.labels.is_empty() && b.labels.len() < ds.num_classes);
            prop_assert_eq!(b.positives().len() + b.negatives(ds.num_classes).len(), ds.num_classes);
            let planted: BTreeSet<usize> = b.graph_labels.as_ref().unwrap().iter().flatten().copied().collect();
            prop_assert_eq!(&planted, &b.labels);
        }
    }
}
