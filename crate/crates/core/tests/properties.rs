use std::collections::BTreeSet;

use cdrift_core::ann::{exact_neighbors, AnnConfig, AnnIndex};
use cdrift_core::claim_graph::components;
use cdrift_core::corpus::EmbeddingStore;
use cdrift_core::drift::{drift_groups, DriftGroup, EarlyDrift};
use cdrift_core::nalgebra::DMatrix;
use cdrift_core::survival::{km_estimate, log_rank, vif, SurvivalRecord};
use cdrift_core::union_find::UnionFind;
use proptest::prelude::*;

fn records(v: &[(u16, bool)], offset: usize) -> Vec<SurvivalRecord> {
    v.iter()
        .enumerate()
        .map(|(i, &(t, e))| SurvivalRecord::new(offset + i, f64::from(t) + 0.5, e))
        .collect()
}

fn drift(claim_id: usize, v: f64) -> EarlyDrift {
    EarlyDrift {
        claim_id,
        window_hours: 24,
        drift_value: v,
        window_posts: 2,
        group: None,
    }
}

proptest! {
    #[test]
    fn components_partition_nodes_and_respect_edges(
        n in 1usize..60,
        raw in proptest::collection::vec((0usize..60, 0usize..60), 0..120),
    ) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let parts = components(n, edges.iter().copied());
        let mut seen = BTreeSet::new();
        for p in &parts {
            for &v in p {
                prop_assert!(seen.insert(v), "node {v} in two components");
            }
        }
        prop_assert_eq!(seen.len(), n);
        let mut uf = UnionFind::new(n);
        for &(a, b) in &edges {
            uf.union(a, b);
        }
        for p in &parts {
            let root = uf.find(p[0]);
            for &v in p {
                prop_assert_eq!(uf.find(v), root);
            }
        }
        prop_assert_eq!(parts.len(), uf.groups().len());
    }

    #[test]
    fn km_is_a_nonincreasing_probability(obs in proptest::collection::vec((0u16..100, any::<bool>()), 1..80)) {
        let curve = km_estimate(&records(&obs, 0));
        let mut last = 1.0;
        for p in &curve.points {
            prop_assert!((0.0..=1.0).contains(&p.survival));
            prop_assert!(p.survival <= last + 1e-15);
            prop_assert!(p.ci_low <= p.survival + 1e-12 && p.survival <= p.ci_high + 1e-12);
            last = p.survival;
        }
        prop_assert_eq!(curve.events, obs.iter().filter(|o| o.1).count());
    }

    #[test]
    fn log_rank_ignores_group_order(
        a in proptest::collection::vec((0u16..60, any::<bool>()), 2..40),
        b in proptest::collection::vec((0u16..60, any::<bool>()), 2..40),
    ) {
        let (ra, rb) = (records(&a, 0), records(&b, a.len()));
        prop_assume!(ra.iter().chain(&rb).any(|r| r.event));
        let ab = log_rank(&ra, &rb).unwrap();
        let ba = log_rank(&rb, &ra).unwrap();
        prop_assert!((ab.chi_square - ba.chi_square).abs() <= 1e-9 * ab.chi_square.max(1.0));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn median_split_is_balanced(values in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 1..200)) {
        let g = drift_groups(values.iter().enumerate().map(|(i, &v)| drift(i, v)).collect());
        let count = |grp| g.drifts.iter().filter(|d| d.group == Some(grp)).count();
        let zeros = values.iter().filter(|&&v| v <= 0.0).count();
        prop_assert_eq!(count(DriftGroup::NoDrift), zeros);
        let distinct: BTreeSet<u64> = values.iter().filter(|&&v| v > 0.0).map(|v| v.to_bits()).collect();
        if distinct.len() == values.len() - zeros {
            let (hi, lo) = (count(DriftGroup::High) as i64, count(DriftGroup::Low) as i64);
            prop_assert!((lo - hi).abs() <= 1, "low {lo} high {hi}");
        }
    }

    #[test]
    fn vif_ignores_column_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cols = DMatrix::from_fn(40, 3, |i, j| rng.gen_range(-1.0..1.0) + if j == 2 { 0.5 * i as f64 / 40.0 } else { 0.0 });
        let mut scaled = cols.clone();
        scaled.column_mut(1).scale_mut(scale);
        let a = vif(&["a", "b", "c"], &cols).unwrap();
        let b = vif(&["a", "b", "c"], &scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.vif >= 1.0 - 1e-12);
            prop_assert!((x.vif - y.vif).abs() <= 1e-8 * x.vif);
        }
    }
}

#[test]
fn ann_never_reports_false_neighbors() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let vectors: Vec<Vec<f32>> = (0..2000)
        .map(|i| {
            let base = (i % 20) as f32;
            (0..16)
                .map(|d| (base * (d as f32 + 1.0)).sin() + rng.gen_range(-0.3..0.3))
                .collect()
        })
        .collect();
    let ids = (0..vectors.len()).map(|i| format!("v{i}")).collect();
    let store = EmbeddingStore::from_vectors(ids, vectors).unwrap();
    let index = AnnIndex::build(&store, AnnConfig::default()).unwrap();
    for q in (0..store.len()).step_by(97) {
        let id = store.id(q);
        let exact: BTreeSet<usize> = exact_neighbors(&store, id, 0.9).unwrap().rows().collect();
        let approx = index.neighbors_above(id, 0.9, 8).unwrap();
        for n in &approx.neighbors {
            assert!(exact.contains(&n.row), "row {} is not a true neighbor of {q}", n.row);
            assert!(n.similarity >= 0.9);
        }
    }
}
