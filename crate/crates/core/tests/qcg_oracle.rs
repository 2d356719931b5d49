mod common;

use common::{library_cells, naive_partition, oracle_cells, qcg_agreement, random_instance};
use disk::qcg::{subtree_partition, QuantityCellGraph, Role};
use disk::syntax::Tree;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fifty_parses_agree_with_oracles() {
    let (agree, total) = qcg_agreement(50, 17);
    assert_eq!((agree, total), (50, 50));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_matches_naive_scan(seed in any::<u64>(), f in 1usize..8) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        let tree = Tree::parse(&inst.constituency).unwrap();
        let blocks = subtree_partition(&tree, f);
        prop_assert_eq!(&blocks, &naive_partition(&tree, f));
        let covered: usize = blocks.iter().map(|b| b.len()).sum();
        prop_assert_eq!(covered, inst.text.len());
    }

    #[test]
    fn cells_match_oracle(seed in any::<u64>(), f in 1usize..8) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        prop_assert_eq!(library_cells(&inst, f), oracle_cells(&inst, f));
    }

    #[test]
    fn graph_structure(seed in any::<u64>(), f in 1usize..8) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 0);
        let g = QuantityCellGraph::from_instance(&inst, f).unwrap();
        let n = g.len();
        for i in 0..n {
            prop_assert_eq!(g.adjacency.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(g.adjacency.get(i, j), g.adjacency.get(j, i));
            }
        }
        for j in 0..n {
            let col: f64 = (0..g.alignment.rows).map(|r| g.alignment.get(r, j)).sum();
            prop_assert_eq!(col, 1.0);
        }
        for (j, node) in g.nodes.iter().enumerate() {
            match node.role {
                Role::Quantity => prop_assert!(j < g.m),
                Role::Attribute => prop_assert_eq!(g.adjacency.get(j, node.owner), 1.0),
            }
        }
        let edges = g.m * g.m.saturating_sub(1) / 2 + (n - g.m);
        let total: f64 = g.adjacency.data.iter().sum();
        prop_assert_eq!(total as usize, 2 * edges);
    }
}
