//! Synthetic BA-2Motifs dataset: a Barabási–Albert tree with either a house
//! motif (class 0) or a five-node cycle (class 1) attached by a single edge.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PgibError, Result};
use crate::graph::{Graph, GraphDataset};

pub const BASE_NODES: usize = 20;
pub const MOTIF_NODES: usize = 5;
pub const FEATURE_DIM: usize = 10;
pub const FEATURE_VALUE: f64 = 0.1;

pub const HOUSE: usize = 0;
pub const CYCLE: usize = 1;

/// Preferential attachment with one edge per new node, seeded by a single
/// edge between nodes 0 and 1.
fn barabasi_albert_tree(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = vec![(0, 1)];
    // every node appears once per incident edge
    let mut repeated = vec![0, 1];
    for v in 2..n {
        let target = repeated[rng.random_range(0..repeated.len())];
        edges.push((target, v));
        repeated.push(target);
        repeated.push(v);
    }
    edges
}

fn motif_edges(kind: usize, first: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (0..MOTIF_NODES)
        .map(|i| (first + i, first + (i + 1) % MOTIF_NODES))
        .collect();
    if kind == HOUSE {
        // chord 0-3 turns the pentagon into a square with a triangular roof
        edges.push((first, first + 3));
    }
    edges
}

/// Ground-truth motif membership for a generated graph.
pub fn motif_mask(graph: &Graph) -> Vec<bool> {
    (0..graph.node_count).map(|i| i >= BASE_NODES).collect()
}

pub fn generate_ba2motifs(count: usize, seed: u64) -> Result<GraphDataset> {
    if count == 0 || count % 2 == 1 {
        return Err(PgibError::Argument(format!(
            "BA-2Motifs needs a positive even graph count, got {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = BASE_NODES + MOTIF_NODES;
    let graphs = (0..count)
        .map(|i| {
            let label = i % 2;
            let mut edges = barabasi_albert_tree(BASE_NODES, &mut rng);
            edges.extend(motif_edges(label, BASE_NODES));
            let anchor = rng.random_range(0..BASE_NODES);
            let port = BASE_NODES + rng.random_range(0..MOTIF_NODES);
            edges.push((anchor, port));
            let features = Array2::from_elem((n, FEATURE_DIM), FEATURE_VALUE);
            Graph::new(format!("ba{i}"), n, edges, features, label)
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDataset::new("BA-2Motifs", graphs, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn induced_edge_count(g: &Graph) -> usize {
        g.edges
            .iter()
            .filter(|&&(u, v)| u >= BASE_NODES && v >= BASE_NODES)
            .count()
    }

    #[test]
    fn sizes_and_balance() {
        let ds = generate_ba2motifs(1000, 3).unwrap();
        assert_eq!(ds.len(), 1000);
        assert!(ds.graphs.iter().all(|g| g.node_count == 25));
        assert_eq!(ds.graphs.iter().filter(|g| g.label == 0).count(), 500);
        assert_eq!(ds.feature_dim, FEATURE_DIM);
    }

    #[test]
    fn deterministic() {
        let a = generate_ba2motifs(2, 11).unwrap();
        let b = generate_ba2motifs(2, 11).unwrap();
        for (x, y) in a.graphs.iter().zip(&b.graphs) {
            assert_eq!(x.edges, y.edges);
        }
    }

    #[test]
    fn motif_edge_counts() {
        let ds = generate_ba2motifs(40, 5).unwrap();
        for g in &ds.graphs {
            let expected = if g.label == HOUSE { 6 } else { 5 };
            assert_eq!(induced_edge_count(g), expected);
            // tree base + motif + one joining edge
            assert_eq!(g.edges.len(), BASE_NODES - 1 + expected + 1);
            assert_eq!(g.connected_components().len(), 1);
        }
    }

    #[test]
    fn rejects_odd_or_zero() {
        assert!(generate_ba2motifs(0, 0).is_err());
        assert!(generate_ba2motifs(3, 0).is_err());
    }
}
