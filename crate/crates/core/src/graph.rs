//! Attributed graphs, datasets, train/val/test splits and block-diagonal batches.

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgibError, Result};

/// An undirected attributed graph with a class label.
///
/// Each undirected edge is stored once as `(u, v)` with `u < v`; both
/// directions are materialized when adjacency is built.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub graph_id: String,
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub label: usize,
}

impl Graph {
    /// Builds a graph, canonicalizing the edge list (self-loops dropped,
    /// reciprocal duplicates merged, sorted).
    pub fn new(
        graph_id: impl Into<String>,
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
        label: usize,
    ) -> Result<Self> {
        let graph_id = graph_id.into();
        if node_count == 0 {
            return Err(PgibError::EmptyGraph(graph_id));
        }
        if features.nrows() != node_count {
            return Err(PgibError::Shape(format!(
                "graph {graph_id}: {} feature rows for {node_count} nodes",
                features.nrows()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(PgibError::NonFinite(format!("features of graph {graph_id}")));
        }
        let mut canon = BTreeSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(PgibError::Argument(format!(
                    "graph {graph_id}: edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if u != v {
                canon.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Self {
            graph_id,
            node_count,
            edges: canon.into_iter().collect(),
            features,
            label,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Neighbor lists, sorted ascending.
    pub fn adjacency_list(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Node-induced subgraph over `nodes` (any order; duplicates ignored).
    /// Nodes are renumbered in ascending order of their original index.
    /// Returns `None` for an empty selection.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Option<Graph> {
        let keep: BTreeSet<usize> = nodes.iter().copied().filter(|&n| n < self.node_count).collect();
        if keep.is_empty() {
            return None;
        }
        let mut remap = vec![usize::MAX; self.node_count];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let order: Vec<usize> = keep.into_iter().collect();
        let mut features = Array2::zeros((order.len(), self.feature_dim()));
        for (new, &old) in order.iter().enumerate() {
            features.row_mut(new).assign(&self.features.row(old));
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(u, v)| remap[u] != usize::MAX && remap[v] != usize::MAX)
            .map(|&(u, v)| (remap[u], remap[v]))
            .collect::<Vec<_>>();
        Some(Graph {
            graph_id: self.graph_id.clone(),
            node_count: order.len(),
            edges,
            features,
            label: self.label,
        })
    }

    /// Connected components as sorted node lists, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency_list();
        let mut seen = vec![false; self.node_count];
        let mut comps = Vec::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Dense symmetric 0/1 adjacency matrix.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.node_count, self.node_count));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl GraphDataset {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, num_classes: usize) -> Result<Self> {
        let name = name.into();
        let first = graphs
            .first()
            .ok_or_else(|| PgibError::Argument(format!("dataset {name} has no graphs")))?;
        let feature_dim = first.feature_dim();
        if num_classes < 2 {
            return Err(PgibError::Argument(format!(
                "dataset {name} needs at least 2 classes, got {num_classes}"
            )));
        }
        for g in &graphs {
            if g.feature_dim() != feature_dim {
                return Err(PgibError::Shape(format!(
                    "graph {} has feature_dim {} but dataset uses {feature_dim}",
                    g.graph_id,
                    g.feature_dim()
                )));
            }
            if g.label >= num_classes {
                return Err(PgibError::Argument(format!(
                    "graph {} label {} outside 0..{num_classes}",
                    g.graph_id, g.label
                )));
            }
        }
        Ok(Self {
            name,
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn find(&self, graph_id: &str) -> Option<&Graph> {
        self.graphs.iter().find(|g| g.graph_id == graph_id)
    }

    pub fn select(&self, indices: &[usize]) -> Vec<Graph> {
        indices.iter().map(|&i| self.graphs[i].clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn part(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Uniform 80/10/10 shuffle split. Train gets `floor(0.8 N)`, validation
/// `round(0.1 N)`, test the remainder.
pub fn split_dataset(ds: &GraphDataset, seed: u64) -> Result<SplitSpec> {
    let n = ds.len();
    if n < 10 {
        return Err(PgibError::Argument(format!(
            "cannot split {n} graphs into train/val/test; need at least 10"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_val = (n + 5) / 10;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitSpec {
        train: order,
        val,
        test,
        seed,
    })
}

/// Several graphs packed into one disconnected graph with a block-diagonal
/// adjacency.
#[derive(Clone, Debug)]
pub struct Batch {
    pub features: Array2<f64>,
    /// Undirected edges in batch node indices, each stored once.
    pub edges: Vec<(usize, usize)>,
    /// Graph index (within the batch) of every node.
    pub membership: Vec<usize>,
    pub ranges: Vec<Range<usize>>,
    pub labels: Vec<usize>,
    /// CSR neighbor lists covering both edge directions.
    pub nbr_offsets: Vec<usize>,
    pub nbr_targets: Vec<usize>,
}

impl Batch {
    pub fn node_count(&self) -> usize {
        self.membership.len()
    }

    pub fn graph_count(&self) -> usize {
        self.ranges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.nbr_targets[self.nbr_offsets[node]..self.nbr_offsets[node + 1]]
    }

    /// Dense block-diagonal adjacency, for oracles and small fixtures.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let n = self.node_count();
        let mut a = Array2::zeros((n, n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }
}

pub fn batch_graphs<'a, I>(graphs: I) -> Result<Batch>
where
    I: IntoIterator<Item = &'a Graph>,
{
    let graphs: Vec<&Graph> = graphs.into_iter().collect();
    let first = graphs
        .first()
        .ok_or_else(|| PgibError::Argument("cannot batch zero graphs".into()))?;
    let dim = first.feature_dim();
    let total: usize = graphs.iter().map(|g| g.node_count).sum();
    let mut features = Array2::zeros((total, dim));
    let mut edges = Vec::new();
    let mut membership = Vec::with_capacity(total);
    let mut ranges = Vec::with_capacity(graphs.len());
    let mut labels = Vec::with_capacity(graphs.len());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        if g.feature_dim() != dim {
            return Err(PgibError::Shape(format!(
                "graph {} has feature_dim {}, batch uses {dim}",
                g.graph_id,
                g.feature_dim()
            )));
        }
        features
            .slice_mut(s![offset..offset + g.node_count, ..])
            .assign(&g.features);
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        membership.extend(std::iter::repeat_n(gi, g.node_count));
        ranges.push(offset..offset + g.node_count);
        labels.push(g.label);
        offset += g.node_count;
    }
    let (nbr_offsets, nbr_targets) = csr(total, &edges);
    Ok(Batch {
        features,
        edges,
        membership,
        ranges,
        labels,
        nbr_offsets,
        nbr_targets,
    })
}

fn csr(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut deg = vec![0usize; n + 1];
    for &(u, v) in edges {
        deg[u + 1] += 1;
        deg[v + 1] += 1;
    }
    for i in 0..n {
        deg[i + 1] += deg[i];
    }
    let offsets = deg.clone();
    let mut cursor = deg;
    let mut targets = vec![0; offsets[n]];
    for &(u, v) in edges {
        targets[cursor[u]] = v;
        cursor[u] += 1;
        targets[cursor[v]] = u;
        cursor[v] += 1;
    }
    (offsets, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path(n: usize, label: usize) -> Graph {
        Graph::new(
            format!("p{n}"),
            n,
            (0..n - 1).map(|i| (i, i + 1)),
            Array2::ones((n, 2)),
            label,
        )
        .unwrap()
    }

    #[test]
    fn canonicalizes_edges() {
        let g = Graph::new("g", 3, [(1, 0), (0, 1), (2, 2), (2, 1)], Array2::ones((3, 1)), 0).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(Graph::new("g", 2, [(0, 2)], Array2::ones((2, 1)), 0).is_err());
        assert!(Graph::new("g", 0, [], Array2::ones((0, 1)), 0).is_err());
        let mut feats = Array2::ones((2, 1));
        feats[[1, 0]] = f64::NAN;
        assert!(Graph::new("g", 2, [], feats, 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let graphs: Vec<Graph> = (0..188).map(|i| path(3, i % 2)).collect();
        let ds = GraphDataset::new("x", graphs, 2).unwrap();
        let sp = split_dataset(&ds, 7).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (150, 19, 19));
        let mut all: Vec<usize> = sp.train.iter().chain(&sp.val).chain(&sp.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..188).collect::<Vec<_>>());
        assert_eq!(sp, split_dataset(&ds, 7).unwrap());

        let ds10 = GraphDataset::new("y", (0..10).map(|i| path(2, i % 2)).collect(), 2).unwrap();
        let sp = split_dataset(&ds10, 0).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (8, 1, 1));

        let ds9 = GraphDataset::new("z", (0..9).map(|i| path(2, i % 2)).collect(), 2).unwrap();
        assert!(split_dataset(&ds9, 0).is_err());
    }

    #[test]
    fn split_proportions_within_one_graph() {
        for n in 10..400 {
            let graphs: Vec<Graph> = (0..n).map(|i| path(2, i % 2)).collect();
            let ds = GraphDataset::new("x", graphs, 2).unwrap();
            let sp = split_dataset(&ds, 1).unwrap();
            let nf = n as f64;
            assert!((sp.train.len() as f64 - 0.8 * nf).abs() <= 1.0, "n={n}");
            assert!((sp.val.len() as f64 - 0.1 * nf).abs() <= 1.0, "n={n}");
            assert!((sp.test.len() as f64 - 0.1 * nf).abs() <= 1.0, "n={n}");
        }
    }

    #[test]
    fn batch_offsets() {
        let a = path(3, 0);
        let b = path(2, 1);
        let batch = batch_graphs([&a, &b]).unwrap();
        assert_eq!(batch.node_count(), 5);
        assert_eq!(batch.edges, vec![(0, 1), (1, 2), (3, 4)]);
        assert_eq!(batch.membership, vec![0, 0, 0, 1, 1]);
        assert_eq!(batch.ranges, vec![0..3, 3..5]);
        assert_eq!(batch.neighbors(1), &[0, 2]);
        assert_eq!(batch.neighbors(4), &[3]);
    }

    #[test]
    fn single_graph_batch_is_identity() {
        let a = path(4, 1);
        let batch = batch_graphs([&a]).unwrap();
        assert_eq!(batch.features, a.features);
        assert_eq!(batch.edges, a.edges);
        assert_eq!(batch.dense_adjacency(), a.dense_adjacency());
    }

    #[test]
    fn batch_rejects_mixed_dims() {
        let a = path(3, 0);
        let b = Graph::new("b", 1, [], Array2::ones((1, 3)), 0).unwrap();
        assert!(batch_graphs([&a, &b]).is_err());
    }

    #[test]
    fn batch_adjacency_is_block_diagonal() {
        let graphs: Vec<Graph> = (2..7).map(|n| path(n, 0)).collect();
        let batch = batch_graphs(&graphs).unwrap();
        let adj = batch.dense_adjacency();
        for u in 0..batch.node_count() {
            for v in 0..batch.node_count() {
                if adj[[u, v]] != 0.0 {
                    assert_eq!(batch.membership[u], batch.membership[v]);
                }
            }
        }
    }

    #[test]
    fn induced_subgraph_relabels() {
        let g = Graph::new(
            "g",
            4,
            [(0, 1), (1, 2), (2, 3)],
            array![[0.0], [1.0], [2.0], [3.0]],
            1,
        )
        .unwrap();
        let sub = g.induced_subgraph(&[3, 1, 2]).unwrap();
        assert_eq!(sub.node_count, 3);
        assert_eq!(sub.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(sub.features, array![[1.0], [2.0], [3.0]]);
        assert!(g.induced_subgraph(&[]).is_none());
    }

    #[test]
    fn components() {
        let g = Graph::new("g", 5, [(0, 3), (1, 2)], Array2::ones((5, 1)), 0).unwrap();
        assert_eq!(g.connected_components(), vec![vec![0, 3], vec![1, 2], vec![4]]);
    }
}
