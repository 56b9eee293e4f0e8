//! Monte Carlo tree search over connected node subsets and projection of
//! prototypes onto training subgraphs.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{similarity_from_sq, squared_distance, PrototypeSet};
use crate::encoder::{readout_cached, Readout};
use crate::error::{PgibError, Result};
use crate::graph::Graph;

/// Projection inspects at most this many same-class graphs per prototype.
pub const PROJECTION_CANDIDATES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct MctsConfig {
    pub iterations: usize,
    pub min_nodes: usize,
    pub expansion_width: usize,
    pub exploration: f64,
    pub rollout_limit: usize,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            min_nodes: 5,
            expansion_width: 12,
            exploration: 10.0,
            rollout_limit: 1,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.min_nodes == 0 || self.expansion_width == 0 {
            return Err(PgibError::Argument(format!(
                "search needs iterations, min_nodes and expansion_width >= 1 (got {}, {}, {})",
                self.iterations, self.min_nodes, self.expansion_width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub prototype: usize,
    pub graph_id: String,
    pub nodes: Vec<usize>,
    pub distance: f64,
}

struct TreeNode {
    nodes: Vec<usize>,
    reward: f64,
    children: Option<Vec<usize>>,
    visits: usize,
    total: f64,
}

/// Largest connected component of `keep` (sorted), ties to the component
/// holding the smallest node.
fn largest_component(adj: &[Vec<usize>], keep: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; adj.len()];
    keep.iter().for_each(|&u| inside[u] = true);
    let mut seen = vec![false; adj.len()];
    let mut best: Vec<usize> = Vec::new();
    for &start in keep {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(u) = stack.pop() {
            comp.push(u);
            for &v in &adj[u] {
                if inside[v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// States reachable by removing one of the `width` lowest-degree nodes and
/// keeping the largest remaining component. Duplicates and states below
/// `min_nodes` are dropped.
fn successors(adj: &[Vec<usize>], nodes: &[usize], width: usize, min_nodes: usize) -> Vec<Vec<usize>> {
    let mut inside = vec![false; adj.len()];
    nodes.iter().for_each(|&u| inside[u] = true);
    let mut by_degree: Vec<(usize, usize)> = nodes
        .iter()
        .map(|&u| (adj[u].iter().filter(|&&v| inside[v]).count(), u))
        .collect();
    by_degree.sort_unstable();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &(_, drop) in by_degree.iter().take(width) {
        let rest: Vec<usize> = nodes.iter().copied().filter(|&u| u != drop).collect();
        let child = largest_component(adj, &rest);
        if child.len() >= min_nodes && !out.contains(&child) {
            out.push(child);
        }
    }
    out
}

/// Searches connected node subsets of `graph` for the one whose embedding
/// is most similar to `target`. Each connected component is searched from
/// its own root. Returns the best visited node set and its Euclidean
/// distance to `target`.
pub fn mcts_search<F>(graph: &Graph, target: ArrayView1<f64>, mut embed_fn: F, cfg: &MctsConfig) -> Result<(Vec<usize>, f64)>
where
    F: FnMut(&[usize]) -> Result<Array1<f64>>,
{
    cfg.validate()?;
    if graph.node_count == 0 {
        return Err(PgibError::EmptyGraph(format!("search over graph {}", graph.graph_id)));
    }
    let adj = graph.adjacency_list();
    let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut score = |nodes: &[usize]| -> Result<f64> {
        if let Some(&d2) = memo.get(nodes) {
            return Ok(d2);
        }
        let z = embed_fn(nodes)?;
        if z.len() != target.len() {
            return Err(PgibError::Shape(format!("candidate dim {} vs target dim {}", z.len(), target.len())));
        }
        let d2 = squared_distance(z.view(), target);
        memo.insert(nodes.to_vec(), d2);
        Ok(d2)
    };

    let mut best: Option<(Vec<usize>, f64)> = None;
    let consider = |nodes: &[usize], d2: f64, best: &mut Option<(Vec<usize>, f64)>| {
        if best.as_ref().is_none_or(|(_, b)| d2 < *b) {
            *best = Some((nodes.to_vec(), d2));
        }
    };

    for root_nodes in graph.connected_components() {
        let root_d2 = score(&root_nodes)?;
        consider(&root_nodes, root_d2, &mut best);
        let mut tree = vec![TreeNode {
            nodes: root_nodes,
            reward: similarity_from_sq(root_d2),
            children: None,
            visits: 0,
            total: 0.0,
        }];
        for _ in 0..cfg.iterations {
            let mut path = vec![0];
            let mut cur = 0;
            while let Some(children) = &tree[cur].children {
                if children.is_empty() {
                    break;
                }
                let parent_visits = tree[cur].visits.max(1) as f64;
                let pick = children.iter().copied().find(|&c| tree[c].visits == 0).unwrap_or_else(|| {
                    let ucb = |c: usize| {
                        let n = &tree[c];
                        n.total / n.visits as f64 + cfg.exploration * (parent_visits.ln() / n.visits as f64).sqrt()
                    };
                    children
                        .iter()
                        .copied()
                        .fold(None, |acc: Option<(usize, f64)>, c| {
                            let u = ucb(c);
                            match acc {
                                Some((_, bu)) if bu >= u => acc,
                                _ => Some((c, u)),
                            }
                        })
                        .map(|(c, _)| c)
                        .expect("nonempty children")
                });
                path.push(pick);
                cur = pick;
                if tree[cur].visits == 0 {
                    break;
                }
            }
            if tree[cur].children.is_none() {
                let mut kids = Vec::new();
                if tree[cur].nodes.len() > cfg.min_nodes {
                    for child in successors(&adj, &tree[cur].nodes, cfg.expansion_width, cfg.min_nodes) {
                        let d2 = score(&child)?;
                        consider(&child, d2, &mut best);
                        kids.push(tree.len());
                        tree.push(TreeNode {
                            nodes: child,
                            reward: similarity_from_sq(d2),
                            children: None,
                            visits: 0,
                            total: 0.0,
                        });
                    }
                }
                tree[cur].children = Some(kids);
            }
            let value = rollout_value(&tree, cur, cfg.rollout_limit);
            for &n in &path {
                tree[n].visits += 1;
                tree[n].total += value;
            }
        }
    }
    let (nodes, d2) = best.expect("at least one component");
    Ok((nodes, d2.sqrt()))
}

/// Value backed up from `node`: its own reward, or the best reward found
/// within `limit` levels of already expanded descendants.
fn rollout_value(tree: &[TreeNode], node: usize, limit: usize) -> f64 {
    let mut best = tree[node].reward;
    if limit > 0 {
        if let Some(children) = &tree[node].children {
            for &c in children {
                best = best.max(rollout_value(tree, c, limit - 1));
            }
        }
    }
    best
}

fn readout_rows(h: &Array2<f64>, rows: &[usize], mode: Readout) -> Array1<f64> {
    let groups = [rows.to_vec()];
    readout_cached(h, &groups, mode).0.row(0).to_owned()
}

/// Replaces every active prototype with the embedding of the closest
/// connected subgraph found among its class's training graphs.
///
/// `node_embed` gives the per-node embeddings of a whole graph; candidate
/// subgraph embeddings are readouts of its rows. Only the
/// [`PROJECTION_CANDIDATES`] graphs nearest by full-graph embedding are
/// searched.
pub fn project_prototypes<F>(
    protos: &mut PrototypeSet,
    train: &[&Graph],
    node_embed: F,
    mode: Readout,
    cfg: &MctsConfig,
) -> Result<Vec<ProjectionResult>>
where
    F: Fn(&Graph) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    let embedded: Vec<Array2<f64>> = train.iter().map(|g| node_embed(g)).collect::<Result<_>>()?;
    let full: Vec<Array1<f64>> = embedded
        .iter()
        .map(|h| readout_rows(h, &(0..h.nrows()).collect::<Vec<_>>(), mode))
        .collect();
    let mut results = Vec::new();
    for m in protos.active_indices() {
        let class = protos.class_of[m];
        let target = protos.vectors.row(m).to_owned();
        let mut pool: Vec<(usize, f64)> = (0..train.len())
            .filter(|&g| train[g].label == class)
            .map(|g| (g, squared_distance(full[g].view(), target.view())))
            .collect();
        if pool.is_empty() {
            return Err(PgibError::Argument(format!("no training graph of class {class} to project prototype {m} onto")));
        }
        pool.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        pool.truncate(PROJECTION_CANDIDATES);
        let mut best: Option<(usize, Vec<usize>, f64)> = None;
        for &(g, _) in &pool {
            let h = &embedded[g];
            let (nodes, dist) = mcts_search(train[g], target.view(), |rows| Ok(readout_rows(h, rows, mode)), cfg)?;
            if best.as_ref().is_none_or(|b| dist < b.2) {
                best = Some((g, nodes, dist));
            }
        }
        let (g, nodes, distance) = best.expect("nonempty pool");
        protos.vectors.row_mut(m).assign(&readout_rows(&embedded[g], &nodes, mode));
        results.push(ProjectionResult {
            prototype: m,
            graph_id: train[g].graph_id.clone(),
            nodes,
            distance,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn sum_embed(features: &Array2<f64>) -> impl Fn(&[usize]) -> Result<Array1<f64>> + '_ {
        move |rows| Ok(readout_rows(features, rows, Readout::Sum))
    }

    fn random_connected(n: usize, extra: usize, rng: &mut RngStream) -> Graph {
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
        for _ in 0..extra {
            let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
            edges.push((u, v));
        }
        let feats = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        Graph::new("r", n, edges, feats, 0).unwrap()
    }

    /// Every connected node subset of size >= `min_size`, by brute force.
    fn connected_subsets(g: &Graph, min_size: usize) -> Vec<Vec<usize>> {
        let adj = g.adjacency_list();
        (1u32..(1 << g.node_count))
            .map(|mask| (0..g.node_count).filter(|&i| mask >> i & 1 == 1).collect::<Vec<_>>())
            .filter(|s| s.len() >= min_size && largest_component(&adj, s).len() == s.len())
            .collect()
    }

    #[test]
    fn small_graph_only_candidate_is_itself() {
        let mut rng = RngStream::new(0);
        let g = random_connected(5, 2, &mut rng);
        let target = Array1::from_elem(3, 9.0);
        let (nodes, _) = mcts_search(&g, target.view(), sum_embed(&g.features), &MctsConfig::default()).unwrap();
        assert_eq!(nodes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn single_iteration_sees_root_and_children() {
        let mut rng = RngStream::new(1);
        let g = random_connected(9, 3, &mut rng);
        let target = Array1::from_elem(3, 0.0);
        let cfg = MctsConfig {
            iterations: 1,
            ..MctsConfig::default()
        };
        let (nodes, dist) = mcts_search(&g, target.view(), sum_embed(&g.features), &cfg).unwrap();
        let adj = g.adjacency_list();
        let root: Vec<usize> = (0..9).collect();
        let mut candidates = vec![root.clone()];
        candidates.extend(successors(&adj, &root, cfg.expansion_width, cfg.min_nodes));
        let d = |s: &[usize]| squared_distance(readout_rows(&g.features, s, Readout::Sum).view(), target.view()).sqrt();
        let best = candidates.iter().map(|s| d(s)).fold(f64::INFINITY, f64::min);
        assert_eq!(dist, best);
        assert!(candidates.contains(&nodes));
    }

    #[test]
    fn deterministic() {
        let mut rng = RngStream::new(2);
        let g = random_connected(12, 4, &mut rng);
        let target = Array1::from_elem(3, 0.3);
        let a = mcts_search(&g, target.view(), sum_embed(&g.features), &MctsConfig::default()).unwrap();
        let b = mcts_search(&g, target.view(), sum_embed(&g.features), &MctsConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disconnected_components_are_searched_separately() {
        let feats = Array2::from_shape_vec((4, 1), vec![1.0, 1.0, 5.0, 5.0]).unwrap();
        let g = Graph::new("two", 4, [(0, 1), (2, 3)], feats.clone(), 0).unwrap();
        let cfg = MctsConfig {
            min_nodes: 1,
            ..MctsConfig::default()
        };
        let target = Array1::from_elem(1, 10.0);
        let (nodes, dist) = mcts_search(&g, target.view(), sum_embed(&feats), &cfg).unwrap();
        assert_eq!((nodes, dist), (vec![2, 3], 0.0));
    }

    #[test]
    fn near_optimal_against_exhaustive_enumeration() {
        let mut rng = RngStream::new(7);
        let cfg = MctsConfig::default();
        let mut good = 0;
        for _ in 0..50 {
            let n = rng.random_range(5..=8);
            let g = random_connected(n, rng.random_range(0..4), &mut rng);
            let target = Array1::from_shape_simple_fn(3, || rng.random_range(-1.5..1.5));
            let embed = |s: &[usize]| readout_rows(&g.features, s, Readout::Mean);
            let optimum = connected_subsets(&g, cfg.min_nodes.min(n))
                .iter()
                .map(|s| squared_distance(embed(s).view(), target.view()).sqrt())
                .fold(f64::INFINITY, f64::min);
            let (_, dist) = mcts_search(&g, target.view(), |s| Ok(embed(s)), &cfg).unwrap();
            assert!(dist >= optimum - 1e-12);
            if dist <= 1.05 * optimum {
                good += 1;
            }
        }
        assert!(good >= 40, "{good}/50 within 5% of the optimum");
    }

    #[test]
    fn recovers_planted_motif() {
        let mut rng = RngStream::new(13);
        let mut hits = 0;
        for _ in 0..50 {
            // 6-node motif: a ring with one chord, then 3 pendant or chain nodes
            let mut edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)];
            for v in 6..9 {
                let anchor = if v == 6 { rng.random_range(0..6) } else { rng.random_range(0..v) };
                edges.push((anchor, v));
            }
            let mut perm: Vec<usize> = (0..9).collect();
            perm.shuffle(&mut rng);
            let edges: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            let feats = Array2::from_shape_simple_fn((9, 4), || rng.random_range(0.0..1.0));
            let g = Graph::new("m", 9, edges, feats.clone(), 0).unwrap();
            let motif: Vec<usize> = (0..6).map(|i| perm[i]).collect();
            let target = readout_rows(&feats, &motif, Readout::Sum);
            let (nodes, _) = mcts_search(&g, target.view(), sum_embed(&feats), &MctsConfig::default()).unwrap();
            if motif.iter().all(|m| nodes.contains(m)) {
                hits += 1;
            }
        }
        assert!(hits >= 40, "{hits}/50 recovered the motif");
    }

    #[test]
    fn projection_hits_exact_graph() {
        let mut rng = RngStream::new(21);
        let graphs: Vec<Graph> = (0..4)
            .map(|i| {
                let mut g = random_connected(7, 2, &mut rng);
                g.label = i % 2;
                g.graph_id = format!("g{i}");
                g
            })
            .collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let mut protos = PrototypeSet::init(2, 2, 3, &mut rng).unwrap();
        let full = readout_rows(&graphs[2].features, &(0..7).collect::<Vec<_>>(), Readout::Max);
        protos.vectors.row_mut(1).assign(&full);
        let results = project_prototypes(&mut protos, &refs, |g| Ok(g.features.clone()), Readout::Max, &MctsConfig::default()).unwrap();
        assert_eq!(results.len(), 4);
        assert_eq!(results[1].graph_id, "g2");
        assert_eq!(results[1].distance, 0.0);
        assert_eq!(protos.vectors.row(1), full.view());
        for r in &results {
            let g = graphs.iter().find(|g| g.graph_id == r.graph_id).unwrap();
            assert_eq!(g.label, protos.class_of[r.prototype]);
            let sub = readout_rows(&g.features, &r.nodes, Readout::Max);
            assert_eq!(protos.vectors.row(r.prototype), sub.view());
        }
    }
}
