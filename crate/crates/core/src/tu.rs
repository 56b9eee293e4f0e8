//! Reader and writer for the TU graph-kernel benchmark text format.
//!
//! A dataset `DS` lives in one directory as `DS_A.txt` (1-indexed `i, j`
//! edge rows over the global node numbering), `DS_graph_indicator.txt`
//! (node to graph, 1-indexed), `DS_graph_labels.txt`, and optionally
//! `DS_node_labels.txt`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{PgibError, Result};
use crate::graph::{Graph, GraphDataset};

fn file_path(root: &Path, name: &str, suffix: &str) -> PathBuf {
    root.join(format!("{name}_{suffix}.txt"))
}

fn read_required(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(PgibError::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> PgibError {
    PgibError::Format {
        file: path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
        line,
        message: message.into(),
    }
}

/// Parses non-empty lines of one integer each. Yields `(line_number, value)`.
fn parse_column(path: &Path, text: &str) -> Result<Vec<(usize, i64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let field = l.split(',').next().unwrap_or("").trim();
            field
                .parse::<i64>()
                .map(|v| (i + 1, v))
                .map_err(|_| format_err(path, i + 1, format!("expected an integer, found {l:?}")))
        })
        .collect()
}

pub fn parse_tu_dataset(root: impl AsRef<Path>, name: &str) -> Result<GraphDataset> {
    let root = root.as_ref();
    let a_path = file_path(root, name, "A");
    let ind_path = file_path(root, name, "graph_indicator");
    let lab_path = file_path(root, name, "graph_labels");
    let nl_path = file_path(root, name, "node_labels");

    let a_text = read_required(&a_path)?;
    let ind_text = read_required(&ind_path)?;
    let lab_text = read_required(&lab_path)?;

    let indicator = parse_column(&ind_path, &ind_text)?;
    let raw_labels = parse_column(&lab_path, &lab_text)?;
    let n_graphs = raw_labels.len();
    if n_graphs == 0 {
        return Err(format_err(&lab_path, 1, "no graph labels"));
    }

    // node (0-based global) -> graph (0-based)
    let mut node_graph = Vec::with_capacity(indicator.len());
    for &(line, g) in &indicator {
        if g < 1 || g as usize > n_graphs {
            return Err(format_err(&ind_path, line, format!("graph id {g} outside 1..={n_graphs}")));
        }
        node_graph.push(g as usize - 1);
    }
    let mut node_counts = vec![0usize; n_graphs];
    let mut local_index = Vec::with_capacity(node_graph.len());
    for &g in &node_graph {
        local_index.push(node_counts[g]);
        node_counts[g] += 1;
    }
    if let Some(empty) = node_counts.iter().position(|&c| c == 0) {
        return Err(format_err(&ind_path, 0, format!("graph {} has no nodes", empty + 1)));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (i, line) in a_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse::<usize>().ok())
                .filter(|&v| v >= 1 && v <= node_graph.len())
                .ok_or_else(|| format_err(&a_path, i + 1, format!("bad edge row {line:?}")))
        };
        let u = parse(parts.next())? - 1;
        let v = parse(parts.next())? - 1;
        if node_graph[u] != node_graph[v] {
            return Err(format_err(
                &a_path,
                i + 1,
                format!(
                    "edge ({}, {}) joins graph {} and graph {}",
                    u + 1,
                    v + 1,
                    node_graph[u] + 1,
                    node_graph[v] + 1
                ),
            ));
        }
        edges[node_graph[u]].push((local_index[u], local_index[v]));
    }

    // Node features: dense one-hot over the sorted distinct node-label values.
    let node_labels = if nl_path.is_file() {
        let text = fs::read_to_string(&nl_path)?;
        let col = parse_column(&nl_path, &text)?;
        if col.len() != node_graph.len() {
            return Err(format_err(
                &nl_path,
                col.len(),
                format!("{} node labels for {} nodes", col.len(), node_graph.len()),
            ));
        }
        Some(col.into_iter().map(|(_, v)| v).collect::<Vec<_>>())
    } else {
        None
    };
    let (feature_dim, code_of): (usize, Box<dyn Fn(usize) -> Option<usize>>) = match &node_labels {
        Some(labels) => {
            let distinct: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            let codes: Vec<usize> = labels
                .iter()
                .map(|v| distinct.binary_search(v).expect("value is in distinct set"))
                .collect();
            (distinct.len(), Box::new(move |node| Some(codes[node])))
        }
        None => (1, Box::new(|_| None)),
    };

    let mut features: Vec<Array2<f64>> = node_counts
        .iter()
        .map(|&c| {
            if node_labels.is_some() {
                Array2::zeros((c, feature_dim))
            } else {
                Array2::ones((c, 1))
            }
        })
        .collect();
    for (node, &g) in node_graph.iter().enumerate() {
        if let Some(code) = code_of(node) {
            features[g][[local_index[node], code]] = 1.0;
        }
    }

    let distinct_labels: Vec<i64> = raw_labels
        .iter()
        .map(|&(_, v)| v)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // A file with a single observed label still yields a binary dataset.
    let num_classes = distinct_labels.len().max(2);

    let graphs = features
        .into_iter()
        .enumerate()
        .map(|(g, feats)| {
            let label = distinct_labels
                .binary_search(&raw_labels[g].1)
                .expect("label is in distinct set");
            Graph::new((g + 1).to_string(), node_counts[g], edges[g].iter().copied(), feats, label)
        })
        .collect::<Result<Vec<_>>>()?;

    GraphDataset::new(name, graphs, num_classes)
}

/// Writes `ds` in TU format under `root`. Edges are written in both
/// directions, sorted by global `(row, col)`. Node labels are written only
/// when every feature row is one-hot.
pub fn write_tu_dataset(ds: &GraphDataset, root: impl AsRef<Path>, name: &str) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let mut a = String::new();
    let mut indicator = String::new();
    let mut labels = String::new();
    let mut node_labels = String::new();
    let mut one_hot = true;
    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        let mut directed: Vec<(usize, usize)> = g.edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        directed.sort_unstable();
        for (u, v) in directed {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).expect("string write");
        }
        for row in g.features.rows() {
            writeln!(indicator, "{}", gi + 1).expect("string write");
            let ones = row.iter().filter(|&&x| x == 1.0).count();
            let zeros = row.iter().filter(|&&x| x == 0.0).count();
            if ones == 1 && ones + zeros == row.len() {
                let code = row.iter().position(|&x| x == 1.0).expect("one-hot row");
                writeln!(node_labels, "{code}").expect("string write");
            } else {
                one_hot = false;
            }
        }
        writeln!(labels, "{}", g.label).expect("string write");
        offset += g.node_count;
    }
    fs::write(file_path(root, name, "A"), a)?;
    fs::write(file_path(root, name, "graph_indicator"), indicator)?;
    fs::write(file_path(root, name, "graph_labels"), labels)?;
    if one_hot {
        fs::write(file_path(root, name, "node_labels"), node_labels)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, suffix: &str, body: &str) {
        fs::write(dir.join(format!("T_{suffix}.txt")), body).unwrap();
    }

    #[test]
    fn smallest_file_set() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", "1, 2\n");
        write(dir.path(), "graph_indicator", "1\n1\n");
        write(dir.path(), "graph_labels", "1\n");
        let ds = parse_tu_dataset(dir.path(), "T").unwrap();
        assert_eq!(ds.len(), 1);
        let g = &ds.graphs[0];
        assert_eq!(g.node_count, 2);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(g.label, 0);
        assert_eq!(g.features, Array2::<f64>::ones((2, 1)));
    }

    #[test]
    fn one_hot_node_labels() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", "1, 2\n2, 1\n");
        write(dir.path(), "graph_indicator", "1\n1\n");
        write(dir.path(), "graph_labels", "1\n");
        write(dir.path(), "node_labels", "0\n2\n");
        let ds = parse_tu_dataset(dir.path(), "T").unwrap();
        assert_eq!(ds.graphs[0].features, array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(ds.graphs[0].edges, vec![(0, 1)]);
        for row in ds.graphs[0].features.rows() {
            assert_eq!(row.sum(), 1.0);
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", "1, 2\n");
        write(dir.path(), "graph_labels", "1\n");
        let err = parse_tu_dataset(dir.path(), "T").unwrap_err();
        assert!(err.to_string().contains("T_graph_indicator.txt"), "{err}");
    }

    #[test]
    fn cross_graph_edge_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", "1, 2\n2, 3\n");
        write(dir.path(), "graph_indicator", "1\n1\n2\n");
        write(dir.path(), "graph_labels", "1\n-1\n");
        let err = parse_tu_dataset(dir.path(), "T").unwrap_err();
        match err {
            PgibError::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn labels_remapped_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "A", "1, 2\n3, 4\n");
        write(dir.path(), "graph_indicator", "1\n1\n2\n2\n3\n");
        write(dir.path(), "graph_labels", "1\n-1\n1\n");
        let ds = parse_tu_dataset(dir.path(), "T").unwrap();
        let labels: Vec<usize> = ds.graphs.iter().map(|g| g.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
        // isolated node kept
        assert_eq!(ds.graphs[2].node_count, 1);
        assert!(ds.graphs[2].edges.is_empty());
    }

    #[test]
    fn write_then_parse_round_trip() {
        let g0 = Graph::new("a", 3, [(0, 1), (1, 2)], array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], 1).unwrap();
        let g1 = Graph::new("b", 2, [(0, 1)], array![[0.0, 1.0], [0.0, 1.0]], 0).unwrap();
        let ds = GraphDataset::new("R", vec![g0, g1], 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_tu_dataset(&ds, dir.path(), "R").unwrap();
        let text = fs::read_to_string(dir.path().join("R_A.txt")).unwrap();
        assert_eq!(text, "1, 2\n2, 1\n2, 3\n3, 2\n4, 5\n5, 4\n");
        let back = parse_tu_dataset(dir.path(), "R").unwrap();
        for (a, b) in ds.graphs.iter().zip(&back.graphs) {
            assert_eq!(a.edges, b.edges);
            assert_eq!(a.label, b.label);
            assert_eq!(a.features, b.features);
        }
    }
}
