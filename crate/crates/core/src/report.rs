//! Per-graph reasoning reports: how much each prototype contributes to each
//! class score, with DOT renderings of the input and prototype sources.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::bottleneck::select_topk_nodes;
use crate::error::{PgibError, Result};
use crate::graph::Graph;
use crate::model::{argmax, predict, Model};
use crate::prototypes::ProjectionResult;

/// Pen width of selected nodes and edges in DOT output.
pub const BOLD_PENWIDTH: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrototypeEntry {
    pub prototype: usize,
    pub class: usize,
    /// Source of the last projection, when there was one.
    pub source_graph: Option<String>,
    pub source_nodes: Vec<usize>,
    pub similarity: f64,
    pub weights: Vec<f64>,
    /// `similarity * weights[c]` per class.
    pub points: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReasoningReport {
    pub graph_id: String,
    pub label: usize,
    pub k: f64,
    pub selected_nodes: Vec<usize>,
    pub importance: Vec<f64>,
    pub prototypes: Vec<PrototypeEntry>,
    pub totals: Vec<f64>,
    pub predicted: usize,
}

/// Builds the report for `graph`. Totals are summed over active prototypes
/// in index order, and the predicted class is their argmax.
pub fn reasoning_report(model: &Model, graph: &Graph, projections: &[ProjectionResult], k: f64) -> Result<ReasoningReport> {
    let pred = predict(model, graph)?;
    let selected = select_topk_nodes(&pred.importance, k)?;
    let protos = &model.protos;
    let mut totals = vec![0.0; protos.num_classes()];
    let mut entries = Vec::new();
    for m in protos.active_indices() {
        let weights = protos.omega.row(m).to_vec();
        let similarity = pred.r[m];
        let points: Vec<f64> = weights.iter().map(|w| similarity * w).collect();
        for (t, p) in totals.iter_mut().zip(&points) {
            *t += p;
        }
        let source = projections.iter().find(|p| p.prototype == m);
        entries.push(PrototypeEntry {
            prototype: m,
            class: protos.class_of[m],
            source_graph: source.map(|p| p.graph_id.clone()),
            source_nodes: source.map(|p| p.nodes.clone()).unwrap_or_default(),
            similarity,
            weights,
            points,
        });
    }
    let predicted = argmax(&ndarray::Array1::from(totals.clone()));
    Ok(ReasoningReport {
        graph_id: graph.graph_id.clone(),
        label: graph.label,
        k,
        selected_nodes: selected,
        importance: pred.importance,
        prototypes: entries,
        totals,
        predicted,
    })
}

fn fmt_row(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

impl ReasoningReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "graph {} (label {})", self.graph_id, self.label).unwrap();
        let nodes: Vec<String> = self.selected_nodes.iter().map(usize::to_string).collect();
        writeln!(w, "selected nodes (k = {}): {}", self.k, nodes.join(" ")).unwrap();
        writeln!(w).unwrap();
        writeln!(w, "prototype  class  similarity  weights  points  source").unwrap();
        for e in &self.prototypes {
            let src = match &e.source_graph {
                Some(g) => {
                    let n: Vec<String> = e.source_nodes.iter().map(usize::to_string).collect();
                    format!("{g} nodes {}", n.join(","))
                }
                None => "not projected".to_string(),
            };
            writeln!(
                w,
                "{:>9}  {:>5}  {:>10.4}  {}  {}  {}",
                e.prototype,
                e.class,
                e.similarity,
                fmt_row(&e.weights),
                fmt_row(&e.points),
                src
            )
            .unwrap();
        }
        writeln!(w).unwrap();
        for (c, t) in self.totals.iter().enumerate() {
            writeln!(w, "class {c}: total points {t:.4}").unwrap();
        }
        writeln!(w, "predicted class: {}", self.predicted).unwrap();
        s
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT rendering of `graph` with node labels `index: p` (three decimals).
/// Selected nodes are bold, as are edges whose weaker endpoint is selected,
/// meaning both endpoints are.
pub fn graph_dot(graph: &Graph, importance: &[f64], selected: &[usize]) -> Result<String> {
    if importance.len() != graph.node_count {
        return Err(PgibError::Shape(format!(
            "{} importances for {} nodes",
            importance.len(),
            graph.node_count
        )));
    }
    let mut chosen = vec![false; graph.node_count];
    for &n in selected {
        if n >= graph.node_count {
            return Err(PgibError::Argument(format!("selected node {n} out of range")));
        }
        chosen[n] = true;
    }
    let mut s = String::new();
    writeln!(s, "graph \"{}\" {{", dot_escape(&graph.graph_id)).unwrap();
    writeln!(s, "  node [shape=circle];").unwrap();
    for (i, p) in importance.iter().enumerate() {
        let bold = if chosen[i] {
            format!(", penwidth={BOLD_PENWIDTH}, style=bold")
        } else {
            String::new()
        };
        writeln!(s, "  n{i} [label=\"{i}: {p:.3}\"{bold}];").unwrap();
    }
    for &(u, v) in &graph.edges {
        let bold = if chosen[u] && chosen[v] {
            format!(" [penwidth={BOLD_PENWIDTH}, style=bold]")
        } else {
            String::new()
        };
        writeln!(s, "  n{u} -- n{v}{bold};").unwrap();
    }
    s.push_str("}\n");
    Ok(s)
}

/// Writes `report.txt`, `report.json`, `graph.dot` and one
/// `prototype_<m>.dot` per projected active prototype whose source graph
/// `lookup` can find.
pub fn emit_reasoning_report<'a>(
    model: &Model,
    graph: &Graph,
    projections: &[ProjectionResult],
    lookup: impl Fn(&str) -> Option<&'a Graph>,
    k: f64,
    out_dir: &Path,
) -> Result<ReasoningReport> {
    let report = reasoning_report(model, graph, projections, k)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.txt"), report.to_text())?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    std::fs::write(
        out_dir.join("graph.dot"),
        graph_dot(graph, &report.importance, &report.selected_nodes)?,
    )?;
    for e in &report.prototypes {
        let Some(id) = &e.source_graph else { continue };
        let Some(src) = lookup(id) else { continue };
        // prototype sources are drawn with the projected node set in bold
        let marks: Vec<f64> = (0..src.node_count)
            .map(|i| if e.source_nodes.contains(&i) { 1.0 } else { 0.0 })
            .collect();
        std::fs::write(
            out_dir.join(format!("prototype_{}.dot", e.prototype)),
            graph_dot(src, &marks, &e.source_nodes)?,
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::RngStream;
    use ndarray::Array2;

    fn triangle_tail() -> Graph {
        let mut f = Array2::zeros((4, 2));
        for i in 0..4 {
            f[[i, i % 2]] = 1.0;
        }
        Graph::new("g7", 4, [(0, 1), (1, 2), (0, 2), (2, 3)], f, 1).unwrap()
    }

    fn model() -> Model {
        let mut cfg = ModelConfig::default();
        cfg.gin.hidden_dim = 6;
        cfg.gin.layers = 2;
        cfg.per_class = 2;
        let mut m = Model::init(cfg, 2, 2, &mut RngStream::new(9)).unwrap();
        m.protos.active[3] = false;
        m.protos.omega.row_mut(3).fill(0.0);
        m
    }

    #[test]
    fn totals_match_logits_and_prediction() {
        let m = model();
        let g = triangle_tail();
        let proj = vec![ProjectionResult {
            prototype: 0,
            graph_id: "g7".into(),
            nodes: vec![0, 1, 2],
            distance: 0.5,
        }];
        let rep = reasoning_report(&m, &g, &proj, 0.5).unwrap();
        let pred = predict(&m, &g).unwrap();
        for (t, l) in rep.totals.iter().zip(pred.logits.iter()) {
            assert!((t - l).abs() <= 1e-9, "{t} vs {l}");
        }
        assert_eq!(rep.predicted, pred.class);
        assert_eq!(rep.prototypes.len(), 3);
        assert_eq!(rep.prototypes[0].source_graph.as_deref(), Some("g7"));
        for e in &rep.prototypes {
            for c in 0..2 {
                assert_eq!(e.points[c], e.similarity * e.weights[c]);
            }
        }
        assert_eq!(rep.selected_nodes.len(), 2);
        let text = rep.to_text();
        assert!(text.contains("predicted class"));
        assert!(text.contains("g7 nodes 0,1,2"));
    }

    #[test]
    fn dot_marks_selected_nodes_and_edges() {
        let g = triangle_tail();
        let dot = graph_dot(&g, &[0.9, 0.8, 0.1234, 0.7], &[0, 1, 3]).unwrap();
        assert!(dot.contains("n0 [label=\"0: 0.900\", penwidth=3, style=bold];"));
        assert!(dot.contains("n2 [label=\"2: 0.123\"];"));
        assert!(dot.contains("n0 -- n1 [penwidth=3, style=bold];"));
        assert!(dot.contains("n2 -- n3;"));
        assert!(dot.contains("n1 -- n2;"));
        assert!(graph_dot(&g, &[0.1], &[]).is_err());
        assert!(graph_dot(&g, &[0.0; 4], &[9]).is_err());
    }

    #[test]
    fn emits_all_files() {
        let m = model();
        let g = triangle_tail();
        let proj = vec![ProjectionResult {
            prototype: 2,
            graph_id: "g7".into(),
            nodes: vec![1, 2, 3],
            distance: 0.1,
        }];
        let dir = tempfile::tempdir().unwrap();
        let rep = emit_reasoning_report(&m, &g, &proj, |id| (id == "g7").then_some(&g), 0.5, dir.path()).unwrap();
        for f in ["report.txt", "report.json", "graph.dot", "prototype_2.dot"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(json["predicted"], rep.predicted);
        let proto_dot = std::fs::read_to_string(dir.path().join("prototype_2.dot")).unwrap();
        assert!(proto_dot.contains("n2 -- n3 [penwidth=3, style=bold];"));
    }
}
