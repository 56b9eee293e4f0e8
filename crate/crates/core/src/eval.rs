//! Explanation fidelity across sparsity levels, with CSV and SVG output.

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use crate::bottleneck::{complement, select_topk_nodes};
use crate::error::{PgibError, Result};
use crate::graph::Graph;
use crate::model::{predict, Model};

/// Sparsity grid used when none is given.
pub const DEFAULT_KS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Whether the prediction on the full graph, on the top-k subgraph and on
/// its complement matches the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Correctness {
    pub full: bool,
    pub subgraph: bool,
    pub complement: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityRow {
    pub k: f64,
    pub f_minus: f64,
    pub f_plus: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityReport {
    pub dataset: String,
    pub run: String,
    pub rows: Vec<FidelityRow>,
}

/// `F- = mean(1[y = y_full] - 1[y = y_k])`, `F+ = mean(1[y = y_full] - 1[y = y_rest])`.
/// Sums are taken over integers, so the result is exact up to the final
/// division.
pub fn fidelity_from_correctness(items: &[Correctness]) -> Result<(f64, f64)> {
    if items.is_empty() {
        return Err(PgibError::Argument("fidelity of an empty graph list".into()));
    }
    let (mut minus, mut plus) = (0i64, 0i64);
    for c in items {
        let full = i64::from(c.full);
        minus += full - i64::from(c.subgraph);
        plus += full - i64::from(c.complement);
    }
    let n = items.len() as f64;
    Ok((minus as f64 / n, plus as f64 / n))
}

/// Correctness of the three predictions for one graph. The top-k nodes by
/// keep probability form an induced subgraph with the original features; an
/// empty complement counts as misclassified.
pub fn graph_correctness(model: &Model, graph: &Graph, k: f64) -> Result<Correctness> {
    let full = predict(model, graph)?;
    let selected = select_topk_nodes(&full.importance, k)?;
    let rest = complement(graph.node_count, &selected);
    let sub = graph
        .induced_subgraph(&selected)
        .ok_or_else(|| PgibError::EmptyGraph(format!("top-k subgraph of {}", graph.graph_id)))?;
    let subgraph = predict(model, &sub)?.class == graph.label;
    let complement = match graph.induced_subgraph(&rest) {
        Some(g) => predict(model, &g)?.class == graph.label,
        None => false,
    };
    Ok(Correctness {
        full: full.class == graph.label,
        subgraph,
        complement,
    })
}

fn require_trained(model: &Model) -> Result<()> {
    if model.trained_epochs == 0 {
        return Err(PgibError::Untrained);
    }
    Ok(())
}

/// `(F-, F+)` over `graphs` at sparsity `k`.
pub fn fidelity_scores(model: &Model, graphs: &[&Graph], k: f64) -> Result<(f64, f64)> {
    require_trained(model)?;
    let items = graphs.iter().map(|g| graph_correctness(model, g, k)).collect::<Result<Vec<_>>>()?;
    fidelity_from_correctness(&items)
}

/// Fidelity at every `k`, rows sorted by `k`. Duplicate values are kept once.
pub fn sparsity_sweep(model: &Model, graphs: &[&Graph], ks: &[f64], dataset: &str, run: &str) -> Result<FidelityReport> {
    require_trained(model)?;
    let mut ks = ks.to_vec();
    if ks.is_empty() {
        return Err(PgibError::Argument("no sparsity values given".into()));
    }
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let mut rows = Vec::with_capacity(ks.len());
    for k in ks {
        let (f_minus, f_plus) = fidelity_scores(model, graphs, k)?;
        rows.push(FidelityRow {
            k,
            f_minus,
            f_plus,
            n: graphs.len(),
        });
    }
    Ok(FidelityReport {
        dataset: dataset.to_string(),
        run: run.to_string(),
        rows,
    })
}

impl FidelityReport {
    /// `k,f_minus,f_plus,n` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,f_minus,f_plus,n\n");
        for r in &self.rows {
            writeln!(s, "{},{:.6},{:.6},{}", r.k, r.f_minus, r.f_plus, r.n).expect("string write");
        }
        s
    }

    /// Writes `fidelity.csv`, `fidelity_minus.svg` and `fidelity_plus.svg`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("fidelity.csv"), self.to_csv())?;
        let title = format!("{} {}", self.dataset, self.run);
        let minus: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.k, r.f_minus)).collect();
        let plus: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.k, r.f_plus)).collect();
        line_plot(&dir.join("fidelity_minus.svg"), &format!("F- {title}"), "sparsity k", "F-", &[("F-", &minus)])?;
        line_plot(&dir.join("fidelity_plus.svg"), &format!("F+ {title}"), "sparsity k", "F+", &[("F+", &plus)])?;
        Ok(())
    }
}

fn plot_error(e: impl std::fmt::Display) -> PgibError {
    PgibError::Io(std::io::Error::other(e.to_string()))
}

/// Line plot of one or more labeled series into an SVG file.
pub fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[(&str, &[(f64, f64)])]) -> Result<()> {
    let points = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(PgibError::Argument("nothing to plot".into()));
    }
    let pad = |a: f64, b: f64| if b - a > 1e-12 { (b - a) * 0.05 } else { 0.5 };
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_error)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_error)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_error)?;
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
    }
    root.present().map_err(plot_error)?;
    Ok(())
}
