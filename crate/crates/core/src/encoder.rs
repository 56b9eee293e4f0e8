//! GIN message passing and graph readout, with reverse-mode gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgibError, Result};
use crate::graph::Batch;
use crate::params::{he_uniform, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    Max,
    Mean,
    Sum,
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::Max => "max",
            Readout::Mean => "mean",
            Readout::Sum => "sum",
        })
    }
}

impl FromStr for Readout {
    type Err = PgibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Readout::Max),
            "mean" => Ok(Readout::Mean),
            "sum" => Ok(Readout::Sum),
            other => Err(PgibError::Argument(format!("unknown readout {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GinConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub epsilon_gin: f64,
    pub readout: Readout,
    /// Scale each layer's node outputs to unit length.
    pub row_norm: bool,
}

impl Default for GinConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden_dim: 32,
            epsilon_gin: 0.0,
            readout: Readout::Max,
            row_norm: true,
        }
    }
}

impl GinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(PgibError::Argument(format!(
                "GIN needs layers >= 1 and hidden_dim >= 1, got {} and {}",
                self.layers, self.hidden_dim
            )));
        }
        Ok(())
    }
}

fn pname(layer: usize, part: &str) -> String {
    format!("gin.{layer}.{part}")
}

pub fn init_gin_params(params: &mut ParameterSet, input_dim: usize, cfg: &GinConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    let d = cfg.hidden_dim;
    for l in 0..cfg.layers {
        let fan_in = if l == 0 { input_dim } else { d };
        params.insert(pname(l, "w1"), he_uniform(fan_in, d, rng))?;
        params.insert(pname(l, "b1"), Array2::zeros((1, d)))?;
        params.insert(pname(l, "w2"), he_uniform(d, d, rng))?;
        params.insert(pname(l, "b2"), Array2::zeros((1, d)))?;
    }
    Ok(())
}

/// Node embeddings of a batch together with each row's graph index.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings {
    pub h: Array2<f64>,
    pub membership: Vec<usize>,
}

/// Neighborhood structure consumed by message passing.
pub trait Neighborhood {
    fn node_count(&self) -> usize;
    fn neighbors(&self, node: usize) -> &[usize];
}

impl Neighborhood for Batch {
    fn node_count(&self) -> usize {
        Batch::node_count(self)
    }

    fn neighbors(&self, node: usize) -> &[usize] {
        Batch::neighbors(self, node)
    }
}

/// `(1 + eps) x_u + sum_{v in N(u)} x_v` for every row.
fn aggregate(nb: &impl Neighborhood, x: ArrayView2<f64>, eps: f64) -> Array2<f64> {
    let mut out = x.to_owned();
    if eps != 0.0 {
        out *= 1.0 + eps;
    }
    for u in 0..nb.node_count() {
        let mut row = out.row_mut(u);
        for &v in nb.neighbors(u) {
            row += &x.row(v);
        }
    }
    out
}

#[derive(Clone, Debug)]
struct LayerCache {
    agg: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    /// Normalized output and row denominators when `row_norm` is on.
    normed: Option<(Array2<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct GinCache {
    layers: Vec<LayerCache>,
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

pub fn gin_forward_cached(
    nb: &impl Neighborhood,
    features: &Array2<f64>,
    params: &ParameterSet,
    cfg: &GinConfig,
) -> Result<(Array2<f64>, GinCache)> {
    let w0 = params
        .get(&pname(0, "w1"))
        .ok_or_else(|| PgibError::Argument("encoder parameters missing".into()))?;
    if w0.nrows() != features.ncols() {
        return Err(PgibError::Shape(format!(
            "batch feature_dim {} but encoder expects {}",
            features.ncols(),
            w0.nrows()
        )));
    }
    if features.nrows() != nb.node_count() {
        return Err(PgibError::Shape(format!(
            "{} feature rows for {} nodes",
            features.nrows(),
            nb.node_count()
        )));
    }
    let mut h = features.clone();
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let agg = aggregate(nb, h.view(), cfg.epsilon_gin);
        let pre = affine(&agg, params.expect(&pname(l, "w1")), params.expect(&pname(l, "b1")));
        let act = pre.mapv(|x| x.max(0.0));
        h = affine(&act, params.expect(&pname(l, "w2")), params.expect(&pname(l, "b2")));
        let normed = if cfg.row_norm {
            let (y, norms) = normalize_rows(&h);
            h = y.clone();
            Some((y, norms))
        } else {
            None
        };
        layers.push(LayerCache { agg, pre, act, normed });
    }
    Ok((h, GinCache { layers }))
}

pub fn gin_forward(batch: &Batch, params: &ParameterSet, cfg: &GinConfig) -> Result<NodeEmbeddings> {
    let (h, _) = gin_forward_cached(batch, &batch.features, params, cfg)?;
    Ok(NodeEmbeddings {
        h,
        membership: batch.membership.clone(),
    })
}

/// Accumulates encoder parameter gradients into `grads` given the
/// gradient of the final embeddings.
pub fn gin_backward(
    nb: &impl Neighborhood,
    cache: &GinCache,
    params: &ParameterSet,
    cfg: &GinConfig,
    d_out: Array2<f64>,
    grads: &mut ParameterSet,
) {
    let mut dh = d_out;
    for l in (0..cfg.layers).rev() {
        let lc = &cache.layers[l];
        if let Some((y, norms)) = &lc.normed {
            dh = normalize_rows_backward(y, norms, &dh);
        }
        let w1 = params.expect(&pname(l, "w1"));
        let w2 = params.expect(&pname(l, "w2"));
        *grads.expect_mut(&pname(l, "w2")) += &lc.act.t().dot(&dh);
        *grads.expect_mut(&pname(l, "b2")) += &dh.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d_pre = dh.dot(&w2.t());
        ndarray::Zip::from(&mut d_pre)
            .and(&lc.pre)
            .for_each(|d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
        *grads.expect_mut(&pname(l, "w1")) += &lc.agg.t().dot(&d_pre);
        *grads.expect_mut(&pname(l, "b1")) += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        if l > 0 {
            let d_agg = d_pre.dot(&w1.t());
            // aggregation is symmetric: its adjoint is itself
            dh = aggregate(nb, d_agg.view(), cfg.epsilon_gin);
        }
    }
}

/// Smoothing inside the row norm, so zero rows stay finite.
pub const ROW_NORM_EPS: f64 = 1e-6;

/// Scales every row to (almost) unit length: `x / sqrt(|x|^2 + ROW_NORM_EPS)`.
/// Returns the scaled rows and the denominators.
pub fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let n = (row.dot(&row) + ROW_NORM_EPS).sqrt();
        row /= n;
        norms.push(n);
    }
    (out, norms)
}

/// Adjoint of [`normalize_rows`] given its output and denominators.
pub fn normalize_rows_backward(y: &Array2<f64>, norms: &[f64], d_y: &Array2<f64>) -> Array2<f64> {
    let mut d_x = d_y.clone();
    for ((mut dx, yr), &n) in d_x.rows_mut().into_iter().zip(y.rows()).zip(norms) {
        let proj = yr.dot(&dx);
        dx.scaled_add(-proj, &yr);
        dx /= n;
    }
    d_x
}

/// Row groups per graph index. Errors when some graph in `0..=max` has no rows.
pub fn groups_from_membership(membership: &[usize]) -> Result<Vec<Vec<usize>>> {
    let count = membership.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); count];
    for (row, &g) in membership.iter().enumerate() {
        groups[g].push(row);
    }
    if let Some(empty) = groups.iter().position(Vec::is_empty) {
        return Err(PgibError::EmptyGraph(format!("readout (graph {empty} of the batch)")));
    }
    Ok(groups)
}

#[derive(Clone, Debug)]
pub struct ReadoutCache {
    mode: Readout,
    rows: usize,
    groups: Vec<Vec<usize>>,
    /// For max pooling: winning row per (graph, dim).
    argmax: Option<Array2<usize>>,
}

pub fn readout_cached(z: &Array2<f64>, groups: &[Vec<usize>], mode: Readout) -> (Array2<f64>, ReadoutCache) {
    let d = z.ncols();
    let mut out = Array2::zeros((groups.len(), d));
    let mut argmax = None;
    match mode {
        Readout::Sum | Readout::Mean => {
            for (g, rows) in groups.iter().enumerate() {
                let mut acc = out.row_mut(g);
                for &r in rows {
                    acc += &z.row(r);
                }
                if mode == Readout::Mean {
                    acc /= rows.len() as f64;
                }
            }
        }
        Readout::Max => {
            let mut arg = Array2::zeros((groups.len(), d));
            for (g, rows) in groups.iter().enumerate() {
                for k in 0..d {
                    let mut best = rows[0];
                    for &r in &rows[1..] {
                        if z[[r, k]] > z[[best, k]] {
                            best = r;
                        }
                    }
                    out[[g, k]] = z[[best, k]];
                    arg[[g, k]] = best;
                }
            }
            argmax = Some(arg);
        }
    }
    (
        out,
        ReadoutCache {
            mode,
            rows: z.nrows(),
            groups: groups.to_vec(),
            argmax,
        },
    )
}

pub fn readout(z: &Array2<f64>, membership: &[usize], mode: Readout) -> Result<Array2<f64>> {
    if membership.len() != z.nrows() {
        return Err(PgibError::Shape(format!(
            "membership covers {} rows, matrix has {}",
            membership.len(),
            z.nrows()
        )));
    }
    let groups = groups_from_membership(membership)?;
    Ok(readout_cached(z, &groups, mode).0)
}

pub fn readout_backward(cache: &ReadoutCache, d_out: &Array2<f64>) -> Array2<f64> {
    let d = d_out.ncols();
    let mut dz = Array2::zeros((cache.rows, d));
    match cache.mode {
        Readout::Sum | Readout::Mean => {
            for (g, rows) in cache.groups.iter().enumerate() {
                let scale = if cache.mode == Readout::Mean {
                    1.0 / rows.len() as f64
                } else {
                    1.0
                };
                for &r in rows {
                    dz.row_mut(r).scaled_add(scale, &d_out.row(g));
                }
            }
        }
        Readout::Max => {
            let arg = cache.argmax.as_ref().expect("max readout caches argmax");
            for g in 0..cache.groups.len() {
                for k in 0..d {
                    dz[[arg[[g, k]], k]] += d_out[[g, k]];
                }
            }
        }
    }
    dz
}
