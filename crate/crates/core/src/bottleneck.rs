//! Noise-injection bottleneck: node keep probabilities, relaxed gates,
//! the compression bound, the connectivity regularizer, and top-k node
//! selection.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::{Neighborhood, NodeEmbeddings};
use crate::error::{PgibError, Result};
use crate::params::{he_uniform, ParameterSet};
use crate::relax::{gate_noise, logit_bound, relaxed_gate, sigmoid};

pub const STD_FLOOR: f64 = 1e-6;
pub const A_CLAMP: f64 = 1e-6;
pub const GATE_TEMPERATURE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-dimension batch statistics of node embeddings. Treated as constants
/// by the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl NoiseStats {
    pub fn from_embeddings(h: &Array2<f64>) -> Self {
        let n = h.nrows().max(1) as f64;
        let mean = h.sum_axis(Axis(0)) / n;
        let mut var = Array1::zeros(h.ncols());
        for row in h.rows() {
            let d = &row - &mean;
            var += &(&d * &d);
        }
        let std = (var / n).mapv(|v: f64| v.sqrt().max(STD_FLOOR));
        Self { mean, std }
    }

    /// Population statistics over the rows of several matrices, combined
    /// chunk by chunk so the rows never have to sit in one matrix.
    pub fn from_chunks<'a>(chunks: impl IntoIterator<Item = &'a Array2<f64>>) -> Option<Self> {
        let mut acc: Option<(f64, Array1<f64>, Array1<f64>)> = None;
        for h in chunks {
            if h.nrows() == 0 {
                continue;
            }
            let nb = h.nrows() as f64;
            let mb = h.sum_axis(Axis(0)) / nb;
            let mut m2b = Array1::<f64>::zeros(h.ncols());
            for row in h.rows() {
                let d = &row - &mb;
                m2b += &(&d * &d);
            }
            acc = Some(match acc {
                None => (nb, mb, m2b),
                Some((na, ma, m2a)) => {
                    let n = na + nb;
                    let delta = &mb - &ma;
                    let mean = &ma + &(&delta * (nb / n));
                    let m2 = m2a + m2b + &(&delta * &delta) * (na * nb / n);
                    (n, mean, m2)
                }
            });
        }
        acc.map(|(n, mean, m2)| Self {
            mean,
            std: (m2 / n).mapv(|v| v.sqrt().max(STD_FLOOR)),
        })
    }
}

/// Per-node keep probability `p`, the gate `lambda` actually applied, and
/// the two-column soft assignment `S = [p, 1 - p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeAssignment {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl NodeAssignment {
    pub fn s_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.p.len(), 2), |(i, c)| if c == 0 { self.p[i] } else { 1.0 - self.p[i] })
    }
}

/// Frozen stochastic inputs for one training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraws {
    /// Logistic noise `g1 - g0` per node for the relaxed gate.
    pub gate: Vec<f64>,
    /// Standard normal draws, one row per node.
    pub gauss: Array2<f64>,
}

impl NoiseDraws {
    pub fn sample(nodes: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let gate = gate_noise(nodes, rng);
        let gauss = Array2::from_shape_simple_fn((nodes, dim), || rng.sample(StandardNormal));
        Self { gate, gauss }
    }
}

pub fn init_gate_params(params: &mut ParameterSet, hidden_dim: usize, rng: &mut impl Rng) -> Result<()> {
    params.insert("gate.w1", he_uniform(hidden_dim, hidden_dim, rng))?;
    params.insert("gate.b1", Array2::zeros((1, hidden_dim)))?;
    params.insert("gate.w2", he_uniform(hidden_dim, 1, rng))?;
    params.insert("gate.b2", Array2::zeros((1, 1)))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GateCache {
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
    pub scores: Vec<f64>,
}

/// Gate MLP `affine -> ReLU -> affine`; returns pre-sigmoid scores.
pub fn gate_forward(h: &Array2<f64>, params: &ParameterSet) -> GateCache {
    let mut hidden_pre = h.dot(params.expect("gate.w1"));
    hidden_pre += params.expect("gate.b1");
    let hidden = hidden_pre.mapv(|x| x.max(0.0));
    let mut s = hidden.dot(params.expect("gate.w2"));
    s += params.expect("gate.b2");
    GateCache {
        hidden_pre,
        hidden,
        scores: s.column(0).to_vec(),
    }
}

/// Accumulates gate-MLP gradients and returns the gradient w.r.t. `h`.
pub fn gate_backward(cache: &GateCache, h: &Array2<f64>, params: &ParameterSet, d_scores: &[f64], grads: &mut ParameterSet) -> Array2<f64> {
    let ds = Array2::from_shape_vec((d_scores.len(), 1), d_scores.to_vec()).expect("column");
    *grads.expect_mut("gate.w2") += &cache.hidden.t().dot(&ds);
    grads.expect_mut("gate.b2")[[0, 0]] += d_scores.iter().sum::<f64>();
    let mut d_hidden = ds.dot(&params.expect("gate.w2").t());
    ndarray::Zip::from(&mut d_hidden).and(&cache.hidden_pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    *grads.expect_mut("gate.w1") += &h.t().dot(&d_hidden);
    *grads.expect_mut("gate.b1") += &d_hidden.sum_axis(Axis(0)).insert_axis(Axis(0));
    d_hidden.dot(&params.expect("gate.w1").t())
}

/// Gates from scores. Returns `(p, lambda, dlambda/dscore)`.
///
/// Training applies the Gumbel-sigmoid relaxation with the frozen noise;
/// inference uses `lambda = p`.
pub fn gate_values(scores: &[f64], mode: Mode, noise: Option<&[f64]>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
    match (mode, noise) {
        (Mode::Train, Some(noise)) => {
            let bound = logit_bound();
            let mut lambda = Vec::with_capacity(p.len());
            let mut dl = Vec::with_capacity(p.len());
            for (&s, &n) in scores.iter().zip(noise) {
                let l = relaxed_gate(s, n, GATE_TEMPERATURE);
                lambda.push(l);
                dl.push(if s.abs() < bound {
                    l * (1.0 - l) / GATE_TEMPERATURE
                } else {
                    0.0
                });
            }
            (p, lambda, dl)
        }
        _ => {
            let dl = p.iter().map(|&q| q * (1.0 - q)).collect();
            (p.clone(), p, dl)
        }
    }
}

/// `z_i = lambda_i h_i + (1 - lambda_i) eps_i`. Training draws
/// `eps_i = mu + sigma * xi_i`; inference uses `eps_i = mu`.
pub fn noise_matrix(stats: &NoiseStats, nodes: usize, gauss: Option<&Array2<f64>>) -> Array2<f64> {
    let mut eps = Array2::zeros((nodes, stats.mean.len()));
    for (i, mut row) in eps.rows_mut().into_iter().enumerate() {
        row.assign(&stats.mean);
        if let Some(xi) = gauss {
            row.scaled_add(1.0, &(&stats.std * &xi.row(i)));
        }
    }
    eps
}

pub fn inject_noise(h: &Array2<f64>, lambda: &[f64], eps: &Array2<f64>) -> Array2<f64> {
    let mut z = eps.clone();
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        let l = lambda[i];
        row *= 1.0 - l;
        row.scaled_add(l, &h.row(i));
    }
    z
}

/// Compresses node embeddings. Training mode samples gate and Gaussian
/// noise from `rng`; inference is deterministic.
pub fn compress_nodes(
    h: &NodeEmbeddings,
    params: &ParameterSet,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<(Array2<f64>, NodeAssignment, NoiseStats)> {
    if h.h.nrows() == 0 {
        return Err(PgibError::EmptyGraph("compress_nodes".into()));
    }
    let stats = NoiseStats::from_embeddings(&h.h);
    let cache = gate_forward(&h.h, params);
    let draws = match mode {
        Mode::Train => Some(NoiseDraws::sample(h.h.nrows(), h.h.ncols(), rng)),
        Mode::Infer => None,
    };
    let (p, lambda, _) = gate_values(&cache.scores, mode, draws.as_ref().map(|d| d.gate.as_slice()));
    let eps = noise_matrix(&stats, h.h.nrows(), draws.as_ref().map(|d| &d.gauss));
    let z = inject_noise(&h.h, &lambda, &eps);
    Ok((z, NodeAssignment { p, lambda }, stats))
}

/// Compression bound and its gradient.
#[derive(Clone, Debug)]
pub struct MiBound {
    pub loss: f64,
    pub d_lambda: Vec<f64>,
    pub d_h: Array2<f64>,
}

/// Per graph: `A = sum (1 - lambda_i)^2`, `B_d = sum lambda_i (h_id - mu_d) / sigma_d`,
/// `-0.5 log max(A, 1e-6) + A / 2n + sum_d B_d^2 / (2 n D)`; averaged over graphs.
pub fn mi_upper_bound_with_grad(lambda: &[f64], h: &Array2<f64>, groups: &[Vec<usize>], stats: &NoiseStats) -> Result<MiBound> {
    if groups.is_empty() {
        return Err(PgibError::EmptyGraph("compression bound (no graphs)".into()));
    }
    let d = h.ncols();
    let g_count = groups.len() as f64;
    let mut loss = 0.0;
    let mut d_lambda = vec![0.0; lambda.len()];
    let mut d_h = Array2::zeros(h.dim());
    let inv_std = stats.std.mapv(|s| 1.0 / s);
    for (gi, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            return Err(PgibError::EmptyGraph(format!("compression bound (graph {gi})")));
        }
        let n = rows.len() as f64;
        let a: f64 = rows.iter().map(|&i| (1.0 - lambda[i]).powi(2)).sum();
        let mut b = Array1::<f64>::zeros(d);
        for &i in rows {
            let resid = (&h.row(i) - &stats.mean) * &inv_std;
            b.scaled_add(lambda[i], &resid);
        }
        let a_clamped = a.max(A_CLAMP);
        loss += -0.5 * a_clamped.ln() + a / (2.0 * n) + b.dot(&b) / (2.0 * n * d as f64);

        let d_a = if a >= A_CLAMP { -0.5 / a } else { 0.0 } + 1.0 / (2.0 * n);
        let d_b = &b / (n * d as f64);
        let d_b_scaled = &d_b * &inv_std;
        for &i in rows {
            let resid = (&h.row(i) - &stats.mean) * &inv_std;
            d_lambda[i] += (d_a * -2.0 * (1.0 - lambda[i]) + d_b.dot(&resid)) / g_count;
            d_h.row_mut(i).scaled_add(lambda[i] / g_count, &d_b_scaled);
        }
    }
    Ok(MiBound {
        loss: loss / g_count,
        d_lambda,
        d_h,
    })
}

pub fn mi_upper_bound_loss(assignment: &NodeAssignment, h: &NodeEmbeddings, stats: &NoiseStats) -> Result<f64> {
    let groups = crate::encoder::groups_from_membership(&h.membership)?;
    Ok(mi_upper_bound_with_grad(&assignment.lambda, &h.h, &groups, stats)?.loss)
}

#[derive(Clone, Debug)]
pub struct Connectivity {
    pub loss: f64,
    /// Gradient w.r.t. `S` (rows x 2).
    pub d_s: Array2<f64>,
}

/// `|| Norm(S^T A S) - I_2 ||_F` with L1 row normalization (zero rows stay
/// zero) and its gradient w.r.t. `S`.
pub fn connectivity_with_grad(s: &Array2<f64>, nb: &impl Neighborhood) -> Result<Connectivity> {
    if s.ncols() != 2 || s.nrows() != nb.node_count() {
        return Err(PgibError::Shape(format!(
            "assignment is {:?}, adjacency covers {} nodes",
            s.dim(),
            nb.node_count()
        )));
    }
    // AS: neighbor sums of assignment rows
    let mut a_s = Array2::<f64>::zeros(s.dim());
    for u in 0..s.nrows() {
        for &v in nb.neighbors(u) {
            a_s[[u, 0]] += s[[v, 0]];
            a_s[[u, 1]] += s[[v, 1]];
        }
    }
    let m = s.t().dot(&a_s);
    let mut norm = Array2::<f64>::zeros((2, 2));
    let mut row_sum = [0.0; 2];
    for a in 0..2 {
        row_sum[a] = m[[a, 0]].abs() + m[[a, 1]].abs();
        if row_sum[a] > 0.0 {
            for b in 0..2 {
                norm[[a, b]] = m[[a, b]] / row_sum[a];
            }
        }
    }
    let diff = &norm - &Array2::<f64>::eye(2);
    let loss = diff.mapv(|x| x * x).sum().sqrt();
    let mut d_s = Array2::zeros(s.dim());
    if loss > 0.0 {
        let d_norm = &diff / loss;
        let mut d_m = Array2::<f64>::zeros((2, 2));
        for a in 0..2 {
            if row_sum[a] > 0.0 {
                let proj: f64 = (0..2).map(|c| d_norm[[a, c]] * norm[[a, c]].signum() * norm[[a, c]].abs()).sum();
                for b in 0..2 {
                    // d(m_ab / sum_c |m_ac|) with nonnegative entries
                    d_m[[a, b]] = (d_norm[[a, b]] - proj * m[[a, b]].signum()) / row_sum[a];
                }
            }
        }
        // M = S^T A S with symmetric A: dS = A S (dM + dM^T)^T ... = AS (dM^T + dM)
        let sym = &d_m + &d_m.t();
        d_s = a_s.dot(&sym.t());
    }
    Ok(Connectivity { loss, d_s })
}

pub fn connectivity_loss(s: &Array2<f64>, nb: &impl Neighborhood) -> Result<f64> {
    Ok(connectivity_with_grad(s, nb)?.loss)
}

/// The `ceil(k n)` nodes with largest importance, ties to lower index,
/// returned in ascending index order.
pub fn select_topk_nodes(importance: &[f64], k: f64) -> Result<Vec<usize>> {
    if !(k > 0.0 && k < 1.0) {
        return Err(PgibError::Argument(format!("sparsity k must lie in (0, 1), got {k}")));
    }
    let n = importance.len();
    let take = ((k * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Nodes of `0..n` not in `selected` (which must be sorted).
pub fn complement(n: usize, selected: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| selected.binary_search(i).is_err()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch_graphs, Graph};
    use ndarray::array;

    fn stats(d: usize) -> NoiseStats {
        NoiseStats {
            mean: Array1::zeros(d),
            std: Array1::ones(d),
        }
    }

    #[test]
    fn gate_identities() {
        let h = array![[2.0, 0.0], [1.0, 3.0]];
        let mu = array![0.5, -1.0];
        let st = NoiseStats {
            mean: mu.clone(),
            std: array![1.0, 1.0],
        };
        let eps = noise_matrix(&st, 2, None);
        let z = inject_noise(&h, &[1.0, 0.0], &eps);
        assert_eq!(z.row(0), h.row(0));
        assert_eq!(z.row(1), mu.view());
        let st0 = stats(2);
        let z = inject_noise(&h, &[0.5, 0.5], &noise_matrix(&st0, 2, None));
        assert_eq!(z.row(0), array![1.0, 0.0].view());
    }

    #[test]
    fn s_rows_sum_to_one() {
        let a = NodeAssignment {
            p: vec![0.1, 0.73, 0.999],
            lambda: vec![0.0; 3],
        };
        for row in a.s_matrix().rows() {
            assert_eq!(row[0] + row[1], 1.0);
        }
    }

    #[test]
    fn mi_bound_cases() {
        let h = array![[0.0, 0.0]];
        let r = mi_upper_bound_with_grad(&[0.0], &h, &[vec![0]], &stats(2)).unwrap();
        assert!((r.loss - 0.5).abs() < 1e-15);

        let h = array![[1.0, 2.0], [3.0, -1.0]];
        let r = mi_upper_bound_with_grad(&[1.0, 1.0], &h, &[vec![0, 1]], &stats(2)).unwrap();
        let clamp_term = -0.5 * 1e-6f64.ln();
        assert!((clamp_term - 6.907755278982137).abs() < 1e-12);
        // B = (4, 1): 17 / (2 * 2 * 2)
        assert!((r.loss - (clamp_term + 17.0 / 8.0)).abs() < 1e-12);

        // h == mu: B term vanishes for any lambda
        let h = array![[0.3, 0.3], [0.3, 0.3]];
        let st = NoiseStats {
            mean: array![0.3, 0.3],
            std: array![1.0, 1.0],
        };
        let lam = [0.2, 0.9];
        let a: f64 = lam.iter().map(|l| (1.0 - l) * (1.0 - l)).sum();
        let r = mi_upper_bound_with_grad(&lam, &h, &[vec![0, 1]], &st).unwrap();
        assert!((r.loss - (-0.5 * a.ln() + a / 4.0)).abs() < 1e-14);
    }

    #[test]
    fn connectivity_cases() {
        let g = Graph::new("g", 2, [(0, 1)], Array2::ones((2, 1)), 0).unwrap();
        let b = batch_graphs([&g]).unwrap();
        let s = array![[1.0, 0.0], [1.0, 0.0]];
        assert!((connectivity_loss(&s, &b).unwrap() - 1.0).abs() < 1e-15);

        let g = Graph::new("g", 3, [], Array2::ones((3, 1)), 0).unwrap();
        let b = batch_graphs([&g]).unwrap();
        let s = array![[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]];
        assert!((connectivity_loss(&s, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);

        let g = Graph::new("g", 4, [(0, 1), (2, 3)], Array2::ones((4, 1)), 0).unwrap();
        let b = batch_graphs([&g]).unwrap();
        let s = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        assert_eq!(connectivity_loss(&s, &b).unwrap(), 0.0);

        assert!(connectivity_loss(&array![[1.0, 0.0]], &b).is_err());
    }

    #[test]
    fn topk_selection() {
        assert_eq!(select_topk_nodes(&[0.9, 0.1, 0.8, 0.2], 0.5).unwrap(), vec![0, 2]);
        assert_eq!(select_topk_nodes(&[0.3; 7], 0.999).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(select_topk_nodes(&[0.5; 4], 0.5).unwrap(), vec![0, 1]);
        assert!(select_topk_nodes(&[0.5], 1.0).is_err());
        assert!(select_topk_nodes(&[0.5], 0.0).is_err());
        assert_eq!(complement(4, &[0, 2]), vec![1, 3]);
    }

    #[test]
    fn infer_mode_is_deterministic() {
        let mut params = ParameterSet::new();
        init_gate_params(&mut params, 3, &mut crate::rng::RngStream::new(2)).unwrap();
        let h = NodeEmbeddings {
            h: array![[1.0, 0.5, -0.2], [0.0, 2.0, 1.0]],
            membership: vec![0, 0],
        };
        let mut r1 = crate::rng::RngStream::new(1);
        let mut r2 = crate::rng::RngStream::new(99);
        let a = compress_nodes(&h, &params, &mut r1, Mode::Infer).unwrap();
        let b = compress_nodes(&h, &params, &mut r2, Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.p, a.1.lambda);
        let t = compress_nodes(&h, &params, &mut r1, Mode::Train).unwrap();
        assert!(t.1.lambda.iter().all(|&l| l > 0.0 && l < 1.0));
    }

    #[test]
    fn connectivity_gradient_matches_differences() {
        let g = Graph::new("g", 4, [(0, 1), (1, 2), (2, 3), (0, 3)], Array2::ones((4, 1)), 0).unwrap();
        let b = batch_graphs([&g]).unwrap();
        let p = [0.9, 0.3, 0.6, 0.15];
        let s_of = |p: &[f64]| NodeAssignment { p: p.to_vec(), lambda: p.to_vec() }.s_matrix();
        let r = connectivity_with_grad(&s_of(&p), &b).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let mut up = p;
            up[i] += h;
            let mut dn = p;
            dn[i] -= h;
            let num = (connectivity_loss(&s_of(&up), &b).unwrap() - connectivity_loss(&s_of(&dn), &b).unwrap()) / (2.0 * h);
            let ana = r.d_s[[i, 0]] - r.d_s[[i, 1]];
            assert!(crate::gradcheck::relative_error(ana, num) < 1e-6, "{i}: {ana} vs {num}");
        }
    }

    #[test]
    fn mi_bound_gradient_matches_differences() {
        let h = array![[0.4, -1.2, 0.3], [2.0, 0.1, -0.5], [0.7, 0.7, 1.1], [-0.3, 0.2, 0.9]];
        let st = NoiseStats::from_embeddings(&h);
        let groups = vec![vec![0, 1], vec![2, 3]];
        let lam = [0.2, 0.85, 0.5, 0.61];
        let r = mi_upper_bound_with_grad(&lam, &h, &groups, &st).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            let mut up = lam;
            up[i] += eps;
            let mut dn = lam;
            dn[i] -= eps;
            let num = (mi_upper_bound_with_grad(&up, &h, &groups, &st).unwrap().loss
                - mi_upper_bound_with_grad(&dn, &h, &groups, &st).unwrap().loss)
                / (2.0 * eps);
            assert!(crate::gradcheck::relative_error(r.d_lambda[i], num) < 1e-6);
            for d in 0..3 {
                let mut hu = h.clone();
                hu[[i, d]] += eps;
                let mut hd = h.clone();
                hd[[i, d]] -= eps;
                let num = (mi_upper_bound_with_grad(&lam, &hu, &groups, &st).unwrap().loss
                    - mi_upper_bound_with_grad(&lam, &hd, &groups, &st).unwrap().loss)
                    / (2.0 * eps);
                assert!(crate::gradcheck::relative_error(r.d_h[[i, d]], num) < 1e-6);
            }
        }
    }
}
