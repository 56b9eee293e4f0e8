//! Prototype layer: similarity scores, the subgraph-prototype losses,
//! merging of redundant prototypes and projection onto training subgraphs.

mod mcts;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgibError, Result};
use crate::params::{he_uniform, unit_uniform_rows, ParameterSet};

pub use mcts::{mcts_search, project_prototypes, MctsConfig, ProjectionResult};

pub const SIM_EPS: f64 = 1e-4;
pub const PAIR_FLOOR: f64 = 1e-12;
pub const DEFAULT_PER_CLASS: usize = 7;

/// Prototype vectors, their classes, activity mask and the prediction
/// weights `omega` (one row per prototype, one column per class).
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub vectors: Array2<f64>,
    pub omega: Array2<f64>,
    pub class_of: Vec<usize>,
    pub active: Vec<bool>,
    pub per_class: usize,
}

impl PrototypeSet {
    /// `per_class` prototypes per class, rows drawn uniformly and L2
    /// normalized; `omega` is 1 for the own class and -0.5 elsewhere.
    pub fn init(num_classes: usize, per_class: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if num_classes < 2 || per_class == 0 || dim == 0 {
            return Err(PgibError::Argument(format!(
                "prototype set needs >= 2 classes and >= 1 prototype per class (got {num_classes} x {per_class}, dim {dim})"
            )));
        }
        let m = num_classes * per_class;
        let class_of: Vec<usize> = (0..m).map(|i| i / per_class).collect();
        Ok(Self {
            vectors: unit_uniform_rows(m, dim, rng),
            omega: Array2::from_shape_fn((m, num_classes), |(i, k)| if class_of[i] == k { 1.0 } else { -0.5 }),
            class_of,
            active: vec![true; m],
            per_class,
        })
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.omega.ncols()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i] && self.class_of[i] == class).collect()
    }

    /// Checks that every class keeps an active prototype and that inactive
    /// rows of `omega` are zero.
    pub fn validate(&self) -> Result<()> {
        for k in 0..self.num_classes() {
            if self.active_of_class(k).is_empty() {
                return Err(PgibError::Argument(format!("class {k} has no active prototype")));
            }
        }
        for i in (0..self.len()).filter(|&i| !self.active[i]) {
            if self.omega.row(i).iter().any(|&w| w != 0.0) {
                return Err(PgibError::Argument(format!("inactive prototype {i} has nonzero weights")));
            }
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(PgibError::NonFinite("prototype vectors".into()));
        }
        Ok(())
    }

    /// Active prototypes grouped by bit-identical vectors, each group
    /// sorted, groups ordered by their first member.
    pub fn duplicate_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in self.active_indices() {
            let row = self.vectors.row(i);
            match groups.iter_mut().find(|g| {
                self.vectors
                    .row(g[0])
                    .iter()
                    .zip(row.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            }) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }
        groups
    }

    /// `logits[k] = sum_m r_m omega[m, k]` over active prototypes, with
    /// `r` given for all `M` prototypes. Prototypes sharing a vector are
    /// combined by summing their weight rows first, so merging a duplicate
    /// leaves the logits bit-identical.
    pub fn logits(&self, r: ArrayView1<f64>, groups: &[Vec<usize>]) -> Array1<f64> {
        let mut out = Array1::zeros(self.num_classes());
        for g in groups {
            let mut w = self.omega.row(g[0]).to_owned();
            for &m in &g[1..] {
                w += &self.omega.row(m);
            }
            out.scaled_add(r[g[0]], &w);
        }
        out
    }
}

/// `log((d^2 + 1) / (d^2 + 1e-4))` for squared distance `d2`.
pub fn similarity_from_sq(d2: f64) -> f64 {
    ((d2 + 1.0) / (d2 + SIM_EPS)).ln()
}

/// Derivative of [`similarity_from_sq`] with respect to `d2`.
pub fn similarity_sq_derivative(d2: f64) -> f64 {
    1.0 / (d2 + 1.0) - 1.0 / (d2 + SIM_EPS)
}

pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn similarity(z_sub: ArrayView1<f64>, z_p: ArrayView1<f64>) -> Result<f64> {
    if z_sub.len() != z_p.len() {
        return Err(PgibError::Shape(format!("embedding dims {} vs {}", z_sub.len(), z_p.len())));
    }
    Ok(similarity_from_sq(squared_distance(z_sub, z_p)))
}

/// Similarity to every prototype, `M` entries; inactive entries are 0.
pub fn similarity_all(z_sub: ArrayView1<f64>, protos: &PrototypeSet) -> Array1<f64> {
    Array1::from_shape_fn(protos.len(), |m| {
        if protos.active[m] {
            similarity_from_sq(squared_distance(z_sub, protos.vectors.row(m)))
        } else {
            0.0
        }
    })
}

/// Similarity to the active prototypes, in index order.
pub fn similarity_vector(z_sub: ArrayView1<f64>, protos: &PrototypeSet) -> Result<Vec<f64>> {
    if z_sub.len() != protos.dim() {
        return Err(PgibError::Shape(format!("embedding dim {} vs prototype dim {}", z_sub.len(), protos.dim())));
    }
    Ok(protos
        .active_indices()
        .into_iter()
        .map(|m| similarity_from_sq(squared_distance(z_sub, protos.vectors.row(m))))
        .collect())
}

pub fn init_phi_params(params: &mut ParameterSet, dim: usize, rng: &mut impl Rng) -> Result<()> {
    params.insert("phi.w", he_uniform(dim, dim, rng))?;
    params.insert("phi.b", Array2::zeros((1, dim)))?;
    Ok(())
}

/// Loss value with gradients for the subgraph embeddings and the prototype
/// vectors; parameter gradients are accumulated by the caller-provided set.
#[derive(Clone, Debug)]
pub struct ProtoLoss {
    pub loss: f64,
    pub d_z: Array2<f64>,
    pub d_vectors: Array2<f64>,
}

/// Most similar active prototype of `class`, ties to the lower index.
pub fn nearest_of_class(z: ArrayView1<f64>, protos: &PrototypeSet, class: usize) -> Result<usize> {
    protos
        .active_of_class(class)
        .into_iter()
        .map(|m| (m, squared_distance(z, protos.vectors.row(m))))
        .fold(None, |best: Option<(usize, f64)>, (m, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((m, d)),
        })
        .map(|(m, _)| m)
        .ok_or_else(|| PgibError::Argument(format!("class {class} has no active prototype")))
}

fn check_batch(z_sub: &Array2<f64>, labels: &[usize], protos: &PrototypeSet) -> Result<()> {
    if z_sub.nrows() != labels.len() || z_sub.ncols() != protos.dim() {
        return Err(PgibError::Shape(format!(
            "{} embeddings of dim {} with {} labels, prototypes of dim {}",
            z_sub.nrows(),
            z_sub.ncols(),
            labels.len(),
            protos.dim()
        )));
    }
    if z_sub.nrows() == 0 {
        return Err(PgibError::Argument("empty batch".into()));
    }
    Ok(())
}

/// `0.5 || phi(z_sub) - p* ||^2` averaged over the batch, where `p*` is the
/// nearest active prototype of the true class. Accumulates `phi.*`
/// gradients into `grads`.
pub fn variational_mi_with_grad(
    z_sub: &Array2<f64>,
    labels: &[usize],
    protos: &PrototypeSet,
    params: &ParameterSet,
    grads: &mut ParameterSet,
) -> Result<ProtoLoss> {
    check_batch(z_sub, labels, protos)?;
    let n = z_sub.nrows() as f64;
    let mut pred = z_sub.dot(params.expect("phi.w"));
    pred += params.expect("phi.b");
    let mut resid = pred;
    let mut d_vectors = Array2::zeros(protos.vectors.dim());
    let mut loss = 0.0;
    for (i, mut row) in resid.rows_mut().into_iter().enumerate() {
        let m = nearest_of_class(z_sub.row(i), protos, labels[i])?;
        row -= &protos.vectors.row(m);
        loss += 0.5 * row.dot(&row);
        d_vectors.row_mut(m).scaled_add(-1.0 / n, &row);
    }
    let d_pred = resid / n;
    *grads.expect_mut("phi.w") += &z_sub.t().dot(&d_pred);
    *grads.expect_mut("phi.b") += &d_pred.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_z = d_pred.dot(&params.expect("phi.w").t());
    Ok(ProtoLoss {
        loss: loss / n,
        d_z,
        d_vectors,
    })
}

pub fn variational_mi_loss(z_sub: &Array2<f64>, labels: &[usize], protos: &PrototypeSet, params: &ParameterSet) -> Result<f64> {
    let mut scratch = ParameterSet::new();
    scratch.insert("phi.w", Array2::zeros(params.expect("phi.w").dim()))?;
    scratch.insert("phi.b", Array2::zeros(params.expect("phi.b").dim()))?;
    Ok(variational_mi_with_grad(z_sub, labels, protos, params, &mut scratch)?.loss)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-(1/n) sum_i [LSE_pos(g / tau) - LSE_neg(g / tau)]` where positives are
/// the active prototypes of the graph's class and negatives all others.
pub fn contrastive_mi_with_grad(z_sub: &Array2<f64>, labels: &[usize], protos: &PrototypeSet, tau: f64) -> Result<ProtoLoss> {
    check_batch(z_sub, labels, protos)?;
    if !(tau > 0.0) {
        return Err(PgibError::Argument(format!("temperature must be positive, got {tau}")));
    }
    let n = z_sub.nrows() as f64;
    let active = protos.active_indices();
    let mut loss = 0.0;
    let mut d_z = Array2::zeros(z_sub.dim());
    let mut d_vectors = Array2::zeros(protos.vectors.dim());
    for (i, &y) in labels.iter().enumerate() {
        let (pos, neg): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&m| protos.class_of[m] == y);
        if pos.is_empty() || neg.is_empty() {
            return Err(PgibError::Argument(format!(
                "contrastive loss needs positive and negative prototypes for class {y}"
            )));
        }
        let d2 = |m: usize| squared_distance(z_sub.row(i), protos.vectors.row(m));
        let scaled = |set: &[usize]| set.iter().map(|&m| similarity_from_sq(d2(m)) / tau).collect::<Vec<_>>();
        let (sp, sn) = (scaled(&pos), scaled(&neg));
        let (lp, ln) = (log_sum_exp(&sp), log_sum_exp(&sn));
        loss -= lp - ln;
        for (set, s, lse, sign) in [(&pos, &sp, lp, -1.0), (&neg, &sn, ln, 1.0)] {
            for (&m, &x) in set.iter().zip(s) {
                let d_g = sign * (x - lse).exp() / (tau * n);
                let diff = &z_sub.row(i) - &protos.vectors.row(m);
                let coef = d_g * similarity_sq_derivative(d2(m)) * 2.0;
                d_z.row_mut(i).scaled_add(coef, &diff);
                d_vectors.row_mut(m).scaled_add(-coef, &diff);
            }
        }
    }
    Ok(ProtoLoss {
        loss: loss / n,
        d_z,
        d_vectors,
    })
}

pub fn contrastive_mi_loss(z_sub: &Array2<f64>, labels: &[usize], protos: &PrototypeSet, tau: f64) -> Result<f64> {
    Ok(contrastive_mi_with_grad(z_sub, labels, protos, tau)?.loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    pub h: f64,
}

/// `h(i, j) = 1 / (sum_G (g(z, p_i) - g(z, p_j))^2 + 1e-12)` for active
/// pairs `i < j`, in lexicographic order.
pub fn prototype_pair_similarity(protos: &PrototypeSet, embeddings: &Array2<f64>) -> Result<Vec<PairScore>> {
    if embeddings.nrows() == 0 {
        return Err(PgibError::Argument("pair similarity needs at least one embedding".into()));
    }
    if embeddings.ncols() != protos.dim() {
        return Err(PgibError::Shape(format!("embedding dim {} vs prototype dim {}", embeddings.ncols(), protos.dim())));
    }
    let sims: Vec<Array1<f64>> = embeddings.rows().into_iter().map(|z| similarity_all(z, protos)).collect();
    let active = protos.active_indices();
    let mut out = Vec::new();
    for (a, &i) in active.iter().enumerate() {
        for &j in &active[a + 1..] {
            let gap: f64 = sims.iter().map(|s| (s[i] - s[j]).powi(2)).sum();
            out.push(PairScore {
                i,
                j,
                h: 1.0 / (gap + PAIR_FLOOR),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub kept: usize,
    pub removed: usize,
    pub similarity: f64,
    pub epoch: usize,
}

/// Removes `floor(xi / 100 * active)` prototypes, walking pairs by
/// descending `h`. The higher index of an eligible pair is deactivated and
/// its weight row is added to the lower one.
pub fn merge_prototypes(protos: &mut PrototypeSet, pairs: &[PairScore], xi: f64, epoch: usize) -> Result<Vec<MergeEvent>> {
    if !(0.0..100.0).contains(&xi) {
        return Err(PgibError::Argument(format!("merge percentage must lie in [0, 100), got {xi}")));
    }
    let target = (xi / 100.0 * protos.active_count() as f64).floor() as usize;
    let mut order: Vec<&PairScore> = pairs.iter().collect();
    order.sort_by(|a, b| b.h.total_cmp(&a.h).then((a.i, a.j).cmp(&(b.i, b.j))));
    let mut events = Vec::new();
    for p in order {
        if events.len() == target {
            break;
        }
        let (keep, drop) = (p.i.min(p.j), p.i.max(p.j));
        if keep == drop || !protos.active[keep] || !protos.active[drop] {
            continue;
        }
        if protos.active_of_class(protos.class_of[drop]).len() < 2 {
            continue;
        }
        let moved = protos.omega.row(drop).to_owned();
        protos.omega.row_mut(keep).scaled_add(1.0, &moved);
        protos.omega.row_mut(drop).fill(0.0);
        protos.active[drop] = false;
        events.push(MergeEvent {
            kept: keep,
            removed: drop,
            similarity: p.h,
            epoch,
        });
    }
    Ok(events)
}
