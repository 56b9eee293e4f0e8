//! Full model: encoder, bottleneck, prototype layer and prediction layer,
//! with the training objective and its hand-derived gradient.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::bottleneck::{
    connectivity_with_grad, gate_backward, gate_forward, gate_values, init_gate_params, inject_noise,
    mi_upper_bound_with_grad, noise_matrix, Mode, NodeAssignment, NoiseDraws, NoiseStats,
};
use crate::encoder::{
    gin_backward, gin_forward_cached, groups_from_membership, init_gin_params, readout_backward,
    readout_cached, GinConfig,
};
use crate::error::{PgibError, Result};
use crate::graph::{batch_graphs, Batch, Graph};
use crate::params::ParameterSet;
use crate::rng::RngStream;
use crate::prototypes::{
    contrastive_mi_with_grad, init_phi_params, similarity_all, similarity_sq_derivative, squared_distance,
    variational_mi_with_grad, PrototypeSet,
};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiMode {
    Variational,
    Contrastive,
}

impl fmt::Display for MiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiMode::Variational => "variational",
            MiMode::Contrastive => "contrastive",
        })
    }
}

impl FromStr for MiMode {
    type Err = PgibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variational" => Ok(MiMode::Variational),
            "contrastive" => Ok(MiMode::Contrastive),
            other => Err(PgibError::Config(format!("unknown mi_mode {other:?}"))),
        }
    }
}

/// Loss weights and the settings of the subgraph-prototype term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub mi_mode: MiMode,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 1e-4,
            alpha2: 0.1,
            alpha3: 5.0,
            mi_mode: MiMode::Variational,
            tau: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub mi1: f64,
    pub mi2: f64,
    pub con: f64,
    pub total: f64,
}

/// `cls + alpha1 mi1 + alpha2 mi2 + alpha3 con`.
pub fn total_loss(cls: f64, mi1: f64, mi2: f64, con: f64, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        cls,
        mi1,
        mi2,
        con,
        total: cls + cfg.alpha1 * mi1 + cfg.alpha2 * mi2 + cfg.alpha3 * con,
    }
}

/// Mean negative log probability of the true class, clamped at 1e-12.
pub fn classification_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() || probs.nrows() == 0 {
        return Err(PgibError::Shape(format!("{} probability rows for {} labels", probs.nrows(), labels.len())));
    }
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y]].max(PROB_FLOOR).ln())
        .sum();
    Ok(sum / labels.len() as f64)
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// Own-class weight 1, other classes -0.5.
pub fn init_prediction_weights(protos: &PrototypeSet) -> Array2<f64> {
    Array2::from_shape_fn((protos.len(), protos.num_classes()), |(m, k)| {
        if protos.class_of[m] == k {
            1.0
        } else {
            -0.5
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub gin: GinConfig,
    pub per_class: usize,
    pub loss: LossConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gin: GinConfig::default(),
            per_class: crate::prototypes::DEFAULT_PER_CLASS,
            loss: LossConfig::default(),
        }
    }
}

/// Learned state: network parameters and the prototype layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub protos: PrototypeSet,
    pub trained_epochs: usize,
    /// Node embedding statistics over the training set, used for the
    /// noise mean in inference-mode passes.
    pub noise_stats: Option<NoiseStats>,
}

pub const PROTO_VECTORS: &str = "proto.vectors";
pub const PROTO_OMEGA: &str = "proto.omega";

impl Model {
    pub fn init(config: ModelConfig, input_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParameterSet::new();
        init_gin_params(&mut params, input_dim, &config.gin, rng)?;
        init_gate_params(&mut params, config.gin.hidden_dim, rng)?;
        init_phi_params(&mut params, config.gin.hidden_dim, rng)?;
        let mut protos = PrototypeSet::init(num_classes, config.per_class, config.gin.hidden_dim, rng)?;
        protos.omega = init_prediction_weights(&protos);
        Ok(Self {
            config,
            params,
            protos,
            trained_epochs: 0,
            noise_stats: None,
        })
    }

    /// Every trainable array, prototype vectors and weights included.
    pub fn trainable(&self) -> ParameterSet {
        let mut all = self.params.clone();
        all.insert(PROTO_VECTORS, self.protos.vectors.clone()).expect("fresh name");
        all.insert(PROTO_OMEGA, self.protos.omega.clone()).expect("fresh name");
        all
    }

    pub fn set_trainable(&mut self, mut all: ParameterSet) -> Result<()> {
        let vectors = all.take(PROTO_VECTORS)?;
        let omega = all.take(PROTO_OMEGA)?;
        all.check_same_layout(&self.params)?;
        if vectors.dim() != self.protos.vectors.dim() || omega.dim() != self.protos.omega.dim() {
            return Err(PgibError::Shape("prototype arrays changed shape".into()));
        }
        self.params = all;
        self.protos.vectors = vectors;
        self.protos.omega = omega;
        for m in 0..self.protos.len() {
            if !self.protos.active[m] {
                self.protos.omega.row_mut(m).fill(0.0);
            }
        }
        Ok(())
    }
}

/// Stochastic inputs and batch statistics held fixed for a pass.
#[derive(Clone, Debug)]
pub struct Frozen {
    pub draws: NoiseDraws,
    pub stats: Option<NoiseStats>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs: Array2<f64>,
    pub logits: Array2<f64>,
    /// Similarity to every prototype, inactive columns zero.
    pub r: Array2<f64>,
    pub z_sub: Array2<f64>,
    pub assignment: NodeAssignment,
    pub stats: NoiseStats,
    pub h: Array2<f64>,
    pub z: Array2<f64>,
}

/// Forward pass. `Mode::Train` requires frozen draws; `Mode::Infer` uses
/// `lambda = p` and the noise mean.
pub fn forward(model: &Model, batch: &Batch, mode: Mode, frozen: Option<&Frozen>) -> Result<ForwardOutput> {
    Ok(forward_cached(model, batch, mode, frozen)?.0)
}

struct Cache {
    gin: crate::encoder::GinCache,
    gate: crate::bottleneck::GateCache,
    readout: crate::encoder::ReadoutCache,
    groups: Vec<Vec<usize>>,
    d_lambda_d_score: Vec<f64>,
    eps: Array2<f64>,
}

fn forward_cached(model: &Model, batch: &Batch, mode: Mode, frozen: Option<&Frozen>) -> Result<(ForwardOutput, Cache)> {
    if batch.node_count() == 0 {
        return Err(PgibError::EmptyGraph("forward pass".into()));
    }
    let cfg = &model.config.gin;
    let (h, gin) = gin_forward_cached(batch, &batch.features, &model.params, cfg)?;
    let stats = match (frozen.and_then(|f| f.stats.clone()), mode, &model.noise_stats) {
        (Some(s), _, _) => s,
        (None, Mode::Infer, Some(s)) if s.mean.len() == h.ncols() => s.clone(),
        _ => NoiseStats::from_embeddings(&h),
    };
    let gate = gate_forward(&h, &model.params);
    let draws = match mode {
        Mode::Train => Some(
            &frozen
                .ok_or_else(|| PgibError::Argument("training-mode pass needs noise draws".into()))?
                .draws,
        ),
        Mode::Infer => None,
    };
    if let Some(d) = draws {
        if d.gate.len() != h.nrows() || d.gauss.dim() != h.dim() {
            return Err(PgibError::Shape("noise draws do not match the batch".into()));
        }
    }
    let (p, lambda, d_lambda_d_score) = gate_values(&gate.scores, mode, draws.map(|d| d.gate.as_slice()));
    let eps = noise_matrix(&stats, h.nrows(), draws.map(|d| &d.gauss));
    let z = inject_noise(&h, &lambda, &eps);
    let groups = groups_from_membership(&batch.membership)?;
    let (z_sub, readout) = readout_cached(&z, &groups, cfg.readout);

    let protos = &model.protos;
    let dup = protos.duplicate_groups();
    let b = z_sub.nrows();
    let mut r = Array2::zeros((b, protos.len()));
    let mut logits = Array2::zeros((b, protos.num_classes()));
    let mut probs = Array2::zeros((b, protos.num_classes()));
    for i in 0..b {
        let ri = similarity_all(z_sub.row(i), protos);
        let li = protos.logits(ri.view(), &dup);
        probs.row_mut(i).assign(&softmax(&li));
        logits.row_mut(i).assign(&li);
        r.row_mut(i).assign(&ri);
    }
    Ok((
        ForwardOutput {
            probs,
            logits,
            r,
            z_sub,
            assignment: NodeAssignment { p, lambda },
            stats,
            h,
            z,
        },
        Cache {
            gin,
            gate,
            readout,
            groups,
            d_lambda_d_score,
            eps,
        },
    ))
}

/// Training objective on a batch and the gradient of its total with respect
/// to [`Model::trainable`].
pub fn loss_and_grad(model: &Model, batch: &Batch, frozen: &Frozen) -> Result<(LossBreakdown, ParameterSet, ForwardOutput)> {
    let (out, cache) = forward_cached(model, batch, Mode::Train, Some(frozen))?;
    let lc = &model.config.loss;
    let protos = &model.protos;
    let labels = &batch.labels;
    let b = labels.len() as f64;
    let mut grads = model.trainable().zeros_like();

    let cls = classification_loss(&out.probs, labels)?;
    let mut d_logits = out.probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        if out.probs[[i, y]] >= PROB_FLOOR {
            d_logits[[i, y]] -= 1.0;
        } else {
            d_logits.row_mut(i).fill(0.0);
        }
    }
    d_logits /= b;

    // prediction layer: logits = r omega over active rows
    let active = protos.active_indices();
    let mut d_z_sub = Array2::<f64>::zeros(out.z_sub.dim());
    let mut d_vectors = Array2::<f64>::zeros(protos.vectors.dim());
    {
        let d_omega = grads.expect_mut(PROTO_OMEGA);
        for &m in &active {
            for i in 0..out.r.nrows() {
                d_omega.row_mut(m).scaled_add(out.r[[i, m]], &d_logits.row(i));
            }
        }
    }
    for i in 0..out.r.nrows() {
        for &m in &active {
            let d_r = d_logits.row(i).dot(&protos.omega.row(m));
            if d_r == 0.0 {
                continue;
            }
            let diff = &out.z_sub.row(i) - &protos.vectors.row(m);
            let coef = d_r * similarity_sq_derivative(squared_distance(out.z_sub.row(i), protos.vectors.row(m))) * 2.0;
            d_z_sub.row_mut(i).scaled_add(coef, &diff);
            d_vectors.row_mut(m).scaled_add(-coef, &diff);
        }
    }

    let mi2 = match lc.mi_mode {
        MiMode::Variational => {
            let mut phi = ParameterSet::new();
            phi.insert("phi.w", Array2::zeros(model.params.expect("phi.w").dim()))?;
            phi.insert("phi.b", Array2::zeros(model.params.expect("phi.b").dim()))?;
            let l = variational_mi_with_grad(&out.z_sub, labels, protos, &model.params, &mut phi)?;
            for name in ["phi.w", "phi.b"] {
                grads.expect_mut(name).scaled_add(lc.alpha2, phi.expect(name));
            }
            d_z_sub.scaled_add(lc.alpha2, &l.d_z);
            d_vectors.scaled_add(lc.alpha2, &l.d_vectors);
            l.loss
        }
        MiMode::Contrastive => {
            let l = contrastive_mi_with_grad(&out.z_sub, labels, protos, lc.tau)?;
            d_z_sub.scaled_add(lc.alpha2, &l.d_z);
            d_vectors.scaled_add(lc.alpha2, &l.d_vectors);
            l.loss
        }
    };
    *grads.expect_mut(PROTO_VECTORS) += &d_vectors;

    let d_z = readout_backward(&cache.readout, &d_z_sub);
    let lambda = &out.assignment.lambda;
    let p = &out.assignment.p;
    let mut d_h = d_z.clone();
    let mut d_lambda = vec![0.0; lambda.len()];
    for i in 0..lambda.len() {
        d_h.row_mut(i).mapv_inplace(|x| x * lambda[i]);
        d_lambda[i] = d_z.row(i).dot(&(&out.h.row(i) - &cache.eps.row(i)));
    }

    let mi = mi_upper_bound_with_grad(lambda, &out.h, &cache.groups, &out.stats)?;
    d_h.scaled_add(lc.alpha1, &mi.d_h);
    for (d, g) in d_lambda.iter_mut().zip(&mi.d_lambda) {
        *d += lc.alpha1 * g;
    }

    let con = connectivity_with_grad(&out.assignment.s_matrix(), batch)?;
    let d_scores: Vec<f64> = (0..lambda.len())
        .map(|i| {
            let d_p = lc.alpha3 * (con.d_s[[i, 0]] - con.d_s[[i, 1]]);
            d_p * p[i] * (1.0 - p[i]) + d_lambda[i] * cache.d_lambda_d_score[i]
        })
        .collect();
    d_h += &gate_backward(&cache.gate, &out.h, &model.params, &d_scores, &mut grads);
    gin_backward(batch, &cache.gin, &model.params, &model.config.gin, d_h, &mut grads);

    let parts = total_loss(cls, mi.loss, mi2, con.loss, lc);
    Ok((parts, grads, out))
}

/// Objective of a batch in inference mode (no gradient), for monitoring.
pub fn evaluate_losses(model: &Model, batch: &Batch) -> Result<(LossBreakdown, ForwardOutput)> {
    let out = forward(model, batch, Mode::Infer, None)?;
    let lc = &model.config.loss;
    let groups = groups_from_membership(&batch.membership)?;
    let cls = classification_loss(&out.probs, &batch.labels)?;
    let mi1 = mi_upper_bound_with_grad(&out.assignment.lambda, &out.h, &groups, &out.stats)?.loss;
    let mi2 = match lc.mi_mode {
        MiMode::Variational => crate::prototypes::variational_mi_loss(&out.z_sub, &batch.labels, &model.protos, &model.params)?,
        MiMode::Contrastive => crate::prototypes::contrastive_mi_loss(&out.z_sub, &batch.labels, &model.protos, lc.tau)?,
    };
    let con = crate::bottleneck::connectivity_loss(&out.assignment.s_matrix(), batch)?;
    Ok((total_loss(cls, mi1, mi2, con, lc), out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Array1<f64>,
    pub logits: Array1<f64>,
    /// Similarity to every prototype, inactive entries zero.
    pub r: Array1<f64>,
    /// Node keep probabilities.
    pub importance: Vec<f64>,
}

/// Noise draws averaged by [`predict`].
pub const PREDICT_SAMPLES: usize = 16;
/// Seed of the draws used by [`predict`], fixed so predictions repeat.
pub const PREDICT_SEED: u64 = 0x5eed;

/// Prediction of a single graph. Similarities are averaged over
/// [`PREDICT_SAMPLES`] noise draws from a fixed stream, with the noise
/// statistics stored in the model (the graph's own when absent), and the
/// logits are taken from the averaged similarities. Node importance is the
/// keep probability `p`. Argmax ties go to the lower class.
pub fn predict(model: &Model, graph: &Graph) -> Result<Prediction> {
    let batch = batch_graphs([graph])?;
    let expected = forward(model, &batch, Mode::Infer, None)?;
    let mut rng = RngStream::new(PREDICT_SEED);
    let mut r = Array1::<f64>::zeros(model.protos.len());
    for _ in 0..PREDICT_SAMPLES {
        let frozen = Frozen {
            draws: NoiseDraws::sample(batch.node_count(), model.config.gin.hidden_dim, &mut rng),
            stats: Some(expected.stats.clone()),
        };
        r += &forward(model, &batch, Mode::Train, Some(&frozen))?.r.row(0);
    }
    r /= PREDICT_SAMPLES as f64;
    let logits = model.protos.logits(r.view(), &model.protos.duplicate_groups());
    let probs = softmax(&logits);
    Ok(Prediction {
        class: argmax(&probs),
        probs,
        logits,
        r,
        importance: expected.assignment.p,
    })
}

/// Encoder statistics over `graphs`, evaluated `chunk` graphs at a time.
pub fn dataset_noise_stats(model: &Model, graphs: &[&Graph], chunk: usize) -> Result<NoiseStats> {
    let mut hs = Vec::new();
    for part in graphs.chunks(chunk.max(1)) {
        let batch = batch_graphs(part.iter().copied())?;
        hs.push(gin_forward_cached(&batch, &batch.features, &model.params, &model.config.gin)?.0);
    }
    NoiseStats::from_chunks(&hs).ok_or_else(|| PgibError::EmptyGraph("no nodes for noise statistics".into()))
}

/// Inference-mode node matrix `z` of a single graph (no sampled noise).
pub fn infer_node_embeddings(model: &Model, graph: &Graph) -> Result<Array2<f64>> {
    let batch = batch_graphs([graph])?;
    Ok(forward(model, &batch, Mode::Infer, None)?.z)
}

/// Inference-mode graph embedding `z_sub` of a single graph.
pub fn infer_graph_embedding(model: &Model, graph: &Graph) -> Result<Array1<f64>> {
    let batch = batch_graphs([graph])?;
    Ok(forward(model, &batch, Mode::Infer, None)?.z_sub.index_axis(Axis(0), 0).to_owned())
}

pub fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::rng::RngStream;
    use ndarray::array;

    #[test]
    fn loss_values() {
        let cfg = LossConfig::default();
        let l = total_loss(1.0, 2.0, 3.0, 4.0, &cfg);
        assert!((l.total - 21.3002).abs() < 1e-12);
        assert_eq!(l.total, l.cls + cfg.alpha1 * l.mi1 + cfg.alpha2 * l.mi2 + cfg.alpha3 * l.con);
        let zero = LossConfig {
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(0.7, 2.0, 3.0, 4.0, &zero).total, 0.7);

        let probs = array![[0.5, 0.5], [0.75, 0.25]];
        let l = classification_loss(&probs, &[0, 1]).unwrap();
        assert!((l - 0.5 * (2f64.ln() + 4f64.ln())).abs() < 1e-15);
        assert!((l - 1.0397).abs() < 1e-4);
        assert_eq!(classification_loss(&array![[0.0, 1.0]], &[1]).unwrap(), 0.0);
        assert!((classification_loss(&array![[0.0, 1.0]], &[0]).unwrap() + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn prediction_weight_init() {
        let protos = PrototypeSet::init(2, 1, 3, &mut RngStream::new(0)).unwrap();
        assert_eq!(init_prediction_weights(&protos), array![[1.0, -0.5], [-0.5, 1.0]]);
        let protos = PrototypeSet::init(3, 2, 3, &mut RngStream::new(0)).unwrap();
        let w = init_prediction_weights(&protos);
        assert_eq!(w.nrows(), 6);
        let r = Array1::from_shape_fn(6, |m| if protos.class_of[m] == 2 { 1.0 } else { 0.0 });
        assert_eq!(argmax(&r.dot(&w)), 2);
    }

    fn tiny_model(seed: u64, mode: MiMode, feature_dim: usize) -> Model {
        let cfg = ModelConfig {
            gin: GinConfig {
                layers: 2,
                hidden_dim: 4,
                ..GinConfig::default()
            },
            per_class: 2,
            loss: LossConfig {
                mi_mode: mode,
                alpha1: 0.3,
                alpha2: 0.7,
                alpha3: 1.5,
                tau: 0.8,
            },
        };
        let mut rng = RngStream::new(seed);
        let mut model = Model::init(cfg, feature_dim, 2, &mut rng).unwrap();
        // nonzero biases keep the fixture away from ReLU kinks at exactly 0
        for (name, arr) in model.params.iter_mut() {
            if name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with(".b") {
                arr.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
        }
        model
    }

    fn tiny_batch(rng: &mut RngStream) -> Batch {
        let graphs: Vec<Graph> = (0..3)
            .map(|g| {
                let n = rng.random_range(2..5);
                let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
                let feats = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
                Graph::new(format!("t{g}"), n, edges, feats, g % 2).unwrap()
            })
            .collect();
        batch_graphs(&graphs).unwrap()
    }

    #[test]
    fn uniform_when_weights_vanish() {
        let mut model = tiny_model(1, MiMode::Variational, 3);
        model.protos.omega.fill(0.0);
        let batch = tiny_batch(&mut RngStream::new(4));
        let out = forward(&model, &batch, Mode::Infer, None).unwrap();
        for row in out.probs.rows() {
            assert_eq!(row.to_vec(), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn probabilities_normalized_and_prediction_stable() {
        let model = tiny_model(2, MiMode::Contrastive, 3);
        let mut rng = RngStream::new(8);
        let batch = tiny_batch(&mut rng);
        let out = forward(&model, &batch, Mode::Infer, None).unwrap();
        for row in out.probs.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let g = Graph::new("x", 3, [(0, 1), (1, 2)], Array2::ones((3, 3)), 0).unwrap();
        let a = predict(&model, &g).unwrap();
        assert_eq!(a, predict(&model, &g).unwrap());
        assert_eq!(a.class, argmax(&a.probs));
    }

    #[test]
    fn embedding_on_class_prototype_predicts_that_class() {
        let mut model = tiny_model(3, MiMode::Variational, 3);
        for m in [1, 3] {
            model.protos.active[m] = false;
            model.protos.omega.row_mut(m).fill(0.0);
        }
        let g = Graph::new("x", 2, [(0, 1)], array![[0.2, 0.1, 0.0], [0.5, -0.3, 0.9]], 0).unwrap();
        let z = infer_graph_embedding(&model, &g).unwrap();
        model.protos.vectors.row_mut(0).assign(&z);
        model.protos.omega = array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert_eq!(predict(&model, &g).unwrap().class, 0);
    }

    #[test]
    fn symmetric_untrained_model_is_uniform() {
        let mut model = tiny_model(5, MiMode::Variational, 3);
        // mirror the two classes' prototypes so both classes score the same
        let v = model.protos.vectors.row(0).to_owned();
        model.protos.vectors.row_mut(1).assign(&v);
        model.protos.vectors.row_mut(2).assign(&v);
        model.protos.vectors.row_mut(3).assign(&v);
        let g = Graph::new("x", 3, [(0, 1), (0, 2)], Array2::ones((3, 3)), 0).unwrap();
        let p = predict(&model, &g).unwrap();
        assert!((p.probs[0] - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn end_to_end_gradient() {
        for mode in [MiMode::Variational, MiMode::Contrastive] {
            for seed in 0..3 {
                let model = tiny_model(seed, mode, 3);
                let mut rng = RngStream::new(100 + seed);
                let batch = tiny_batch(&mut rng);
                let draws = NoiseDraws::sample(batch.node_count(), 4, &mut rng);
                let h = forward(&model, &batch, Mode::Infer, None).unwrap().h;
                let frozen = Frozen {
                    draws,
                    stats: Some(NoiseStats::from_embeddings(&h)),
                };
                let loss_fn = |ps: &ParameterSet| -> Result<(f64, ParameterSet)> {
                    let mut m = model.clone();
                    m.set_trainable(ps.clone())?;
                    let (l, g, _) = loss_and_grad(&m, &batch, &frozen)?;
                    Ok((l.total, g))
                };
                let report = finite_difference_check(loss_fn, &model.trainable(), 1e-5).unwrap();
                assert!(report.max_rel_error <= 1e-4, "{mode} seed {seed}: {report:?}");
            }
        }
    }
}
