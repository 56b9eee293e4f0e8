//! Training schedule: minibatch Adam steps with projection and merge
//! events, validation tracking and best-checkpoint retention.

use std::fmt;

use rand::seq::SliceRandom;

use crate::bottleneck::NoiseDraws;
use crate::config::PgibConfig;
use crate::error::{PgibError, Result};
use crate::graph::{batch_graphs, Graph, GraphDataset, SplitSpec};
use crate::model::{argmax, dataset_noise_stats, evaluate_losses, infer_graph_embedding, infer_node_embeddings, loss_and_grad, predict, Frozen, LossBreakdown, Model, PROTO_OMEGA, PROTO_VECTORS};
use crate::optim::{adam_step, OptimizerState};
use crate::prototypes::{merge_prototypes, project_prototypes, prototype_pair_similarity, MergeEvent, ProjectionResult};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub accuracy: f64,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Projection { epoch: usize, result: ProjectionResult },
    Merge(MergeEvent),
}

impl fmt::Display for TrainEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainEvent::Projection { epoch, result } => {
                let nodes: Vec<String> = result.nodes.iter().map(usize::to_string).collect();
                write!(
                    f,
                    "epoch={epoch} projection prototype={} graph={} nodes={} distance={:.6e}",
                    result.prototype,
                    result.graph_id,
                    nodes.join(","),
                    result.distance
                )
            }
            TrainEvent::Merge(m) => write!(
                f,
                "epoch={} merge kept={} removed={} similarity={:.6e}",
                m.epoch, m.kept, m.removed, m.similarity
            ),
        }
    }
}

/// Result of a training run. `model` is the best-validation checkpoint;
/// `projections` are the projection records that apply to it.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub projections: Vec<ProjectionResult>,
    pub metrics: Vec<EpochMetrics>,
    pub events: Vec<TrainEvent>,
    /// Active prototype count after each event epoch.
    pub active_trajectory: Vec<(usize, usize)>,
}

/// Fraction of graphs whose inference-mode prediction matches the label.
pub fn accuracy(model: &Model, graphs: &[&Graph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(PgibError::Argument("accuracy of an empty graph list".into()));
    }
    let mut correct = 0usize;
    for g in graphs {
        if predict(model, g)?.class == g.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / graphs.len() as f64)
}

fn eval_split(model: &Model, graphs: &[&Graph], epoch: usize, split: Split) -> Result<EpochMetrics> {
    let mut sum = LossBreakdown::default();
    let mut correct = 0usize;
    for g in graphs {
        let batch = batch_graphs([*g])?;
        let (l, _) = evaluate_losses(model, &batch)?;
        if predict(model, g)?.class == g.label {
            correct += 1;
        }
        sum.cls += l.cls;
        sum.mi1 += l.mi1;
        sum.mi2 += l.mi2;
        sum.con += l.con;
        sum.total += l.total;
    }
    let n = graphs.len() as f64;
    Ok(EpochMetrics {
        epoch,
        split,
        accuracy: correct as f64 / n,
        losses: LossBreakdown {
            cls: sum.cls / n,
            mi1: sum.mi1 / n,
            mi2: sum.mi2 / n,
            con: sum.con / n,
            total: sum.total / n,
        },
    })
}

/// Projection then merge, in place. Returns the event records.
pub fn run_event(
    model: &mut Model,
    optim: &mut OptimizerState,
    train: &[&Graph],
    cfg: &PgibConfig,
    epoch: usize,
) -> Result<(Vec<ProjectionResult>, Vec<MergeEvent>)> {
    let snapshot = model.clone();
    let mode = model.config.gin.readout;
    let projections = project_prototypes(&mut model.protos, train, |g| infer_node_embeddings(&snapshot, g), mode, &cfg.mcts)?;
    let projected: Vec<usize> = projections.iter().map(|p| p.prototype).collect();
    optim.reset_rows(PROTO_VECTORS, &projected);

    let embeds: Vec<_> = train.iter().map(|g| infer_graph_embedding(model, g)).collect::<Result<_>>()?;
    let views: Vec<_> = embeds.iter().map(|e| e.view()).collect();
    let matrix = ndarray::stack(ndarray::Axis(0), &views).map_err(|e| PgibError::Shape(e.to_string()))?;
    let pairs = prototype_pair_similarity(&model.protos, &matrix)?;
    let merges = merge_prototypes(&mut model.protos, &pairs, cfg.xi, epoch)?;
    let removed: Vec<usize> = merges.iter().map(|m| m.removed).collect();
    optim.reset_rows(PROTO_VECTORS, &removed);
    optim.reset_rows(PROTO_OMEGA, &removed);
    model.protos.validate()?;
    Ok((projections, merges))
}

/// Trains a model on `split.train`, selecting the checkpoint with the best
/// validation accuracy (ties to the earlier epoch). When events are
/// scheduled, only epochs from the first event on are eligible, so the
/// returned prototypes are projected ones.
pub fn train(ds: &GraphDataset, split: &SplitSpec, cfg: &PgibConfig) -> Result<TrainOutcome> {
    train_with(ds, split, cfg, |_| {})
}

/// [`train`] with a callback invoked after every validation pass.
pub fn train_with<F>(ds: &GraphDataset, split: &SplitSpec, cfg: &PgibConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics),
{
    cfg.validate()?;
    let train_graphs: Vec<&Graph> = split.train.iter().map(|&i| &ds.graphs[i]).collect();
    let val_graphs: Vec<&Graph> = split.val.iter().map(|&i| &ds.graphs[i]).collect();
    if train_graphs.is_empty() || val_graphs.is_empty() {
        return Err(PgibError::Argument("train and validation splits must be nonempty".into()));
    }
    let mut rng = RngStream::new(cfg.seed);
    let mut model = Model::init(cfg.model.clone(), ds.feature_dim, ds.num_classes, &mut rng)?;
    let mut optim = OptimizerState::new(cfg.lr);
    let events_scheduled = cfg.event_epochs();
    let first_eligible = events_scheduled.first().copied().unwrap_or(1);

    let mut metrics = Vec::new();
    let mut events = Vec::new();
    let mut trajectory = Vec::new();
    let mut projections: Vec<ProjectionResult> = Vec::new();
    let mut best: Option<(Model, usize, f64, Vec<ProjectionResult>)> = None;
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut correct = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = batch_graphs(chunk.iter().map(|&i| train_graphs[i]))?;
            let frozen = Frozen {
                draws: NoiseDraws::sample(batch.node_count(), model.config.gin.hidden_dim, &mut rng),
                stats: None,
            };
            let (parts, grads, out) = loss_and_grad(&model, &batch, &frozen)?;
            if !parts.total.is_finite() {
                return Err(PgibError::Divergence {
                    epoch,
                    batch: bi,
                    detail: format!("{parts:?}"),
                });
            }
            let mut all = model.trainable();
            adam_step(&mut all, &grads, &mut optim).map_err(|e| PgibError::Divergence {
                epoch,
                batch: bi,
                detail: e.to_string(),
            })?;
            model.set_trainable(all)?;
            let w = chunk.len() as f64;
            sum.cls += parts.cls * w;
            sum.mi1 += parts.mi1 * w;
            sum.mi2 += parts.mi2 * w;
            sum.con += parts.con * w;
            sum.total += parts.total * w;
            for (row, &y) in out.probs.rows().into_iter().zip(&batch.labels) {
                if argmax(&row.to_owned()) == y {
                    correct += 1;
                }
            }
        }
        let n = train_graphs.len() as f64;
        model.trained_epochs = epoch;
        model.noise_stats = Some(dataset_noise_stats(&model, &train_graphs, cfg.batch_size)?);
        metrics.push(EpochMetrics {
            epoch,
            split: Split::Train,
            accuracy: correct as f64 / n,
            losses: LossBreakdown {
                cls: sum.cls / n,
                mi1: sum.mi1 / n,
                mi2: sum.mi2 / n,
                con: sum.con / n,
                total: sum.total / n,
            },
        });

        if cfg.is_event_epoch(epoch) {
            let (proj, merges) = run_event(&mut model, &mut optim, &train_graphs, cfg, epoch)?;
            events.extend(proj.iter().cloned().map(|result| TrainEvent::Projection { epoch, result }));
            events.extend(merges.into_iter().map(TrainEvent::Merge));
            trajectory.push((epoch, model.protos.active_count()));
            // keep records only for prototypes still active
            projections = proj.into_iter().filter(|p| model.protos.active[p.prototype]).collect();
        }

        let val = eval_split(&model, &val_graphs, epoch, Split::Val)?;
        on_epoch(metrics.last().expect("train row"));
        on_epoch(&val);
        if epoch >= first_eligible && best.as_ref().is_none_or(|b| val.accuracy > b.2) {
            best = Some((model.clone(), epoch, val.accuracy, projections.clone()));
        }
        metrics.push(val);
    }
    let (model, best_epoch, best_val_accuracy, projections) = best.expect("at least one eligible epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_accuracy,
        projections,
        metrics,
        events,
        active_trajectory: trajectory,
    })
}
