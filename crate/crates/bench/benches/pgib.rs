use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array1;
use pgib::ba2motifs::generate_ba2motifs;
use pgib::batch_graphs;
use pgib::bottleneck::NoiseDraws;
use pgib::encoder::{gin_forward, readout, Readout};
use pgib::model::{loss_and_grad, predict, Frozen, Model, ModelConfig};
use pgib::prototypes::{mcts_search, MctsConfig};
use pgib::rng::RngStream;

fn benches(c: &mut Criterion) {
    let ds = generate_ba2motifs(64, 0).unwrap();
    let batch = batch_graphs(&ds.graphs).unwrap();
    let mut rng = RngStream::new(0);
    let model = Model::init(ModelConfig::default(), ds.feature_dim, ds.num_classes, &mut rng).unwrap();

    c.bench_function("gin_forward_64_graphs", |b| {
        b.iter(|| gin_forward(black_box(&batch), &model.params, &model.config.gin).unwrap())
    });

    let frozen = Frozen {
        draws: NoiseDraws::sample(batch.node_count(), model.config.gin.hidden_dim, &mut rng),
        stats: None,
    };
    c.bench_function("loss_and_grad_64_graphs", |b| {
        b.iter(|| loss_and_grad(black_box(&model), &batch, &frozen).unwrap())
    });

    let g = &ds.graphs[0];
    c.bench_function("predict_one_graph", |b| b.iter(|| predict(black_box(&model), g).unwrap()));

    let h = gin_forward(&batch_graphs([g]).unwrap(), &model.params, &model.config.gin).unwrap().h;
    let target = Array1::from_elem(h.ncols(), 0.1);
    let cfg = MctsConfig::default();
    c.bench_function("mcts_search_one_graph", |b| {
        b.iter(|| {
            mcts_search(
                g,
                target.view(),
                |nodes| Ok(readout(&h.select(ndarray::Axis(0), nodes), &vec![0; nodes.len()], Readout::Max)?.row(0).to_owned()),
                &cfg,
            )
            .unwrap()
        })
    });
}

criterion_group!(pgib_benches, benches);
criterion_main!(pgib_benches);
