use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use simgraph::evalkit::experiment::{prepare, ExperimentConfig};
use simgraph::evalkit::Denominator;
use simgraph::fusion::{forward_cached, ModelConfig, Variant};
use simgraph::hetgraph::FeatureMode;
use simgraph::metapath::{build_subgraphs, path_count, MetaPath, Normalization};
use simgraph::synthgen::{generate, synthetic_task, GenConfig};
use simgraph::training::{loss_and_gradients, TrainConfig};
use simgraph::Exec;

const EXECS: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn bench(c: &mut Criterion) {
    let (g, labels, _) = generate(&GenConfig::default()).unwrap();
    let task = synthetic_task(&g).unwrap();
    let paths: Vec<MetaPath> = ["V-L", "V-S", "V-B", "V-D-V", "D-V-M-V-D"]
        .iter()
        .map(|p| MetaPath::parse(p, g.schema()).unwrap())
        .collect();

    let mut group = c.benchmark_group("path_count");
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::new("D-V-M-V-D", name), |b| {
            b.iter(|| path_count(&g, &paths[4], exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("build_subgraphs");
    group.sample_size(10);
    for (name, exec) in EXECS {
        group.bench_function(name, |b| {
            b.iter(|| build_subgraphs(&g, &paths, Normalization::Sps, exec).unwrap())
        });
    }
    group.finish();

    for variant in [Variant::Sum, Variant::AggAttention] {
        let cfg = ExperimentConfig {
            task: task.clone(),
            paths: paths[..3].to_vec(),
            normalization: Normalization::Sps,
            features: FeatureMode::OnehotCode,
            model: ModelConfig {
                variant,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            split_seed: 7,
            ks: vec![10],
            denominator: Denominator::Capped,
        };
        let prepared = prepare(&g, &labels, &cfg, Exec::Parallel).unwrap();
        let model = prepared.model_config(&cfg.model, &labels);
        let params = prepared.init_params(&model).unwrap();
        let (objective, _) = prepared.supervised(&labels, &task);

        let mut group = c.benchmark_group(variant.as_str());
        group.sample_size(10);
        for (name, exec) in EXECS {
            group.bench_function(BenchmarkId::new("forward", name), |b| {
                b.iter(|| {
                    forward_cached(&prepared.stack, &prepared.features, &params, &model, exec)
                        .unwrap()
                })
            });
            group.bench_function(BenchmarkId::new("train_step", name), |b| {
                b.iter(|| {
                    loss_and_gradients(
                        &prepared.stack,
                        &prepared.features,
                        &params,
                        &model,
                        &objective,
                        exec,
                    )
                    .unwrap()
                })
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
