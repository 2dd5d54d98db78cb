use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use srforge_bench::datasets;
use srforge_core::datagen::TabularDataset;
use srforge_core::model::{EncoderKind, Model, ModelConfig};
use srforge_core::train::{make_batch, TrainConfig, Trainer};

fn model_benches(c: &mut Criterion) {
    let data = datasets(16, 2);
    let refs: Vec<&TabularDataset> = data.iter().collect();
    let values: Vec<f32> = data.iter().flat_map(|d| d.values().iter().copied()).collect();

    let mut group = c.benchmark_group("encoder forward, 16 tables");
    for kind in EncoderKind::ALL {
        let model = Model::<f32>::new(ModelConfig::desk().with_encoder(kind), 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(kind), &model, |b, m| {
            b.iter(|| m.memory(&values, data.len()).unwrap())
        });
    }
    group.finish();

    let model = Model::<f32>::new(ModelConfig::desk(), 0).unwrap();
    c.bench_function("greedy decode, 16 tables", |b| b.iter(|| model.greedy_decode(&values, data.len()).unwrap()));

    let batch = make_batch(&refs, ModelConfig::desk().max_len).unwrap();
    let mut group = c.benchmark_group("train step, batch 16");
    group.sample_size(20);
    for kind in EncoderKind::ALL {
        let model = Model::<f32>::new(ModelConfig::desk().with_encoder(kind), 0).unwrap();
        let mut trainer = Trainer::new(model, TrainConfig::default()).unwrap();
        group.bench_function(BenchmarkId::from_parameter(kind), |b| b.iter(|| trainer.step(&batch).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, model_benches);
criterion_main!(benches);
