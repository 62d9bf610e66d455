use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bico_core::data::{expand_items, resolve_batch, synth_generate, SynthConfig};
use bico_core::train::concept_tree;
use bico_core::{bico_encode, AggParams, EdgePhases, FlowFlags, Model, ModelConfig, SchemaSpec, Subtask};

fn encode(c: &mut Criterion) {
    let schema = SchemaSpec::default_mitweet();
    let mut group = c.benchmark_group("bico_encode");
    for dim in [32, 768] {
        let data = synth_generate(&schema, &SynthConfig::new(1, dim, 0.1, 0)).unwrap();
        let tree = concept_tree(&schema, &data.store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phases = EdgePhases::random(dim, &mut rng);
        let agg = AggParams::random(dim, &mut rng);
        for iters in [2, 4] {
            group.bench_with_input(BenchmarkId::new(format!("d{dim}"), iters), &iters, |b, &k| {
                b.iter(|| bico_encode(black_box(&tree), &phases, &agg, k, FlowFlags::default()).unwrap())
            });
        }
    }
    group.finish();
}

fn loss_and_grad(c: &mut Criterion) {
    let schema = SchemaSpec::default_mitweet();
    let codes = schema.facet_codes();
    let data = synth_generate(&schema, &SynthConfig::new(6, 32, 0.1, 0)).unwrap();
    let mut group = c.benchmark_group("loss_and_grad");
    group.sample_size(10);
    for subtask in [Subtask::Ideology, Subtask::Relevance] {
        let tree = concept_tree(&schema, &data.store).unwrap();
        let model = Model::new(ModelConfig::defaults(subtask), tree, 0).unwrap();
        let items = expand_items(&data.samples, &codes, subtask);
        let batch = resolve_batch(&items[..64], &data.samples, &codes, &data.store).unwrap();
        group.bench_function(format!("{subtask:?}_b64_d32"), |b| {
            b.iter(|| model.loss_and_grad(black_box(&batch)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, encode, loss_and_grad);
criterion_main!(benches);
