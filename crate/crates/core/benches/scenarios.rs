use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ptguard::ddforest::{Arity, DefenseForest, LeafRecord, TreeId, LEAVES_PER_TREE};
use ptguard::harness::{run_batch, run_batch_sequential, Mode, ScenarioConfig};
use ptguard::workloads::WorkloadKind;

fn batch_configs() -> Vec<ScenarioConfig> {
    (0..8)
        .flat_map(|seed| {
            [WorkloadKind::BTree(1500), WorkloadKind::Hash(1200)]
                .map(|w| ScenarioConfig::new(Mode::AttackWithDefense, w, seed))
        })
        .collect()
}

fn batches(c: &mut Criterion) {
    let configs = batch_configs();
    let mut group = c.benchmark_group("batch");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| run_batch(&configs)));
    group.bench_function("sequential", |b| b.iter(|| run_batch_sequential(&configs)));
    group.finish();
}

fn verify(c: &mut Criterion) {
    let tree = TreeId(0x1000);
    let mut group = c.benchmark_group("verify_leaf");
    for m in [2u32, 4, 6, 8] {
        let mut forest = DefenseForest::new(Arity::new(m).unwrap());
        forest
            .install_tree(tree, (0..4096).map(|i| (i * 61 % LEAVES_PER_TREE, LeafRecord::new(true, i as u64))))
            .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &forest, |b, f| {
            b.iter(|| f.verify_leaf(tree, 61 * 77))
        });
    }
    group.finish();
}

criterion_group!(benches, batches, verify);
criterion_main!(benches);
