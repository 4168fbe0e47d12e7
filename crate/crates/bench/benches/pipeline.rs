use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use chaincount_core::assignment::{hungarian, CostMatrix};
use chaincount_core::geometry::{dominant_orientation, Axis, ImageRecord};
use chaincount_core::partition::{two_pass_count, OracleCounter};
use chaincount_core::postprocess::{dedup, filter_by_confidence};
use chaincount_core::report::{evaluate, DEFAULT_GAME_LEVELS};
use chaincount_core::synth::{corrupt, generate_scene, CorruptionSpec, SceneSpec, SplitMix64};
use chaincount_core::{DedupConfig, PartitionConfig};

fn scene(seed: u64, n_clusters: usize) -> ImageRecord {
    let spec = SceneSpec {
        width: 400.0 * n_clusters as f64 + 200.0,
        n_clusters,
        handles_per_cluster: (8, 12),
        seed,
        ..SceneSpec::default()
    };
    let record = generate_scene(&spec).expect("valid scene");
    corrupt(
        &record,
        &CorruptionSpec {
            seed,
            ..CorruptionSpec::default()
        },
    )
    .expect("valid corruption")
}

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for n in [16usize, 64, 256] {
        let mut rng = SplitMix64::new(n as u64);
        let costs = CostMatrix::from_fn(n, n, |_, _| rng.uniform(0.0, 100.0)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &costs, |b, m| {
            b.iter(|| hungarian(black_box(m)))
        });
    }
    group.finish();
}

fn bench_dedup(c: &mut Criterion) {
    let record = scene(7, 8);
    let cfg = DedupConfig::new(8.0);
    c.bench_function("dedup", |b| {
        b.iter(|| {
            let kept = filter_by_confidence(black_box(&record.predictions), 0.26);
            let centers: Vec<_> = kept.iter().map(|d| d.center()).collect();
            let axis = dominant_orientation(&centers).unwrap_or(Axis::Y);
            dedup(&kept, &cfg, axis)
        })
    });
}

fn bench_evaluate(c: &mut Criterion) {
    let records: Vec<ImageRecord> = (0..50).map(|s| scene(s, 3)).collect();
    c.bench_function("evaluate", |b| {
        b.iter(|| evaluate(black_box(&records), &DEFAULT_GAME_LEVELS).unwrap())
    });
}

fn bench_two_pass(c: &mut Criterion) {
    let record = scene(11, 6);
    let cfg = PartitionConfig::new(100.0);
    c.bench_function("two_pass_count", |b| {
        b.iter(|| two_pass_count(black_box(&record), &OracleCounter, &cfg).unwrap())
    });
}

criterion_group!(
    benches,
    bench_hungarian,
    bench_dedup,
    bench_evaluate,
    bench_two_pass
);
criterion_main!(benches);
