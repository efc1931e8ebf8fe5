use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use shm_bench::workload;
use shm_core::autograd::backward;
use shm_core::episode::{run_sequence, run_sequence_taped, EvalMode};
use shm_core::memory::{unroll_sequential, write_step, MemoryState};
use shm_core::rng::rng_from_seed;
use shm_core::scan::parallel_scan;
use std::hint::black_box;

fn write(c: &mut Criterion) {
    let mut g = c.benchmark_group("write_step");
    for h in [24, 72, 128, 156] {
        let w = workload(1, h, 0);
        let m = MemoryState::zeros(h);
        g.throughput(Throughput::Elements((h * h) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, _| {
            b.iter(|| write_step(black_box(&m), &w.cs[0], &w.us[0]).unwrap())
        });
    }
    g.finish();
}

fn sequential_vs_scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("unroll");
    g.sample_size(10);
    for (t, h) in [(256, 24), (1024, 24), (1024, 72), (4096, 24)] {
        let w = workload(t, h, 1);
        let m0 = MemoryState::zeros(h);
        let id = format!("T{t}_H{h}");
        g.bench_function(BenchmarkId::new("sequential", &id), |b| {
            b.iter(|| unroll_sequential(black_box(&m0), &w.cs, &w.us).unwrap())
        });
        g.bench_function(BenchmarkId::new("scan", &id), |b| b.iter(|| parallel_scan(black_box(&m0), &w.cs, &w.us).unwrap()));
    }
    g.finish();
}

fn episode(c: &mut Criterion) {
    let mut g = c.benchmark_group("episode");
    g.sample_size(20);
    for (t, h) in [(70, 16), (200, 8)] {
        let w = workload(t, h, 2);
        let id = format!("T{t}_H{h}");
        g.bench_function(BenchmarkId::new("run_sequence", &id), |b| {
            b.iter(|| run_sequence(&w.params, black_box(&w.xs), EvalMode::Sequential, &mut rng_from_seed(3)).unwrap())
        });
        g.bench_function(BenchmarkId::new("taped_forward_backward", &id), |b| {
            b.iter(|| {
                let tr = run_sequence_taped(&w.params, black_box(&w.xs), &mut rng_from_seed(3)).unwrap();
                let seeds = vec![vec![1.0; h]; t];
                backward(&tr, &seeds).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, write, sequential_vs_scan, episode);
criterion_main!(benches);
