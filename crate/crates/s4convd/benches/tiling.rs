//! Naive vs cache-tiled Vandermonde kernel materialisation.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s4convd::kernelgen::s4d_kernel;
use s4convd::perf::tiled_kernel_materialize;
use s4convd::types::{Cplx, ComplexVec};

fn stable_system(n: usize, seed: u64) -> (ComplexVec, ComplexVec, ComplexVec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = ComplexVec::zeros(n);
    let mut b = ComplexVec::zeros(n);
    let mut c = ComplexVec::zeros(n);
    for i in 0..n {
        let radius = 0.9 * rng.gen::<f64>();
        let angle = std::f64::consts::TAU * rng.gen::<f64>();
        a.set(i, Cplx { re: radius * angle.cos(), im: radius * angle.sin() });
        b.set(i, Cplx { re: rng.gen_range(-1.0..1.0), im: rng.gen_range(-1.0..1.0) });
        c.set(i, Cplx { re: rng.gen_range(-1.0..1.0), im: rng.gen_range(-1.0..1.0) });
    }
    (a, b, c)
}

fn bench_tiling(criterion: &mut Criterion) {
    let (n, l) = (256, 2048);
    let (a, b, c) = stable_system(n, 3);

    let mut group = criterion.benchmark_group("kernel_materialize");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("naive", format!("n{n}_l{l}")), |bench| {
        bench.iter(|| black_box(s4d_kernel(&a, &b, &c, l).unwrap()))
    });
    for tile in [8, 16, 32, 64] {
        group.bench_function(BenchmarkId::new("tiled", format!("n{n}_l{l}_t{tile}")), |bench| {
            bench.iter(|| black_box(tiled_kernel_materialize(&a, &b, &c, l, tile).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_tiling);
criterion_main!(benches);
