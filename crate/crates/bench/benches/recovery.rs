use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use wbsr::multiindex::{enumerate_lambda, sample_measure};
use wbsr::pde::{solve_snapshot, AffineDiffusion, Decay, FemMesh, MeanField};
use wbsr::pipeline::run_experiment;
use wbsr::sensing::{build_sampling_matrix, empirical_wbrip, random_matrix, Ensemble};
use wbsr::solver::solve_wg_bpdn;
use wbsr::{SolveSettings, WeightRule, WeightSequence};
use wbsr_bench::{gaussian_problem, pde_config};

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_wg_bpdn");
    for &(m, blocks, cols) in &[(40, 16, 1), (80, 32, 8), (200, 64, 32)] {
        let p = gaussian_problem(m, blocks, 4, 3, cols, 7);
        let eta = 1e-3 * p.y.norm();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{}x{cols}", blocks * 4)), &p, |b, p| {
            b.iter(|| solve_wg_bpdn(&p.a, &p.y, &p.structure, &p.weights, eta, &SolveSettings::default()).unwrap())
        });
    }
    group.finish();
}

fn rip(c: &mut Criterion) {
    let mut group = c.benchmark_group("empirical_wbrip");
    let p = gaussian_problem(30, 12, 2, 1, 1, 3);
    for s in [2.0, 3.0, 4.0] {
        let a = random_matrix(Ensemble::Gaussian, 30, 24, 3).unwrap();
        let w = WeightSequence::ones(12);
        group.bench_with_input(BenchmarkId::from_parameter(s), &s, |b, &s| {
            b.iter(|| empirical_wbrip(&a, &p.structure, &w, s).unwrap())
        });
    }
    group.finish();
}

fn index_sets(c: &mut Criterion) {
    let rule = WeightRule::polynomial(1.1, 0.5).unwrap();
    let mut group = c.benchmark_group("enumerate_lambda");
    for s in [16.0, 64.0, 256.0] {
        group.bench_with_input(BenchmarkId::from_parameter(s), &s, |b, &s| {
            b.iter(|| enumerate_lambda(&rule, black_box(s), 50).unwrap())
        });
    }
    group.finish();

    let lambda = enumerate_lambda(&rule, 64.0, 10).unwrap();
    let samples = sample_measure(2000, 10, 1);
    c.bench_function("build_sampling_matrix/2000", |b| {
        b.iter(|| build_sampling_matrix(&lambda, &samples, true).unwrap())
    });
}

fn pde(c: &mut Criterion) {
    let op = AffineDiffusion::new(MeanField::Constant(1.0), 0.1, Decay::Algebraic { r: 3.0 }).unwrap();
    let y = sample_measure(1, 20, 2).remove(0);
    let mut group = c.benchmark_group("solve_snapshot");
    for n in [255usize, 1023, 4095] {
        let mesh = FemMesh::new(n).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &mesh, |b, mesh| {
            b.iter(|| solve_snapshot(&op, &y, 20, mesh, &|_| 1.0).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for s in [8.0, 16.0] {
        let config = pde_config(s, 127);
        group.bench_with_input(BenchmarkId::from_parameter(s), &config, |b, config| {
            b.iter(|| run_experiment(config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solver, rip, index_sets, pde);
criterion_main!(benches);
