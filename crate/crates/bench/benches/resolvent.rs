use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use twohab_core::calculus::{DensePath, SpectralPath};
use twohab_core::oracle::{build_2d_operator, CrankNicolson};
use twohab_core::resolvent::{apply_resolvent, GridFunction, HabitatConfig, ResolventWorkspace};
use twohab_core::suites::RunConfig;
use twohab_core::sweep::{resolvent_norm, NormKind};

fn config(n_t: usize) -> HabitatConfig {
    RunConfig::reference().habitat.with_grid(n_t, 129, 193)
}

fn data(cfg: &HabitatConfig) -> GridFunction {
    GridFunction::from_fn(cfg, |_, x, y| {
        Complex64::new((1.0 + x).cos() * y * (1.0 - y), 0.0)
    })
}

fn workspace(c: &mut Criterion) {
    let lam = Complex64::new(3.0, 7.0);
    let mut g = c.benchmark_group("assemble_workspace");
    for n_t in [8, 16, 32] {
        let cfg = config(n_t);
        let op = cfg.transversal().unwrap();
        g.bench_with_input(BenchmarkId::new("spectral", n_t), &cfg, |b, cfg| {
            b.iter(|| ResolventWorkspace::assemble(SpectralPath::new(&op), cfg, black_box(lam), 0.3).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("dense", n_t), &cfg, |b, cfg| {
            b.iter(|| ResolventWorkspace::assemble(DensePath::new(&op), cfg, black_box(lam), 0.3).unwrap())
        });
    }
    g.finish();
}

fn apply(c: &mut Criterion) {
    let lam = Complex64::new(1.0, 1.0);
    let mut g = c.benchmark_group("apply_resolvent");
    for n_t in [8, 16, 32] {
        let cfg = config(n_t);
        let f = data(&cfg);
        g.bench_with_input(BenchmarkId::from_parameter(n_t), &f, |b, f| {
            b.iter(|| apply_resolvent(&cfg, black_box(lam), f).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let lam = Complex64::new(1.0, 1.0);
    let mut g = c.benchmark_group("finite_difference");
    for n_t in [8, 16] {
        let cfg = config(n_t);
        let op = build_2d_operator(&cfg).unwrap();
        let f = data(&cfg);
        g.bench_with_input(BenchmarkId::new("factor_and_solve", n_t), &f, |b, f| {
            b.iter(|| op.factor(black_box(lam)).unwrap().solve(f).unwrap())
        });
        let cn = CrankNicolson::new(&op, 5e-4).unwrap();
        let x0 = op.pack(&f).unwrap();
        g.bench_with_input(BenchmarkId::new("crank_nicolson_10_steps", n_t), &x0, |b, x0| {
            b.iter(|| {
                let mut x = x0.clone();
                cn.advance(&mut x, 10);
                x
            })
        });
    }
    g.finish();
}

fn norm(c: &mut Criterion) {
    let cfg = config(16);
    c.bench_function("resolvent_norm_p2", |b| {
        b.iter(|| resolvent_norm(&cfg, black_box(Complex64::new(10.0, 10.0)), NormKind::P2, 0.3, 1).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = workspace, apply, oracle, norm
}
criterion_main!(benches);
