use acert_core::fourier::{default_xi_grid, estimate_charfn, Localization};
use acert_core::noise::channel;
use acert_core::sde::{couple_one_step, simulate_brownian, BrownianSdeSpec, SdeModel};
use acert_core::spde::{kappa_eps, simulate_spde, HeatKernelCalc, SpdeGrid, SpdeSpec};
use acert_core::{parse_expr, CoeffSpec, Env, Expr, RngStream};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

fn rng(c: &mut Criterion) {
    let mut s = RngStream::new(1, channel::stream(channel::DRIVE, 0));
    let mut buf = vec![0.0; 4096];
    c.bench_function("normals_4096", |b| b.iter(|| s.fill_normal(black_box(&mut buf))));
}

fn expr(c: &mut Criterion) {
    let p = parse_expr("abs(x)^0.75 + 0.1*sin(3*x)").unwrap().compile();
    c.bench_function("eval_compiled", |b| b.iter(|| p.eval(&Env::with_x(black_box(0.37))).unwrap()));
}

fn sde(c: &mut Criterion) {
    let spec = BrownianSdeSpec::new(CoeffSpec::parse("abs(x)^0.75 + 0.1", Some(0.75), 1.0), CoeffSpec::constant(0.0), 0.0);
    c.bench_function("brownian_1000_paths_h2e-10", |b| {
        b.iter(|| simulate_brownian(&spec, 1000, 1.0 / 1024.0, 1).unwrap())
    });
    let eps: Vec<f64> = (3..=9).map(|k| 0.5f64.powi(k)).collect();
    c.bench_function("coupling_1000_paths", |b| {
        b.iter(|| couple_one_step(SdeModel::Brownian(&spec), &eps, 1000, 1.0 / 1024.0, 1).unwrap())
    });
}

fn charfn(c: &mut Criterion) {
    let mut s = RngStream::new(2, 0);
    let mut x = vec![0.0; 20_000];
    s.fill_normal(&mut x);
    let grid = default_xi_grid(1000.0, 60);
    c.bench_function("charfn_20000x100", |b| {
        b.iter(|| estimate_charfn(&x, &[], Localization::None, &grid).unwrap())
    });
}

fn heat(c: &mut Criterion) {
    let calc = HeatKernelCalc::default();
    c.bench_function("kappa_eps_2e-8", |b| b.iter(|| kappa_eps(0.5, black_box(1.0 / 256.0), &calc)));
    let spec = SpdeSpec::new(CoeffSpec::constant(1.0), CoeffSpec::constant(0.0), Expr::Lit(0.0), 0.5);
    let mut g = c.benchmark_group("spde");
    g.sample_size(10);
    g.bench_function("spde_32_cells_50_paths", |b| {
        b.iter_batched(|| (), |_| simulate_spde(&spec, 50, SpdeGrid::with_ratio(32, 0.25), 1, &[]).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, rng, expr, sde, charfn, heat);
criterion_main!(benches);
