//! Benchmarks for the hot paths: nonlinear kernel evaluation, residual and
//! Jacobian assembly, and a full damped-Newton solve on a small hierarchy.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use crvex_core::fem::build_spaces;
use crvex_core::mesh::{
    build_criss_cross, compute_metrics, red_refine, DirichletSelector, MeshMetrics, Rect,
    Triangulation, Vec2,
};
use crvex_core::nfunction::{discretize_exponent, ExponentField, PhiKit};
use crvex_core::solver::{newton_solve, CrSystem, NewtonSystem, SolverConfig};

/// Criss-cross mesh of (-1,1)^2 refined to the given level.
fn mesh_at_level(level: u32) -> (Triangulation, MeshMetrics) {
    let mut mesh = build_criss_cross(2, Rect::symmetric_unit(), DirichletSelector::All)
        .expect("valid mesh");
    for _ in 1..level {
        mesh = red_refine(&mesh);
    }
    let metrics = compute_metrics(&mesh);
    (mesh, metrics)
}

fn bench_kernel(c: &mut Criterion) {
    let kit = PhiKit::new(1.7, 1e-4).expect("valid kernel");
    let points: Vec<Vec2> = (0..256)
        .map(|i| {
            let r = 10f64.powf(-3.0 + 6.0 * (i as f64) / 255.0);
            let t = 0.1 * i as f64;
            Vec2::new(r * t.cos(), r * t.sin())
        })
        .collect();

    let mut group = c.benchmark_group("kernel");
    group.bench_function("eval_a_256", |b| {
        b.iter(|| {
            let mut acc = Vec2::zeros();
            for &a in &points {
                acc += kit.eval_a(black_box(a));
            }
            acc
        })
    });
    group.bench_function("eval_f_256", |b| {
        b.iter(|| {
            let mut acc = Vec2::zeros();
            for &a in &points {
                acc += kit.eval_f(black_box(a));
            }
            acc
        })
    });
    group.bench_function("eval_phi_conjugate_256", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for &a in &points {
                acc += kit.eval_phi_conjugate(black_box(a.norm())).expect("s >= 0");
            }
            acc
        })
    });
    group.finish();
}

fn bench_assembly(c: &mut Criterion) {
    let (mesh, metrics) = mesh_at_level(3);
    let spaces = build_spaces(&mesh);
    let field = ExponentField::new(1.7, 1.0, 1.0).expect("valid exponent field");
    let exponents = discretize_exponent(&metrics, &field);
    let f_h = vec![1.0; mesh.n_elements()];
    let system = CrSystem::new(&mesh, &metrics, &spaces, &exponents, 1e-4, f_h)
        .expect("valid system");
    let u: Vec<f64> = (0..system.dim()).map(|i| 0.1 * (0.37 * i as f64).sin()).collect();
    let mut jac = system.jacobian_pattern();

    let mut group = c.benchmark_group("assembly_level3");
    group.bench_function("residual", |b| b.iter(|| system.residual(black_box(&u))));
    group.bench_function("jacobian", |b| {
        b.iter(|| system.jacobian_into(black_box(&u), &mut jac).expect("assembles"))
    });
    group.finish();
}

fn bench_solve(c: &mut Criterion) {
    let (mesh, metrics) = mesh_at_level(3);
    let spaces = build_spaces(&mesh);
    let field = ExponentField::new(1.7, 1.0, 1.0).expect("valid exponent field");
    let exponents = discretize_exponent(&metrics, &field);
    let f_h = vec![1.0; mesh.n_elements()];
    let system = CrSystem::new(&mesh, &metrics, &spaces, &exponents, 1e-4, f_h)
        .expect("valid system");
    let config = SolverConfig::default();
    let u0 = vec![0.0; system.dim()];

    let mut group = c.benchmark_group("newton");
    group.sample_size(10);
    group.bench_function("solve_level3_cold", |b| {
        b.iter(|| newton_solve(&system, &config, black_box(&u0)).expect("converges"))
    });
    group.finish();
}

fn short_config() -> Criterion {
    Criterion::default()
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(2))
}

criterion_group! {
    name = benches;
    config = short_config();
    targets = bench_kernel, bench_assembly, bench_solve
}
criterion_main!(benches);
