//! Criterion benchmarks for the hot kernels: spectral round trips, the
//! splitting step, the weighted Poisson solve, resonance-table assembly,
//! and one step of the coupled limit integrator.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use gpelab_core::fastwave::{
    acoustic_eigensystem, q2_tables, WaveCoords, DEFAULT_GAP_TOL, DEFAULT_RES_TOL_COEFF,
};
use gpelab_core::gpe::{build_initial_state, strang_step, InitialData};
use gpelab_core::grid::{forward, inverse};
use gpelab_core::helmholtz::project;
use gpelab_core::limits::{evolve_oscillating, OscillatingOptions};
use gpelab_core::{Complex64, Reality, TorusField, TorusGrid};

fn fft_roundtrip(c: &mut Criterion) {
    let grid = TorusGrid::unit(1, 256).unwrap();
    let field = TorusField::from_fn_real(grid, 1, |x, _| (3.0 * x[0]).cos() + 0.2 * x[0].sin());
    c.bench_function("fft_roundtrip_1d_256", |b| {
        b.iter(|| {
            let spec = forward(&field);
            inverse(&spec, Reality::Real)
        })
    });
}

fn splitting_step(c: &mut Criterion) {
    let grid = TorusGrid::unit(1, 256).unwrap();
    let rho0 = TorusField::from_fn_real(grid, 1, |x, _| 1.0 + 0.3 * x[0].cos());
    let phi0 = TorusField::from_fn_real(grid, 1, |x, _| 0.1 * x[0].cos());
    let s0 = TorusField::from_fn_real(grid, 1, |x, _| 0.05 * x[0].sin());
    let data = InitialData {
        rho0: &rho0,
        phi0: &phi0,
        s0: &s0,
        winding: [0.0; 2],
    };
    let state = build_initial_state(&data, 0.1, 1.0).unwrap();
    c.bench_function("strang_step_1d_256", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| {
                strang_step(&mut s, &rho0, 1e-4).unwrap();
                s
            },
            BatchSize::SmallInput,
        )
    });
}

fn weighted_poisson(c: &mut Criterion) {
    let grid = TorusGrid::unit(2, 64).unwrap();
    let rho0 = TorusField::from_fn_real(grid, 1, |x, _| 1.0 + 0.3 * x[0].cos());
    let f = TorusField::from_fn_real(grid, 2, |x, comp| {
        if comp == 0 {
            (x[0] + 2.0 * x[1]).cos()
        } else {
            (2.0 * x[0] - x[1]).sin()
        }
    });
    c.bench_function("weighted_projection_2d_64", |b| {
        b.iter(|| project(&f, &rho0, 1e-10).unwrap())
    });
}

fn resonance_tables(c: &mut Criterion) {
    let grid = TorusGrid::unit(1, 128).unwrap();
    let rho0 = TorusField::from_fn_real(grid, 1, |_, _| 1.0);
    let eig = acoustic_eigensystem(&rho0, 10, 20).unwrap();
    c.bench_function("q2_tables_m20", |b| {
        b.iter(|| q2_tables(&eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap())
    });
}

fn oscillating_step(c: &mut Criterion) {
    let grid = TorusGrid::unit(1, 128).unwrap();
    let rho0 = TorusField::from_fn_real(grid, 1, |_, _| 1.0);
    let eig = acoustic_eigensystem(&rho0, 10, 20).unwrap();
    let tables = q2_tables(&eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
    let mut coords = WaveCoords::zeros(eig.len());
    for j in 0..eig.len() {
        let z = Complex64::new(0.3 / (1.0 + j as f64), 0.1);
        coords.plus[j] = z;
        coords.minus[j] = z.conj();
    }
    let m0 = TorusField::from_fn_real(grid, 1, |_, _| 1.0);
    let opts = OscillatingOptions::default();
    // One fixed step: integrate over exactly one dt.
    let dt = 1e-3;
    c.bench_function("oscillating_step_m20", |b| {
        b.iter(|| {
            let opts = OscillatingOptions { dt, ..opts };
            evolve_oscillating(&eig, &tables, &coords, &m0, dt, &[], &opts).unwrap()
        })
    });
}

criterion_group!(
    benches,
    fft_roundtrip,
    splitting_step,
    weighted_poisson,
    resonance_tables,
    oscillating_step
);
criterion_main!(benches);
