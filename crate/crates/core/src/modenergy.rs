//! The modulated energy functional, its density-variation corrections, and
//! the convergence functionals measured along paired trajectories.
//!
//! For a wave state `psi` (small parameter `eps`, scaling `alpha`), a limit
//! flow velocity `v`, and the slow wave-coordinate profile `V0`, define the
//! modulated field
//!
//! ```text
//! w(t) = v + L2(t/eps) V0 / sqrt(rho0)
//! ```
//!
//! (`L1`, `L2` are the scalar/vector components of the wave group) and the
//! modulated energy
//!
//! ```text
//! H(t) = 1/2 int |(eps^alpha grad - i w) psi|^2
//!      + 1/2 int |phi - L1(t/eps) V0|^2 ,        phi = (|psi|^2 - rho0)/eps.
//! ```
//!
//! The first integral is the `kinetic_part`, the second the
//! `fluctuation_part`.  The same quantity regroups exactly (Madelung split
//! of the covariant derivative) as
//!
//! ```text
//! H(t) = eps^(2 alpha)/2 int |grad sqrt(rho)|^2                 (quantum_part)
//!      + 1/2 int |(J - rho w)/sqrt(rho)|^2                      (current_part)
//!      + fluctuation_part ,
//! ```
//!
//! with `rho = |psi|^2` and `J = eps^alpha Im(conj(psi) grad psi)`; the
//! report carries both evaluations so the identity is checkable.  The
//! corrections are
//!
//! ```text
//! W(t) = -1/2 int (rho - rho0) |w|^2 ,
//! S(t) = -int (|v|^2/2 - pi) (rho - rho0) ,
//! ```
//!
//! with `pi` the limit pressure recovered from the flow momentum.  The
//! L^{4/3} current defect `||J - rho0 w||_{4/3}` obeys the Hoelder chain
//!
//! ```text
//! ||J - rho0 w||_{4/3} <= ||sqrt(rho)||_4 ||(J - rho w)/sqrt(rho)||_2
//!                       + ||rho - rho0||_2 ||w||_4 ,
//! ```
//!
//! whose two sides the report exposes as `current_defect_l43` against
//! `defect_modulated_part + defect_density_part`.
//!
//! Weak-* convergence of the current is probed against a fixed basis of
//! nine low Fourier modes ([`test_functions`]): the report stores the
//! signed pairings `int (J - rho0 v) . (e_c f_k) dx` per mode and component,
//! and [`convergence_functionals`] accumulates their time integrals by the
//! trapezoidal rule.

use crate::error::{CoreError, Result};
use crate::fastwave::{wave_group_fields, EigenSystem};
use crate::gpe::WaveState;
use crate::grid::{gradient, l2_norm, lp_norm, same_grid, Reality, TorusField, TorusGrid};
use crate::hydro::observables;
use crate::limits::{anelastic_pressure, velocity, OscillatingState};
use num_complex::Complex64;

/// Number of scalar test functions probing weak-* current convergence.
pub const N_TEST_MODES: usize = 9;

/// All scalar functionals of the modulated-energy analysis at one time.
#[derive(Clone, Debug)]
pub struct ModulatedEnergyReport {
    pub time: f64,
    pub eps: f64,
    /// `H(t)`, the modulated energy: `kinetic_part + fluctuation_part`.
    pub h: f64,
    /// `1/2 int |(eps^alpha grad - i w) psi|^2`.
    pub kinetic_part: f64,
    /// `1/2 int |phi - L1(t/eps) V0|^2`.
    pub fluctuation_part: f64,
    /// `eps^(2 alpha)/2 int |grad sqrt(rho)|^2`.
    pub quantum_part: f64,
    /// `1/2 int |(J - rho w)/sqrt(rho)|^2`.
    pub current_part: f64,
    /// `quantum_part + current_part + fluctuation_part`; equals `h` up to
    /// spectral aliasing of the pointwise algebra.
    pub regrouped_h: f64,
    /// Correction `W(t)`.
    pub w: f64,
    /// Correction `S(t)`.
    pub s: f64,
    /// `||rho - rho0||_{L^2}`.
    pub density_error: f64,
    /// `||J - rho0 w||_{L^{4/3}}`.
    pub current_defect_l43: f64,
    /// `||sqrt(rho)||_4 * ||(J - rho w)/sqrt(rho)||_2`.
    pub defect_modulated_part: f64,
    /// `||rho - rho0||_2 * ||w||_4`.
    pub defect_density_part: f64,
    /// Signed pairings `int (J - rho0 v) . (e_c f_k) dx`, laid out
    /// `[k * dim + c]` over the [`test_functions`] basis.
    pub weak_current_pairings: Vec<f64>,
}

/// Labels of the fixed scalar test-function basis, matching
/// [`test_functions`] order.
pub fn test_function_labels(dim: usize) -> Vec<&'static str> {
    match dim {
        1 => vec![
            "const", "cos_x", "sin_x", "cos_2x", "sin_2x", "cos_3x", "sin_3x", "cos_4x", "sin_4x",
        ],
        _ => vec![
            "const",
            "cos_x1",
            "sin_x1",
            "cos_x2",
            "sin_x2",
            "cos_x1px2",
            "sin_x1px2",
            "cos_x1mx2",
            "sin_x1mx2",
        ],
    }
}

/// The fixed basis of nine scalar Fourier modes used to probe weak-*
/// convergence of the current: in one dimension the constant and the first
/// four cosine/sine pairs; in two dimensions the constant, the first modes
/// of each coordinate, and the diagonal pair `x1 +- x2`.
pub fn test_functions(grid: TorusGrid) -> Vec<TorusField> {
    let phases: Vec<Box<dyn Fn(&[f64; 2]) -> f64>> = if grid.dim() == 1 {
        (1..=4)
            .map(|k| {
                let kf = k as f64;
                Box::new(move |x: &[f64; 2]| kf * x[0]) as Box<dyn Fn(&[f64; 2]) -> f64>
            })
            .collect()
    } else {
        vec![
            Box::new(|x: &[f64; 2]| x[0]),
            Box::new(|x: &[f64; 2]| x[1]),
            Box::new(|x: &[f64; 2]| x[0] + x[1]),
            Box::new(|x: &[f64; 2]| x[0] - x[1]),
        ]
    };
    let mut out = Vec::with_capacity(N_TEST_MODES);
    out.push(TorusField::from_fn_real(grid, 1, |_, _| 1.0));
    for phase in &phases {
        out.push(TorusField::from_fn_real(grid, 1, |x, _| phase(x).cos()));
        out.push(TorusField::from_fn_real(grid, 1, |x, _| phase(x).sin()));
    }
    out
}

fn check_times(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
        return Err(CoreError::TimeMismatch { a, b });
    }
    Ok(())
}

/// Evaluate the modulated energy, its corrections, and the current-defect
/// functionals for a wave state against the coupled limit state (flow
/// momentum plus slow wave coordinates) at the same time.
pub fn modulated_energy(
    wave: &WaveState,
    limit: &OscillatingState,
    eig: &EigenSystem,
    project_tol: f64,
) -> Result<ModulatedEnergyReport> {
    same_grid(&wave.psi, &eig.rho0)?;
    same_grid(&limit.momentum, &eig.rho0)?;
    check_times(wave.time, limit.time)?;
    let grid = wave.psi.grid();
    let dim = grid.dim();
    let cell = grid.cell_volume();
    let ea = wave.eps.powf(wave.alpha);

    let hydro = observables(wave, &eig.rho0)?;
    let v = velocity(&limit.momentum, &eig.rho0)?;
    let tau = wave.time / wave.eps;
    let (l1, l2) = wave_group_fields(eig, &limit.coords, tau)?;

    // Modulated field w = v + L2(t/eps) V0 / sqrt(rho0), real by the
    // conjugacy of physical coordinates.
    let mut modw = TorusField::zeros(grid, dim, Reality::Real);
    for c in 0..dim {
        for p in 0..grid.points() {
            let val = v.comp(c)[p].re + l2.comp(c)[p].re / eig.sqrt_rho0.comp(0)[p].re;
            modw.comp_mut(c)[p] = Complex64::new(val, 0.0);
        }
    }

    let grad_psi = gradient(&wave.psi)?;
    let psi = wave.psi.comp(0);
    let rho = hydro.rho.comp(0);
    let rho0 = eig.rho0.comp(0);

    // Kinetic part: 1/2 int |(eps^alpha grad - i w) psi|^2.
    let mut kinetic = 0.0;
    for c in 0..dim {
        let g = grad_psi.comp(c);
        let wc = modw.comp(c);
        for p in 0..grid.points() {
            let d = ea * g[p] - Complex64::new(0.0, wc[p].re) * psi[p];
            kinetic += d.norm_sqr();
        }
    }
    let kinetic_part = 0.5 * kinetic * cell;

    // Fluctuation part: 1/2 int |phi - L1 V0|^2.
    let phi = hydro.phi.comp(0);
    let l1v = l1.comp(0);
    let mut fluct = 0.0;
    for p in 0..grid.points() {
        let d = phi[p].re - l1v[p].re;
        fluct += d * d;
    }
    let fluctuation_part = 0.5 * fluct * cell;
    let h = kinetic_part + fluctuation_part;

    // Quantum part: eps^(2 alpha)/2 int |grad sqrt(rho)|^2.
    let mut sqrt_rho = TorusField::zeros(grid, 1, Reality::Real);
    for p in 0..grid.points() {
        let dens = rho[p].re;
        if dens <= 0.0 {
            return Err(CoreError::NonPositiveDensity { min: dens });
        }
        sqrt_rho.comp_mut(0)[p] = Complex64::new(dens.sqrt(), 0.0);
    }
    let gs = l2_norm(&gradient(&sqrt_rho)?);
    let quantum_part = 0.5 * ea * ea * gs * gs;

    // Current part: 1/2 int |(J - rho w)/sqrt(rho)|^2, and the defect
    // fields J - rho0 w (limit current) and J - rho0 v (weak-* probe).
    let mut current = 0.0;
    let mut defect = TorusField::zeros(grid, dim, Reality::Real);
    let mut probe = TorusField::zeros(grid, dim, Reality::Real);
    for c in 0..dim {
        let jc = hydro.j.comp(c);
        let wc = modw.comp(c);
        let vc = v.comp(c);
        let sq = sqrt_rho.comp(0);
        for p in 0..grid.points() {
            let d = (jc[p].re - rho[p].re * wc[p].re) / sq[p].re;
            current += d * d;
            defect.comp_mut(c)[p] = Complex64::new(jc[p].re - rho0[p].re * wc[p].re, 0.0);
            probe.comp_mut(c)[p] = Complex64::new(jc[p].re - rho0[p].re * vc[p].re, 0.0);
        }
    }
    let current_part = 0.5 * current * cell;
    let regrouped_h = quantum_part + current_part + fluctuation_part;

    // Corrections W and S and the density error.
    let mut wsum = 0.0;
    for p in 0..grid.points() {
        let dev = rho[p].re - rho0[p].re;
        let mut w2 = 0.0;
        for c in 0..dim {
            let x = modw.comp(c)[p].re;
            w2 += x * x;
        }
        wsum -= 0.5 * dev * w2;
    }
    let w = wsum * cell;

    let pi = anelastic_pressure(&limit.momentum, &eig.rho0, project_tol)?;
    let mut ssum = 0.0;
    for p in 0..grid.points() {
        let dev = rho[p].re - rho0[p].re;
        let mut v2 = 0.0;
        for c in 0..dim {
            let x = v.comp(c)[p].re;
            v2 += x * x;
        }
        ssum -= (0.5 * v2 - pi.comp(0)[p].re) * dev;
    }
    let s = ssum * cell;
    let density_error = {
        let mut d = 0.0;
        for p in 0..grid.points() {
            let dev = rho[p].re - rho0[p].re;
            d += dev * dev;
        }
        (d * cell).sqrt()
    };

    // Hoelder chain of the L^{4/3} current defect.
    let current_defect_l43 = lp_norm(&defect, 4.0 / 3.0);
    let defect_modulated_part = lp_norm(&sqrt_rho, 4.0) * (2.0 * current_part).sqrt();
    let defect_density_part = density_error * lp_norm(&modw, 4.0);

    // Signed weak-* pairings against the fixed test basis.
    let basis = test_functions(grid);
    let mut weak_current_pairings = Vec::with_capacity(N_TEST_MODES * dim);
    for f in &basis {
        let fv = f.comp(0);
        for c in 0..dim {
            let pc = probe.comp(c);
            let mut acc = 0.0;
            for p in 0..grid.points() {
                acc += pc[p].re * fv[p].re;
            }
            weak_current_pairings.push(acc * cell);
        }
    }

    Ok(ModulatedEnergyReport {
        time: wave.time,
        eps: wave.eps,
        h,
        kinetic_part,
        fluctuation_part,
        quantum_part,
        current_part,
        regrouped_h,
        w,
        s,
        density_error,
        current_defect_l43,
        defect_modulated_part,
        defect_density_part,
        weak_current_pairings,
    })
}

/// Time-aggregated convergence functionals of a report series.
#[derive(Clone, Debug)]
pub struct ConvergenceFunctionals {
    pub times: Vec<f64>,
    /// `sup_t ||rho - rho0||_{L^2}` over the snapshots.
    pub sup_density_error: f64,
    pub h_initial: f64,
    pub max_h: f64,
    pub max_w_abs: f64,
    pub max_s_abs: f64,
    /// Cumulative weak-* defect `|int_0^{t_i} pairing ds|` per test mode
    /// (trapezoidal in time, maximized over components): `[mode][i]`.
    pub weak_defects: Vec<Vec<f64>>,
    /// Largest entry of `weak_defects`.
    pub max_weak_defect: f64,
    /// `max_t` of the two Hoelder factors bounding the L^{4/3} defect.
    pub max_defect_modulated: f64,
    pub max_defect_density: f64,
}

/// Aggregate a time-ordered series of reports into the convergence
/// functionals: supremum-in-time norms and the trapezoidal time integrals
/// of the weak-* current pairings.
pub fn convergence_functionals(
    reports: &[ModulatedEnergyReport],
) -> Result<ConvergenceFunctionals> {
    if reports.is_empty() {
        return Err(CoreError::InvalidParameter(
            "convergence functionals need at least one report".into(),
        ));
    }
    let n_pair = reports[0].weak_current_pairings.len();
    if n_pair % N_TEST_MODES != 0 || n_pair == 0 {
        return Err(CoreError::ShapeMismatch {
            expected: format!("a multiple of {N_TEST_MODES} pairings"),
            got: format!("{n_pair}"),
        });
    }
    let dim = n_pair / N_TEST_MODES;
    for pair in reports.windows(2) {
        if pair[1].time <= pair[0].time {
            return Err(CoreError::InvalidParameter(format!(
                "report times must be strictly increasing, got {} then {}",
                pair[0].time, pair[1].time
            )));
        }
    }
    for r in reports {
        if r.weak_current_pairings.len() != n_pair {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{n_pair} pairings"),
                got: format!("{}", r.weak_current_pairings.len()),
            });
        }
    }

    let times: Vec<f64> = reports.iter().map(|r| r.time).collect();
    // Cumulative trapezoidal integral of each signed pairing series.
    let mut cumulative = vec![vec![0.0f64; reports.len()]; n_pair];
    for i in 1..reports.len() {
        let dt = times[i] - times[i - 1];
        for (q, series) in cumulative.iter_mut().enumerate() {
            let inc = 0.5
                * dt
                * (reports[i - 1].weak_current_pairings[q] + reports[i].weak_current_pairings[q]);
            series[i] = series[i - 1] + inc;
        }
    }
    let weak_defects: Vec<Vec<f64>> = (0..N_TEST_MODES)
        .map(|k| {
            (0..reports.len())
                .map(|i| {
                    (0..dim)
                        .map(|c| cumulative[k * dim + c][i].abs())
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    let max_weak_defect = weak_defects.iter().flatten().copied().fold(0.0, f64::max);

    Ok(ConvergenceFunctionals {
        times,
        sup_density_error: reports.iter().map(|r| r.density_error).fold(0.0, f64::max),
        h_initial: reports[0].h,
        max_h: reports.iter().map(|r| r.h).fold(0.0, f64::max),
        max_w_abs: reports.iter().map(|r| r.w.abs()).fold(0.0, f64::max),
        max_s_abs: reports.iter().map(|r| r.s.abs()).fold(0.0, f64::max),
        weak_defects,
        max_weak_defect,
        max_defect_modulated: reports
            .iter()
            .map(|r| r.defect_modulated_part)
            .fold(0.0, f64::max),
        max_defect_density: reports
            .iter()
            .map(|r| r.defect_density_part)
            .fold(0.0, f64::max),
    })
}
