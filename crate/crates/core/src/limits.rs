//! The two limit systems of the small-parameter regime: the anelastic
//! (density-weighted incompressible) flow and the resonance-averaged
//! oscillating system in wave coordinates.
//!
//! Anelastic flow, written for the momentum `m = rho0 v`:
//!
//! ```text
//! d_t m + div(rho0 v (x) v) + rho0 grad pi = 0,    div m = 0,
//! ```
//!
//! equivalently `d_t m = -H[div(rho0 v (x) v)]` with `H` the weighted
//! Helmholtz projection; the pressure is recovered from the discarded
//! gradient part.  Time stepping is classical RK4 with a CFL-limited step
//! and a projection cleanup after every full step.  On a one-dimensional
//! torus the solenoidal constraint forces `m` to be a constant, and the
//! projected flux divergence vanishes, so the flow is static.
//!
//! The classical incompressible Euler solver (constant density, Leray
//! projection through the analytic spectral multiplier) is provided as an
//! independent reference: for `rho0 = 1` the two must agree to solver
//! tolerance.
//!
//! Oscillating system, posed in the eigencoordinates of the acoustic
//! operator:
//!
//! ```text
//! d_t b + Q1(v(t), b) + Q2(b, b) = 0,
//! ```
//!
//! coupled to the anelastic velocity `v(t)`.  Both averaged forms are
//! skew-symmetric with respect to the pairing, so the wave energy `||b||`
//! is a constant of motion; RK4 preserves it to `O(dt^4)` per unit time and
//! the default step is chosen so the drift stays far below 1e-7 per unit
//! time.

use crate::error::{CoreError, Result};
use crate::fastwave::{
    self, apply_q1, apply_q2, expand, EigenSystem, Q1Context, Q2Tables, WaveCoords,
};
use crate::gpe::plan_targets;
use crate::grid::{
    check_density, dealias, divergence, l2_norm, outer, same_grid, tensor_divergence,
    weighted_inner_product, TorusField,
};
use crate::helmholtz;

/// Default CFL number of the advective step limit `dt <= cfl * dx / |v|_inf`.
pub const DEFAULT_CFL: f64 = 0.5;
/// The wave step keeps `omega * dt` below this number, where `omega` is the
/// frequency scale of [`oscillating_frequency_scale`].
pub const WAVE_PHASE_BUDGET: f64 = 0.02;

/// Snapshot of an anelastic (or Euler) trajectory.  `momentum = rho0 v`
/// (for the Euler reference, `rho0 = 1` and the momentum is the velocity).
#[derive(Clone, Debug)]
pub struct FlowState {
    pub momentum: TorusField,
    pub time: f64,
}

/// Options shared by the flow integrators.
#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    /// Base (maximum) time step.
    pub dt: f64,
    /// CFL number for the advective limit.
    pub cfl: f64,
    /// Absolute residual tolerance of the weighted projection solves.
    pub project_tol: f64,
    /// Tolerance coefficient of the solenoidality check on the initial
    /// momentum (`defect <= tol * (1 + ||m||)`).
    pub sol_tol: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            dt: 5e-3,
            cfl: DEFAULT_CFL,
            project_tol: 1e-11,
            sol_tol: 1e-6,
            max_steps: 2_000_000,
        }
    }
}

/// Pointwise velocity `v = m / rho0`.
pub fn velocity(momentum: &TorusField, rho0: &TorusField) -> Result<TorusField> {
    same_grid(momentum, rho0)?;
    check_density(rho0)?;
    let grid = momentum.grid();
    let mut v = momentum.clone();
    for c in 0..v.components() {
        for p in 0..grid.points() {
            let w = rho0.comp(0)[p].re;
            v.comp_mut(c)[p] /= w;
        }
    }
    Ok(v)
}

/// Kinetic energy `0.5 integral |m|^2 / rho0 = 0.5 integral rho0 |v|^2`.
pub fn kinetic_energy(momentum: &TorusField, rho0: &TorusField) -> Result<f64> {
    Ok(0.5 * weighted_inner_product(momentum, momentum, rho0)?.re)
}

/// Momentum tendency `-H[div(rho0 v (x) v)]` with the advective flux formed
/// pointwise and dealiased before differentiation.
pub fn anelastic_rhs(
    momentum: &TorusField,
    rho0: &TorusField,
    project_tol: f64,
) -> Result<TorusField> {
    let v = velocity(momentum, rho0)?;
    let flux = dealias(&outer(momentum, &v)?);
    let div_flux = tensor_divergence(&flux)?;
    let dec = helmholtz::project(&div_flux, rho0, project_tol)?;
    Ok(dec.solenoidal.scaled(-1.0))
}

/// Pressure `pi` of the momentum balance: the zero-mean potential with
/// `rho0 grad pi = -Hperp[div(rho0 v (x) v)]`.
pub fn anelastic_pressure(
    momentum: &TorusField,
    rho0: &TorusField,
    project_tol: f64,
) -> Result<TorusField> {
    let v = velocity(momentum, rho0)?;
    let flux = dealias(&outer(momentum, &v)?);
    let div_flux = tensor_divergence(&flux)?;
    let dec = helmholtz::project(&div_flux, rho0, project_tol)?;
    Ok(dec.potential.scaled(-1.0))
}

/// Tendency of the classical incompressible Euler equation,
/// `-P[div(v (x) v)]` with the analytic Leray projection `P`.
pub fn euler_rhs(v: &TorusField) -> Result<TorusField> {
    let flux = dealias(&outer(v, v)?);
    let div_flux = tensor_divergence(&flux)?;
    Ok(helmholtz::leray_project(&div_flux)?.scaled(-1.0))
}

fn check_solenoidal_momentum(m: &TorusField, tol: f64) -> Result<()> {
    let defect = l2_norm(&divergence(m)?);
    let bound = tol * (1.0 + l2_norm(m));
    if defect > bound {
        return Err(CoreError::NotWeightedSolenoidal {
            norm: defect,
            tol: bound,
        });
    }
    Ok(())
}

fn rk4_field<F>(m: &TorusField, dt: f64, rhs: F) -> Result<TorusField>
where
    F: Fn(&TorusField) -> Result<TorusField>,
{
    let k1 = rhs(m)?;
    let mut s = m.clone();
    s.axpy(dt / 2.0, &k1)?;
    let k2 = rhs(&s)?;
    let mut s = m.clone();
    s.axpy(dt / 2.0, &k2)?;
    let k3 = rhs(&s)?;
    let mut s = m.clone();
    s.axpy(dt, &k3)?;
    let k4 = rhs(&s)?;
    let mut out = m.clone();
    out.axpy(dt / 6.0, &k1)?;
    out.axpy(dt / 3.0, &k2)?;
    out.axpy(dt / 3.0, &k3)?;
    out.axpy(dt / 6.0, &k4)?;
    Ok(out)
}

fn advective_dt(base: f64, cfl: f64, spacing: f64, vmax: f64) -> f64 {
    if vmax > 0.0 {
        base.min(cfl * spacing / vmax)
    } else {
        base
    }
}

enum FlowKind {
    Anelastic,
    EulerLeray,
}

fn evolve_flow(
    kind: FlowKind,
    momentum0: &TorusField,
    rho0: &TorusField,
    t_final: f64,
    output_times: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<FlowState>> {
    same_grid(momentum0, rho0)?;
    check_density(rho0)?;
    let grid = momentum0.grid();
    if momentum0.components() != grid.dim() {
        return Err(CoreError::ComponentMismatch {
            expected: grid.dim(),
            got: momentum0.components(),
        });
    }
    if !(opts.dt > 0.0 && opts.cfl > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "flow step dt = {} and cfl = {} must be positive",
            opts.dt, opts.cfl
        )));
    }
    check_solenoidal_momentum(momentum0, opts.sol_tol)?;
    let targets = plan_targets(0.0, t_final, output_times)?;

    let cleanup = |m: &TorusField| -> Result<TorusField> {
        match kind {
            FlowKind::Anelastic => Ok(helmholtz::project(m, rho0, opts.project_tol)?.solenoidal),
            FlowKind::EulerLeray => helmholtz::leray_project(m),
        }
    };
    let rhs = |m: &TorusField| -> Result<TorusField> {
        match kind {
            FlowKind::Anelastic => anelastic_rhs(m, rho0, opts.project_tol),
            FlowKind::EulerLeray => euler_rhs(m),
        }
    };

    let mut cur = cleanup(momentum0)?;
    let mut time = 0.0f64;
    let mut out = Vec::with_capacity(targets.len());
    let mut steps = 0usize;
    for &target in &targets {
        while time < target - 1e-13 * target.abs().max(1.0) {
            let vmax = match kind {
                FlowKind::Anelastic => velocity(&cur, rho0)?.max_abs(),
                FlowKind::EulerLeray => cur.max_abs(),
            };
            let dt = advective_dt(opts.dt, opts.cfl, grid.spacing(), vmax).min(target - time);
            let next = rk4_field(&cur, dt, &rhs)?;
            cur = cleanup(&next)?;
            time += dt;
            steps += 1;
            if steps > opts.max_steps {
                return Err(CoreError::StepBudgetExceeded {
                    budget: opts.max_steps,
                    t_final,
                });
            }
        }
        time = target;
        out.push(FlowState {
            momentum: cur.clone(),
            time,
        });
    }
    Ok(out)
}

/// Integrate the anelastic system from `momentum0` (validated
/// weighted-solenoidal) to `t_final`, landing exactly on the requested
/// output times.
pub fn evolve_anelastic(
    momentum0: &TorusField,
    rho0: &TorusField,
    t_final: f64,
    output_times: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<FlowState>> {
    evolve_flow(
        FlowKind::Anelastic,
        momentum0,
        rho0,
        t_final,
        output_times,
        opts,
    )
}

/// Integrate the classical incompressible Euler equation (`rho0 = 1`,
/// analytic Leray projection) — the independent constant-density reference
/// for [`evolve_anelastic`].
pub fn evolve_euler_leray(
    v0: &TorusField,
    t_final: f64,
    output_times: &[f64],
    opts: &FlowOptions,
) -> Result<Vec<FlowState>> {
    let one = TorusField::from_fn_real(v0.grid(), 1, |_, _| 1.0);
    evolve_flow(FlowKind::EulerLeray, v0, &one, t_final, output_times, opts)
}

/// Limit current carried by WKB-type data: `J0 = rho0 (grad S0 + winding)`.
pub fn limit_current(rho0: &TorusField, s0: &TorusField, winding: [f64; 2]) -> Result<TorusField> {
    check_density(rho0)?;
    same_grid(rho0, s0)?;
    let grid = rho0.grid();
    let mut j = crate::grid::gradient(s0)?;
    for c in 0..grid.dim() {
        for p in 0..grid.points() {
            let w = rho0.comp(0)[p];
            let g = j.comp(c)[p] + winding[c];
            j.comp_mut(c)[p] = w * g;
        }
    }
    Ok(j)
}

/// Initial anelastic velocity carried by a current field:
/// `v0 = H(J0) / rho0` (the weighted-solenoidal share).
pub fn initial_velocity(
    j0: &TorusField,
    rho0: &TorusField,
    project_tol: f64,
) -> Result<TorusField> {
    let dec = helmholtz::project(j0, rho0, project_tol)?;
    velocity(&dec.solenoidal, rho0)
}

/// Initial wave coordinates carried by `(phi0, J0)`:
/// the expansion of `(phi0, Hperp(J0) / sqrt(rho0))`.
pub fn initial_wave_coords(
    eig: &EigenSystem,
    phi0: &TorusField,
    j0: &TorusField,
    project_tol: f64,
) -> Result<WaveCoords> {
    same_grid(phi0, &eig.rho0)?;
    let dec = helmholtz::project(j0, &eig.rho0, project_tol)?;
    let grid = eig.grid();
    let mut vec_part = dec.gradient_part;
    for c in 0..grid.dim() {
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            vec_part.comp_mut(c)[p] /= w;
        }
    }
    expand(eig, phi0, &vec_part, fastwave::DEFAULT_EXPAND_TOL)
}

/// Snapshot of the coupled oscillating/anelastic trajectory.
#[derive(Clone, Debug)]
pub struct OscillatingState {
    pub coords: WaveCoords,
    pub momentum: TorusField,
    pub time: f64,
}

/// Options of the coupled integrator.
#[derive(Clone, Copy, Debug)]
pub struct OscillatingOptions {
    /// Base (maximum) time step; the effective step also honors the wave
    /// phase budget and the advective CFL limit.
    pub dt: f64,
    pub cfl: f64,
    pub project_tol: f64,
    pub sol_tol: f64,
    pub max_steps: usize,
}

impl Default for OscillatingOptions {
    fn default() -> Self {
        OscillatingOptions {
            dt: 5e-3,
            cfl: DEFAULT_CFL,
            project_tol: 1e-11,
            sol_tol: 1e-6,
            max_steps: 2_000_000,
        }
    }
}

/// Frequency scale of the averaged system: the linear form rotates at rates
/// up to `sqrt(kappa_max) |u|_inf`, the quadratic form at rates bounded by
/// its largest coefficient times the wave amplitude.
pub fn oscillating_frequency_scale(
    eig: &EigenSystem,
    tables: &Q2Tables,
    u_inf: f64,
    wave_norm: f64,
) -> f64 {
    let sk = eig.sqrt_kappas.last().copied().unwrap_or(0.0);
    let cmax = tables
        .terms
        .iter()
        .map(|t| t.coeff.norm())
        .fold(0.0, f64::max);
    sk * u_inf + 2.0 * cmax * wave_norm
}

struct CoupledRhs<'a> {
    eig: &'a EigenSystem,
    tables: &'a Q2Tables,
    ctx: Q1Context,
    project_tol: f64,
}

impl CoupledRhs<'_> {
    fn eval(&self, m: &TorusField, b: &WaveCoords) -> Result<(TorusField, WaveCoords)> {
        let dm = anelastic_rhs(m, &self.eig.rho0, self.project_tol)?;
        let u = velocity(m, &self.eig.rho0)?;
        let g = fastwave::q1_matrix(&self.ctx, self.eig, &u)?;
        let mut db = apply_q1(&g, self.eig, b);
        let q2b = apply_q2(self.tables, b, b);
        db.axpy(num_complex::Complex64::new(1.0, 0.0), &q2b);
        db.scale(num_complex::Complex64::new(-1.0, 0.0));
        Ok((dm, db))
    }
}

/// Integrate the coupled system `d_t m = -H div(rho0 v (x) v)`,
/// `d_t b = -Q1(v, b) - Q2(b, b)` with one shared RK4 step.  The wave energy
/// `||b||` and (for smooth flows) the kinetic energy are conserved up to the
/// RK4 drift, which the default step keeps below 1e-9 per unit time.
pub fn evolve_oscillating(
    eig: &EigenSystem,
    tables: &Q2Tables,
    coords0: &WaveCoords,
    momentum0: &TorusField,
    t_final: f64,
    output_times: &[f64],
    opts: &OscillatingOptions,
) -> Result<Vec<OscillatingState>> {
    if tables.n_modes != eig.len() || coords0.len() != eig.len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} wave modes", eig.len()),
            got: format!(
                "tables for {} modes, coordinates for {}",
                tables.n_modes,
                coords0.len()
            ),
        });
    }
    same_grid(momentum0, &eig.rho0)?;
    let grid = eig.grid();
    if momentum0.components() != grid.dim() {
        return Err(CoreError::ComponentMismatch {
            expected: grid.dim(),
            got: momentum0.components(),
        });
    }
    if !(opts.dt > 0.0 && opts.cfl > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "step dt = {} and cfl = {} must be positive",
            opts.dt, opts.cfl
        )));
    }
    check_solenoidal_momentum(momentum0, opts.sol_tol)?;
    let targets = plan_targets(0.0, t_final, output_times)?;

    let rhs = CoupledRhs {
        eig,
        tables,
        ctx: fastwave::q1_context(eig)?,
        project_tol: opts.project_tol,
    };
    let cleanup = |m: &TorusField| -> Result<TorusField> {
        Ok(helmholtz::project(m, &eig.rho0, opts.project_tol)?.solenoidal)
    };

    let mut m = cleanup(momentum0)?;
    let mut b = coords0.clone();
    let mut time = 0.0f64;
    let mut out = Vec::with_capacity(targets.len());
    let mut steps = 0usize;
    let one = num_complex::Complex64::new(1.0, 0.0);

    for &target in &targets {
        while time < target - 1e-13 * target.abs().max(1.0) {
            let u_inf = velocity(&m, &eig.rho0)?.max_abs();
            let omega = oscillating_frequency_scale(eig, tables, u_inf, b.norm());
            let mut dt = advective_dt(opts.dt, opts.cfl, grid.spacing(), u_inf);
            if omega > 0.0 {
                dt = dt.min(WAVE_PHASE_BUDGET / omega);
            }
            let dt = dt.min(target - time);

            // Shared RK4 step over the pair (m, b).
            let (k1m, k1b) = rhs.eval(&m, &b)?;
            let (mut sm, mut sb) = (m.clone(), b.clone());
            sm.axpy(dt / 2.0, &k1m)?;
            sb.axpy(one * (dt / 2.0), &k1b);
            let (k2m, k2b) = rhs.eval(&sm, &sb)?;
            let (mut sm, mut sb) = (m.clone(), b.clone());
            sm.axpy(dt / 2.0, &k2m)?;
            sb.axpy(one * (dt / 2.0), &k2b);
            let (k3m, k3b) = rhs.eval(&sm, &sb)?;
            let (mut sm, mut sb) = (m.clone(), b.clone());
            sm.axpy(dt, &k3m)?;
            sb.axpy(one * dt, &k3b);
            let (k4m, k4b) = rhs.eval(&sm, &sb)?;

            let mut mn = m.clone();
            mn.axpy(dt / 6.0, &k1m)?;
            mn.axpy(dt / 3.0, &k2m)?;
            mn.axpy(dt / 3.0, &k3m)?;
            mn.axpy(dt / 6.0, &k4m)?;
            m = cleanup(&mn)?;
            b.axpy(one * (dt / 6.0), &k1b);
            b.axpy(one * (dt / 3.0), &k2b);
            b.axpy(one * (dt / 3.0), &k3b);
            b.axpy(one * (dt / 6.0), &k4b);

            time += dt;
            steps += 1;
            if steps > opts.max_steps {
                return Err(CoreError::StepBudgetExceeded {
                    budget: opts.max_steps,
                    t_final,
                });
            }
        }
        time = target;
        out.push(OscillatingState {
            coords: b.clone(),
            momentum: m.clone(),
            time,
        });
    }
    Ok(out)
}
