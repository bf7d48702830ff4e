//! Strang-splitting pseudo-spectral integrator for the scaled
//! Gross-Pitaevskii equation on the torus,
//!
//! ```text
//! i eps^alpha d_t psi + (eps^(2 alpha) / 2) Lap psi
//!     - (1/eps^2) (|psi|^2 - rho0(x)) psi = 0 ,
//! ```
//!
//! integrated in the normalized form
//! `i d_t psi = -(eps^alpha/2) Lap psi + eps^(-(2+alpha)) (|psi|^2 - rho0) psi`.
//!
//! One Strang step is: half kinetic step (spectral multiplier
//! `exp(-i eps^alpha |k|^2 dt / 4)`), full potential step (pointwise
//! `psi -> exp(-i (|psi|^2 - rho0) dt / eps^(2+alpha)) psi`, exact because
//! `|psi|` is invariant under it), half kinetic step.  Both sub-flows are
//! unitary, so mass is conserved to rounding.

use crate::error::{CoreError, Result};
use crate::grid::{
    check_density, forward, gradient, inverse, l2_norm, same_grid, Reality, TorusField, TorusGrid,
};
use num_complex::Complex64;

/// Default stiffness constants for the stable-step heuristic
/// `dt0 = min(C_POT eps^2, C_KIN / (eps^alpha kmax^2))`.
pub const C_POT: f64 = 1.0 / 16.0;
pub const C_KIN: f64 = 1.0 / 4.0;

/// Default step budget for [`evolve`].
pub const DEFAULT_STEP_BUDGET: usize = 2_000_000;

/// Wave function state at one instant.
#[derive(Clone, Debug)]
pub struct WaveState {
    pub psi: TorusField,
    pub time: f64,
    pub eps: f64,
    pub alpha: f64,
}

impl WaveState {
    pub fn grid(&self) -> TorusGrid {
        self.psi.grid()
    }
}

/// WKB-type initial data
/// `psi0 = sqrt(rho0 + eps phi0) exp(i (S0 + winding . x) / eps^alpha)`.
///
/// The winding vector must satisfy `winding / eps^alpha` integer per
/// component, otherwise the phase is not periodic and construction fails.
#[derive(Clone, Debug)]
pub struct InitialData<'a> {
    pub rho0: &'a TorusField,
    pub phi0: &'a TorusField,
    pub s0: &'a TorusField,
    pub winding: [f64; 2],
}

/// Conserved quantities of the flow.
#[derive(Clone, Copy, Debug)]
pub struct Conserved {
    /// Hamiltonian
    /// `0.5 * integral( eps^(2 alpha) |grad psi|^2 + (|psi|^2 - rho0)^2 / eps^2 )`.
    pub hamiltonian: f64,
    /// Total current `integral J`, with
    /// `J = eps^alpha Im(conj(psi) grad psi)
    ///    = (i eps^alpha / 2)(psi grad conj(psi) - conj(psi) grad psi)`.
    /// Sign convention: for `psi = exp(i k x)` on the default torus,
    /// `current[0] = eps^alpha k * volume`.  Conserved only when `rho0` is
    /// constant.
    pub current: [f64; 2],
    /// Mass `integral |psi|^2`.
    pub mass: f64,
}

/// Stable default time step: `min(C_POT eps^2, C_KIN / (eps^alpha kmax^2))`
/// with `kmax` the Nyquist wavenumber of the grid.
pub fn stable_dt(grid: TorusGrid, eps: f64, alpha: f64) -> f64 {
    let kmax = grid.wavenumber(grid.nyquist() as i64).abs();
    let pot = C_POT * eps * eps;
    let kin = C_KIN / (eps.powf(alpha) * kmax * kmax);
    pot.min(kin)
}

fn validate_params(eps: f64, alpha: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CoreError::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(CoreError::InvalidParameter(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    Ok(())
}

/// Build the WKB initial state.  Fails if `rho0 + eps phi0` is not strictly
/// positive or the winding phase is not periodic.
pub fn build_initial_state(data: &InitialData, eps: f64, alpha: f64) -> Result<WaveState> {
    validate_params(eps, alpha)?;
    check_density(data.rho0)?;
    same_grid(data.rho0, data.phi0)?;
    same_grid(data.rho0, data.s0)?;
    let grid = data.rho0.grid();
    let ea = eps.powf(alpha);

    // winding / eps^alpha must be integer per component.
    let mut wint = [0i64; 2];
    for c in 0..grid.dim() {
        let w = data.winding[c] / ea;
        let r = w.round();
        if (w - r).abs() > 1e-9 * (1.0 + r.abs()) {
            return Err(CoreError::WindingNotInteger { value: w });
        }
        wint[c] = r as i64;
    }

    let mut psi = TorusField::zeros(grid, 1, Reality::Complex);
    let mut min_rho = f64::INFINITY;
    for p in 0..grid.points() {
        let x = grid.coords(p);
        let rho = data.rho0.comp(0)[p].re + eps * data.phi0.comp(0)[p].re;
        min_rho = min_rho.min(rho);
        let phase = data.s0.comp(0)[p].re / ea + wint[0] as f64 * x[0] + wint[1] as f64 * x[1];
        psi.comp_mut(0)[p] = Complex64::from_polar(rho.max(0.0).sqrt(), phase);
    }
    if !(min_rho > 0.0) {
        return Err(CoreError::NonPositiveDensity { min: min_rho });
    }
    Ok(WaveState {
        psi,
        time: 0.0,
        eps,
        alpha,
    })
}

/// Half-step kinetic multiplier table `exp(-i eps^alpha |k|^2 dt / 4)`.
fn kinetic_half_multiplier(grid: TorusGrid, eps: f64, alpha: f64, dt: f64) -> Vec<Complex64> {
    let ea = eps.powf(alpha);
    (0..grid.points())
        .map(|p| {
            let k = grid.k_vec(p);
            let k2 = k[0] * k[0] + k[1] * k[1];
            Complex64::from_polar(1.0, -ea * k2 * dt / 4.0)
        })
        .collect()
}

fn apply_kinetic_half(psi: &mut TorusField, mult: &[Complex64]) {
    let mut spec = forward(psi);
    for (z, m) in spec.comp_mut(0).iter_mut().zip(mult.iter()) {
        *z *= m;
    }
    *psi = inverse(&spec, Reality::Complex);
}

fn apply_potential(psi: &mut TorusField, rho0: &TorusField, eps: f64, alpha: f64, dt: f64) {
    let scale = dt / eps.powf(2.0 + alpha);
    let r = rho0.comp(0);
    for (z, r0) in psi.comp_mut(0).iter_mut().zip(r.iter()) {
        let phase = -(z.norm_sqr() - r0.re) * scale;
        *z *= Complex64::from_polar(1.0, phase);
    }
}

/// One Strang step of size `dt` (negative `dt` steps backwards, which makes
/// the scheme time-reversible in exact arithmetic).
pub fn strang_step(state: &mut WaveState, rho0: &TorusField, dt: f64) -> Result<()> {
    same_grid(&state.psi, rho0)?;
    check_density(rho0)?;
    validate_params(state.eps, state.alpha)?;
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(CoreError::InvalidParameter(format!("invalid dt {dt}")));
    }
    let mult = kinetic_half_multiplier(state.grid(), state.eps, state.alpha, dt);
    apply_kinetic_half(&mut state.psi, &mult);
    apply_potential(&mut state.psi, rho0, state.eps, state.alpha, dt);
    apply_kinetic_half(&mut state.psi, &mult);
    state.time += dt;
    Ok(())
}

/// Options controlling [`evolve`].
#[derive(Clone, Debug)]
pub struct EvolveOptions {
    /// Fixed step size; `None` uses [`stable_dt`].
    pub dt: Option<f64>,
    /// Step-doubling error control: when set, each step is accepted only if
    /// the L2 difference between one `dt` step and two `dt/2` steps is below
    /// this tolerance, and `dt` adapts.
    pub adaptive_tol: Option<f64>,
    /// Hard cap on the number of sub-steps.
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt: None,
            adaptive_tol: None,
            max_steps: DEFAULT_STEP_BUDGET,
        }
    }
}

/// Validate output times against `(t0, t_final]` (strictly increasing) and
/// append `t_final` when it is not already the last entry.  Shared by every
/// trajectory integrator in the crate.
pub(crate) fn plan_targets(t0: f64, t_final: f64, output_times: &[f64]) -> Result<Vec<f64>> {
    if t_final <= t0 {
        return Err(CoreError::InvalidParameter(format!(
            "t_final {t_final} must exceed start time {t0}"
        )));
    }
    let mut targets: Vec<f64> = output_times.to_vec();
    for w in targets.windows(2) {
        if w[1] <= w[0] {
            return Err(CoreError::InvalidParameter(
                "output times must be strictly increasing".into(),
            ));
        }
    }
    if targets.iter().any(|&t| t <= t0 || t > t_final + 1e-12) {
        return Err(CoreError::InvalidParameter(
            "output times must lie in (t0, t_final]".into(),
        ));
    }
    let append_final = targets.last().map_or(true, |&t| t < t_final - 1e-12);
    if append_final {
        targets.push(t_final);
    }
    Ok(targets)
}

/// Integrate to `t_final`, returning snapshots at the requested output times
/// (strictly increasing, all in `(state.time, t_final]`).  The integrator
/// lands on every output time exactly with a shortened partial step; no
/// interpolation is performed.  The state at `t_final` is always the last
/// snapshot (appended if not requested).
pub fn evolve(
    state: &WaveState,
    rho0: &TorusField,
    t_final: f64,
    output_times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<WaveState>> {
    same_grid(&state.psi, rho0)?;
    check_density(rho0)?;
    let targets = plan_targets(state.time, t_final, output_times)?;

    let base_dt = opts
        .dt
        .unwrap_or_else(|| stable_dt(state.grid(), state.eps, state.alpha));
    if !(base_dt > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "step size must be positive, got {base_dt}"
        )));
    }

    let mut cur = state.clone();
    let mut out = Vec::with_capacity(targets.len());
    let mut steps = 0usize;
    let mut dt = base_dt;

    for &target in &targets {
        while cur.time < target - 1e-13 * target.abs().max(1.0) {
            let step = dt.min(target - cur.time);
            match opts.adaptive_tol {
                None => {
                    strang_step(&mut cur, rho0, step)?;
                    steps += 1;
                }
                Some(tol) => {
                    // Step doubling: compare one full step with two halves.
                    let mut coarse = cur.clone();
                    strang_step(&mut coarse, rho0, step)?;
                    let mut fine = cur.clone();
                    strang_step(&mut fine, rho0, step / 2.0)?;
                    strang_step(&mut fine, rho0, step / 2.0)?;
                    steps += 3;
                    let err = l2_norm(&fine.psi.sub(&coarse.psi)?);
                    if err <= tol {
                        cur = fine;
                        // local error is O(dt^3): grow cautiously
                        let grow = (tol / err.max(1e-300)).powf(1.0 / 3.0).min(2.0);
                        dt = (step * 0.9 * grow).min(base_dt * 16.0);
                    } else {
                        let shrink = (tol / err).powf(1.0 / 3.0).max(0.1);
                        dt = step * 0.9 * shrink;
                    }
                }
            }
            if steps > opts.max_steps {
                return Err(CoreError::StepBudgetExceeded {
                    budget: opts.max_steps,
                    t_final,
                });
            }
        }
        cur.time = target; // kill accumulated rounding in the time variable
        out.push(cur.clone());
    }
    Ok(out)
}

/// Evaluate the conserved quantities of a state.
pub fn conserved_quantities(state: &WaveState, rho0: &TorusField) -> Result<Conserved> {
    same_grid(&state.psi, rho0)?;
    check_density(rho0)?;
    let grid = state.grid();
    let dim = grid.dim();
    let eps = state.eps;
    let ea = eps.powf(state.alpha);
    let grad = gradient(&state.psi)?;
    let cell = grid.cell_volume();

    let mut grad2 = 0.0;
    let mut pot = 0.0;
    let mut mass = 0.0;
    let mut current = [0.0f64; 2];
    let psi = state.psi.comp(0);
    let r = rho0.comp(0);
    for p in 0..grid.points() {
        let z = psi[p];
        mass += z.norm_sqr();
        let dev = z.norm_sqr() - r[p].re;
        pot += dev * dev;
        for c in 0..dim {
            let g = grad.comp(c)[p];
            grad2 += g.norm_sqr();
            current[c] += (z.conj() * g).im;
        }
    }
    Ok(Conserved {
        hamiltonian: 0.5 * (ea * ea * grad2 + pot / (eps * eps)) * cell,
        current: [ea * current[0] * cell, ea * current[1] * cell],
        mass: mass * cell,
    })
}

/// Current density field `J = eps^alpha Im(conj(psi) grad psi)`.
pub fn current_density(state: &WaveState) -> Result<TorusField> {
    let grid = state.grid();
    let dim = grid.dim();
    let ea = state.eps.powf(state.alpha);
    let grad = gradient(&state.psi)?;
    let mut j = TorusField::zeros(grid, dim, Reality::Real);
    let psi = state.psi.comp(0);
    for c in 0..dim {
        let g = grad.comp(c);
        for (p, z) in j.comp_mut(c).iter_mut().enumerate() {
            *z = Complex64::new(ea * (psi[p].conj() * g[p]).im, 0.0);
        }
    }
    Ok(j)
}

/// Density field `rho = |psi|^2`.
pub fn density(state: &WaveState) -> TorusField {
    let grid = state.grid();
    let mut rho = TorusField::zeros(grid, 1, Reality::Real);
    for (z, p) in rho.comp_mut(0).iter_mut().zip(state.psi.comp(0).iter()) {
        *z = Complex64::new(p.norm_sqr(), 0.0);
    }
    rho
}

/// L2 distance between the wave functions of two states.
pub fn state_distance(a: &WaveState, b: &WaveState) -> Result<f64> {
    Ok(l2_norm(&a.psi.sub(&b.psi)?))
}
