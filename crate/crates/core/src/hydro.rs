//! Hydrodynamic observables of a wave function, the quantum-pressure
//! (dispersive-term) identities, weak residuals of the local conservation
//! laws, and the fast-wave forcing diagnostic.
//!
//! Observables of `psi` with small parameter `eps` and scaling exponent
//! `alpha`:
//!
//! ```text
//! rho = |psi|^2
//! J   = (i eps^alpha / 2)(psi grad conj(psi) - conj(psi) grad psi)
//!     = eps^alpha Im(conj(psi) grad psi)
//! e   = (eps^(2 alpha)/2) |grad psi|^2 + (1/(2 eps^2)) (rho - rho0)^2
//! phi = (rho - rho0) / eps            (density fluctuation)
//! ```
//!
//! The local conservation laws measured weakly here are
//!
//! ```text
//! d_t rho + div J = 0
//! d_t J + div(J (x) J / rho) + (1/eps^2) rho grad(rho - rho0)
//!       = (eps^(2 alpha)/4) div(rho hess(log rho))
//! d_t e + div(e J/rho + (1/eps^2) J (rho - rho0))
//!       = (eps^(2 alpha)/4) div(J lap(rho)/rho - (div J) grad(rho)/rho)
//! ```
//!
//! against the nine lowest Fourier test modes, with centered differences in
//! time.  Spatial derivatives are spectral; nonlinear products are formed
//! pointwise on the grid (collocation).

use crate::error::{CoreError, Result};
use crate::gpe::WaveState;
use crate::grid::{
    self, check_density, divergence, gradient, hessian, integral, laplacian, outer, pairing,
    same_grid, tensor_divergence, Reality, TorusField, TorusGrid,
};
use crate::helmholtz;
use num_complex::Complex64;

/// Hydrodynamic observables at one instant.
#[derive(Clone, Debug)]
pub struct HydroState {
    /// Density `rho = |psi|^2` (scalar, nonnegative).
    pub rho: TorusField,
    /// Current `J` (one component per dimension).
    pub j: TorusField,
    /// Energy density `e` (scalar).
    pub e: TorusField,
    /// Density fluctuation `phi = (rho - rho0)/eps` (scalar).
    pub phi: TorusField,
    pub time: f64,
    pub eps: f64,
    pub alpha: f64,
}

/// Compute all observables of a state against the background `rho0`.
pub fn observables(state: &WaveState, rho0: &TorusField) -> Result<HydroState> {
    same_grid(&state.psi, rho0)?;
    check_density(rho0)?;
    let grid = state.psi.grid();
    let dim = grid.dim();
    let eps = state.eps;
    let ea = eps.powf(state.alpha);
    let grad = gradient(&state.psi)?;
    let psi = state.psi.comp(0);
    let r0 = rho0.comp(0);

    let mut rho = TorusField::zeros(grid, 1, Reality::Real);
    let mut j = TorusField::zeros(grid, dim, Reality::Real);
    let mut e = TorusField::zeros(grid, 1, Reality::Real);
    let mut phi = TorusField::zeros(grid, 1, Reality::Real);
    for p in 0..grid.points() {
        let z = psi[p];
        let dens = z.norm_sqr();
        rho.comp_mut(0)[p] = Complex64::new(dens, 0.0);
        phi.comp_mut(0)[p] = Complex64::new((dens - r0[p].re) / eps, 0.0);
        let mut grad2 = 0.0;
        for c in 0..dim {
            let g = grad.comp(c)[p];
            grad2 += g.norm_sqr();
            j.comp_mut(c)[p] = Complex64::new(ea * (z.conj() * g).im, 0.0);
        }
        let dev = dens - r0[p].re;
        e.comp_mut(0)[p] =
            Complex64::new(0.5 * ea * ea * grad2 + 0.5 * dev * dev / (eps * eps), 0.0);
    }
    Ok(HydroState {
        rho,
        j,
        e,
        phi,
        time: state.time,
        eps,
        alpha: state.alpha,
    })
}

/// The three algebraically equal forms of the quantum-pressure term
/// (each a vector field):
///
/// ```text
/// (1/4) div(rho hess(log rho))
///   = (1/2) rho grad(lap(sqrt rho)/sqrt rho)
///   = (1/4) lap(grad rho) - div(grad(sqrt rho) (x) grad(sqrt rho))
/// ```
///
/// On the grid they differ by spectral truncation/aliasing only; mutual
/// agreement improves with resolution.
#[derive(Clone, Debug)]
pub struct DispersiveForms {
    pub div_log_form: TorusField,
    pub gradient_form: TorusField,
    pub flux_form: TorusField,
}

/// Evaluate all three quantum-pressure forms.  Requires `rho > 0` pointwise.
pub fn dispersive_term(rho: &TorusField) -> Result<DispersiveForms> {
    check_density(rho)?;
    if rho.components() != 1 {
        return Err(CoreError::ComponentMismatch {
            expected: 1,
            got: rho.components(),
        });
    }
    let grid = rho.grid();
    let dim = grid.dim();

    // Pointwise log and sqrt of the density.
    let log_rho = map_real(rho, f64::ln);
    let sqrt_rho = map_real(rho, f64::sqrt);

    // Form 1: (1/4) div(rho hess(log rho)).
    let hess_log = hessian(&log_rho)?;
    let mut weighted = TorusField::zeros(grid, dim * dim, Reality::Real);
    for c in 0..dim * dim {
        for p in 0..grid.points() {
            weighted.comp_mut(c)[p] = rho.comp(0)[p] * hess_log.comp(c)[p];
        }
    }
    let div_log_form = tensor_divergence(&weighted)?.scaled(0.25);

    // Form 2: (1/2) rho grad(lap(sqrt rho)/sqrt rho).
    let lap_sqrt = laplacian(&sqrt_rho)?;
    let mut quotient = TorusField::zeros(grid, 1, Reality::Real);
    for p in 0..grid.points() {
        quotient.comp_mut(0)[p] = lap_sqrt.comp(0)[p] / sqrt_rho.comp(0)[p];
    }
    let grad_q = gradient(&quotient)?;
    let mut gradient_form = TorusField::zeros(grid, dim, Reality::Real);
    for c in 0..dim {
        for p in 0..grid.points() {
            gradient_form.comp_mut(c)[p] = 0.5 * rho.comp(0)[p] * grad_q.comp(c)[p];
        }
    }

    // Form 3: (1/4) lap(grad rho) - div(grad(sqrt rho) (x) grad(sqrt rho)).
    let grad_rho = gradient(rho)?;
    let mut flux_form = laplacian(&grad_rho)?.scaled(0.25);
    let grad_sqrt = gradient(&sqrt_rho)?;
    let tensor = outer(&grad_sqrt, &grad_sqrt)?;
    let div_tensor = tensor_divergence(&tensor)?;
    flux_form = flux_form.sub(&div_tensor)?;

    Ok(DispersiveForms {
        div_log_form,
        gradient_form,
        flux_form,
    })
}

/// Largest pairwise L2 distance between the three forms (diagnostic).
pub fn dispersive_disagreement(forms: &DispersiveForms) -> Result<f64> {
    let d1 = grid::l2_norm(&forms.div_log_form.sub(&forms.gradient_form)?);
    let d2 = grid::l2_norm(&forms.gradient_form.sub(&forms.flux_form)?);
    let d3 = grid::l2_norm(&forms.div_log_form.sub(&forms.flux_form)?);
    Ok(d1.max(d2).max(d3))
}

/// The nine lowest real Fourier test modes used for weak residuals.
///
/// 1D: `1, cos x, sin x, cos 2x, sin 2x, cos 3x, sin 3x, cos 4x, sin 4x`.
/// 2D: `1, cos x1, sin x1, cos x2, sin x2, cos(x1+x2), sin(x1+x2),
///      cos(x1-x2), sin(x1-x2)`.
///
/// (Arguments are scaled by `2 pi / period` on non-unit tori.)
pub fn test_mode_fields(grid: TorusGrid) -> Vec<TorusField> {
    let base = std::f64::consts::TAU / grid.period();
    let mode = |f: Box<dyn Fn(f64, f64) -> f64>| {
        TorusField::from_fn_real(grid, 1, move |x, _| f(base * x[0], base * x[1]))
    };
    if grid.dim() == 1 {
        (0..9)
            .map(|i| match i {
                0 => mode(Box::new(|_, _| 1.0)),
                k => {
                    let m = ((k + 1) / 2) as f64;
                    if k % 2 == 1 {
                        mode(Box::new(move |x, _| (m * x).cos()))
                    } else {
                        mode(Box::new(move |x, _| (m * x).sin()))
                    }
                }
            })
            .collect()
    } else {
        vec![
            mode(Box::new(|_, _| 1.0)),
            mode(Box::new(|x, _| x.cos())),
            mode(Box::new(|x, _| x.sin())),
            mode(Box::new(|_, y| y.cos())),
            mode(Box::new(|_, y| y.sin())),
            mode(Box::new(|x, y| (x + y).cos())),
            mode(Box::new(|x, y| (x + y).sin())),
            mode(Box::new(|x, y| (x - y).cos())),
            mode(Box::new(|x, y| (x - y).sin())),
        ]
    }
}

/// Human-readable labels matching [`test_mode_fields`] order.
pub fn test_mode_labels(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec![
            "1", "cos(x)", "sin(x)", "cos(2x)", "sin(2x)", "cos(3x)", "sin(3x)", "cos(4x)",
            "sin(4x)",
        ]
    } else {
        vec![
            "1",
            "cos(x1)",
            "sin(x1)",
            "cos(x2)",
            "sin(x2)",
            "cos(x1+x2)",
            "sin(x1+x2)",
            "cos(x1-x2)",
            "sin(x1-x2)",
        ]
    }
}

/// Options for [`conservation_residuals`].
#[derive(Clone, Debug, Default)]
pub struct ResidualOptions {
    /// Also evaluate the energy-law residual (costliest; off by default).
    pub include_energy: bool,
}

/// Weak residuals of the conservation laws at one interior snapshot time.
#[derive(Clone, Debug)]
pub struct WeakResiduals {
    pub time: f64,
    /// One entry per test mode.
    pub mass: Vec<f64>,
    /// `9 * dim` entries, mode-major with the vector component fastest.
    pub momentum: Vec<f64>,
    /// One entry per test mode; present only when requested.
    pub energy: Option<Vec<f64>>,
}

impl WeakResiduals {
    pub fn max_mass(&self) -> f64 {
        self.mass.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
    pub fn max_momentum(&self) -> f64 {
        self.momentum.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Centered (three-point, possibly non-uniform) time derivative of a field
/// triple `(f_prev, f_mid, f_next)` at times `(t_prev, t_mid, t_next)`.
fn centered_dt(
    prev: &TorusField,
    mid: &TorusField,
    next: &TorusField,
    t_prev: f64,
    t_mid: f64,
    t_next: f64,
) -> Result<TorusField> {
    let hm = t_mid - t_prev;
    let hp = t_next - t_mid;
    if !(hm > 0.0 && hp > 0.0) {
        return Err(CoreError::InvalidParameter(
            "snapshot times must be strictly increasing".into(),
        ));
    }
    // f'(t_mid) = [hm^2 f_next - hp^2 f_prev + (hp^2 - hm^2) f_mid] / (hm hp (hm + hp))
    let denom = hm * hp * (hm + hp);
    let mut out = mid.scaled((hp * hp - hm * hm) / denom);
    out.axpy(hm * hm / denom, next)?;
    out.axpy(-hp * hp / denom, prev)?;
    Ok(out)
}

fn pointwise_div(num: &TorusField, den: &TorusField) -> Result<TorusField> {
    same_grid(num, den)?;
    let grid = num.grid();
    let mut out = TorusField::zeros(grid, num.components(), num.reality());
    for c in 0..num.components() {
        for p in 0..grid.points() {
            out.comp_mut(c)[p] = num.comp(c)[p] / den.comp(0)[p];
        }
    }
    Ok(out)
}

fn map_real(f: &TorusField, g: impl Fn(f64) -> f64) -> TorusField {
    let grid = f.grid();
    let mut out = TorusField::zeros(grid, f.components(), Reality::Real);
    for c in 0..f.components() {
        for p in 0..grid.points() {
            out.comp_mut(c)[p] = Complex64::new(g(f.comp(c)[p].re), 0.0);
        }
    }
    out
}

/// Spatial part of the momentum law (everything except `d_t J`):
/// `div(J (x) J / rho) + (1/eps^2) rho grad(rho - rho0) - (eps^(2a)/4) Q(rho)`
/// with the quantum-pressure term in its third (flux) form.
fn momentum_spatial(h: &HydroState, rho0: &TorusField) -> Result<TorusField> {
    let grid = h.rho.grid();
    let dim = grid.dim();
    let eps2a = h.eps.powf(2.0 * h.alpha);

    let u = pointwise_div(&h.j, &h.rho)?; // J / rho
    let flux = outer(&h.j, &u)?;
    let mut out = tensor_divergence(&flux)?;

    // (1/eps^2) rho grad(rho - rho0)
    let dev = h.rho.sub(rho0)?;
    let grad_dev = gradient(&dev)?;
    for c in 0..dim {
        for p in 0..grid.points() {
            let add = h.rho.comp(0)[p] * grad_dev.comp(c)[p] / (h.eps * h.eps);
            out.comp_mut(c)[p] += add;
        }
    }

    let q = dispersive_term(&h.rho)?;
    out = out.sub(&q.flux_form.scaled(eps2a))?;
    Ok(out)
}

/// Spatial part of the energy law:
/// `div(e J/rho + (1/eps^2) J (rho - rho0))
///  - (eps^(2a)/4) div(J lap(rho)/rho - (div J) grad(rho)/rho)`.
fn energy_spatial(h: &HydroState, rho0: &TorusField) -> Result<TorusField> {
    let grid = h.rho.grid();
    let dim = grid.dim();
    let eps2a = h.eps.powf(2.0 * h.alpha);

    let u = pointwise_div(&h.j, &h.rho)?;
    let dev = h.rho.sub(rho0)?;
    let mut flux = TorusField::zeros(grid, dim, Reality::Real);
    for c in 0..dim {
        for p in 0..grid.points() {
            flux.comp_mut(c)[p] =
                h.e.comp(0)[p] * u.comp(c)[p] + h.j.comp(c)[p] * dev.comp(0)[p] / (h.eps * h.eps);
        }
    }
    let mut out = divergence(&flux)?;

    let lap_rho = laplacian(&h.rho)?;
    let grad_rho = gradient(&h.rho)?;
    let div_j = divergence(&h.j)?;
    let mut dflux = TorusField::zeros(grid, dim, Reality::Real);
    for c in 0..dim {
        for p in 0..grid.points() {
            let r = h.rho.comp(0)[p];
            dflux.comp_mut(c)[p] =
                (h.j.comp(c)[p] * lap_rho.comp(0)[p] - div_j.comp(0)[p] * grad_rho.comp(c)[p]) / r;
        }
    }
    out = out.sub(&divergence(&dflux)?.scaled(0.25 * eps2a))?;
    Ok(out)
}

/// Weak residuals of the conservation laws along a trajectory of at least
/// three snapshots with strictly increasing times.  Returns one row per
/// interior snapshot.
pub fn conservation_residuals(
    traj: &[HydroState],
    rho0: &TorusField,
    opts: &ResidualOptions,
) -> Result<Vec<WeakResiduals>> {
    if traj.len() < 3 {
        return Err(CoreError::InvalidParameter(format!(
            "need at least 3 snapshots for centered differencing, got {}",
            traj.len()
        )));
    }
    check_density(rho0)?;
    for h in traj {
        same_grid(&h.rho, rho0)?;
        if (h.eps - traj[0].eps).abs() > 0.0 || (h.alpha - traj[0].alpha).abs() > 0.0 {
            return Err(CoreError::InvalidParameter(
                "snapshots mix different eps/alpha".into(),
            ));
        }
    }
    let grid = rho0.grid();
    let dim = grid.dim();
    let modes = test_mode_fields(grid);

    let mut rows = Vec::with_capacity(traj.len() - 2);
    for i in 1..traj.len() - 1 {
        let (a, b, c) = (&traj[i - 1], &traj[i], &traj[i + 1]);
        let dt_rho = centered_dt(&a.rho, &b.rho, &c.rho, a.time, b.time, c.time)?;
        let dt_j = centered_dt(&a.j, &b.j, &c.j, a.time, b.time, c.time)?;

        let mass_field = dt_rho.add(&divergence(&b.j)?)?;
        let momentum_field = dt_j.add(&momentum_spatial(b, rho0)?)?;

        let mut mass = Vec::with_capacity(modes.len());
        let mut momentum = Vec::with_capacity(modes.len() * dim);
        for beta in &modes {
            mass.push(pairing(&mass_field, beta)?.re);
            for comp in 0..dim {
                momentum.push(pairing(&momentum_field.component_field(comp), beta)?.re);
            }
        }
        let energy = if opts.include_energy {
            let dt_e = centered_dt(&a.e, &b.e, &c.e, a.time, b.time, c.time)?;
            let energy_field = dt_e.add(&energy_spatial(b, rho0)?)?;
            Some(
                modes
                    .iter()
                    .map(|beta| Ok(pairing(&energy_field, beta)?.re))
                    .collect::<Result<Vec<f64>>>()?,
            )
        } else {
            None
        };
        rows.push(WeakResiduals {
            time: b.time,
            mass,
            momentum,
            energy,
        });
    }
    Ok(rows)
}

/// The three weighted-projected terms of the fast-wave forcing
///
/// ```text
/// F = -(eps^(2a)/2) P[div(grad psi (x) grad conj(psi)
///                        + grad conj(psi) (x) grad psi)]
///     - (1/2) P[grad(phi^2)]
///     + (eps^(2a)/4) P[grad(lap rho)]
/// ```
///
/// where `P` is the gradient part of the weighted Helmholtz decomposition.
#[derive(Clone, Debug)]
pub struct FastwaveForcing {
    pub kinetic: TorusField,
    pub pressure: TorusField,
    pub dispersive: TorusField,
}

impl FastwaveForcing {
    pub fn total(&self) -> Result<TorusField> {
        self.kinetic.add(&self.pressure)?.add(&self.dispersive)
    }
}

/// Assemble the fast-wave forcing diagnostic for a state.  `tol` is the
/// absolute residual tolerance of the weighted projection solves.
pub fn fastwave_forcing(state: &WaveState, rho0: &TorusField, tol: f64) -> Result<FastwaveForcing> {
    let h = observables(state, rho0)?;
    let grid = state.psi.grid();
    let dim = grid.dim();
    let eps2a = state.eps.powf(2.0 * state.alpha);

    // Kinetic tensor K[r,c] = 2 Re(d_r psi d_c conj(psi)), real symmetric.
    let grad_psi = gradient(&state.psi)?;
    let mut kin_tensor = TorusField::zeros(grid, dim * dim, Reality::Real);
    for r in 0..dim {
        for c in 0..dim {
            for p in 0..grid.points() {
                let val = 2.0 * (grad_psi.comp(r)[p] * grad_psi.comp(c)[p].conj()).re;
                kin_tensor.comp_mut(r * dim + c)[p] = Complex64::new(val, 0.0);
            }
        }
    }
    let kin_div = tensor_divergence(&kin_tensor)?.scaled(-0.5 * eps2a);

    // Pressure term -(1/2) grad(phi^2).
    let phi2 = map_real(&h.phi, |v| v * v);
    let press = gradient(&phi2)?.scaled(-0.5);

    // Dispersive term (eps^(2a)/4) grad(lap rho).
    let disp = gradient(&laplacian(&h.rho)?)?.scaled(0.25 * eps2a);

    Ok(FastwaveForcing {
        kinetic: helmholtz::project(&kin_div, rho0, tol)?.gradient_part,
        pressure: helmholtz::project(&press, rho0, tol)?.gradient_part,
        dispersive: helmholtz::project(&disp, rho0, tol)?.gradient_part,
    })
}

/// Consistency check used by the test-suite: mass from the hydro observables
/// must match the mass integral computed by the solver path.
pub fn total_mass(h: &HydroState) -> Result<f64> {
    Ok(integral(&h.rho)?.re)
}

/// Pointwise Cauchy-Schwarz bound `|J| <= eps^alpha sqrt(rho) |grad psi|`,
/// returned as the largest violation (nonpositive when the bound holds).
pub fn current_bound_violation(state: &WaveState) -> Result<f64> {
    let grid = state.psi.grid();
    let dim = grid.dim();
    let ea = state.eps.powf(state.alpha);
    let grad = gradient(&state.psi)?;
    let psi = state.psi.comp(0);
    let mut worst = f64::NEG_INFINITY;
    for p in 0..grid.points() {
        let mut j2 = 0.0;
        let mut g2 = 0.0;
        for c in 0..dim {
            let g = grad.comp(c)[p];
            j2 += ((psi[p].conj() * g).im).powi(2);
            g2 += g.norm_sqr();
        }
        let bound = ea * psi[p].norm() * g2.sqrt();
        worst = worst.max(ea * j2.sqrt() - bound);
    }
    Ok(worst)
}
