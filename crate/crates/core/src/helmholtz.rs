//! Density-weighted Helmholtz decomposition on the torus.
//!
//! With background density `rho0 > 0` and weight `sigma = 1/rho0`, every
//! vector field splits sigma-orthogonally as
//!
//! ```text
//! f = H f + Hperp f,      Hperp f = rho0 grad psi,    div(H f) = 0,
//! ```
//!
//! where `psi` is the zero-mean solution of the weighted Poisson problem
//! `div(rho0 grad psi) = div f`.  The solve is preconditioned conjugate
//! gradients in spectral space: the preconditioner is the constant-coefficient
//! inverse Laplacian scaled by the mean of `rho0`, which is exact when `rho0`
//! is constant (the decomposition then reduces to the classical Leray
//! projection).
//!
//! Tolerances are absolute: iteration stops when the L2 norm of the residual
//! `div(rho0 grad psi) - div f` drops below `tol`.

use crate::error::{CoreError, Result};
use crate::grid::{
    self, check_density, divergence, forward, gradient, inverse, l2_norm, mul_scalar, same_grid,
    Reality, TorusField,
};
use num_complex::Complex64;

/// Default absolute residual tolerance for the weighted Poisson solve.
pub const DEFAULT_POISSON_TOL: f64 = 1e-10;

/// Default iteration budget for the conjugate-gradient solve.
pub const DEFAULT_MAX_ITER: usize = 500;

/// Result of a weighted Poisson solve.
#[derive(Clone, Debug)]
pub struct PoissonSolve {
    /// Zero-mean potential `psi`.
    pub psi: TorusField,
    /// Achieved L2 residual of `div(rho0 grad psi) - div f`.
    pub residual: f64,
    pub iterations: usize,
}

/// Weighted Helmholtz decomposition `f = solenoidal + rho0 grad potential`.
#[derive(Clone, Debug)]
pub struct WeightedDecomposition {
    /// `H f`: weighted-divergence-free part.
    pub solenoidal: TorusField,
    /// `Hperp f = rho0 grad potential`.
    pub gradient_part: TorusField,
    /// Zero-mean potential.
    pub potential: TorusField,
    /// Residual of the underlying Poisson solve.
    pub residual: f64,
    pub iterations: usize,
}

/// Apply `psi -> -div(rho0 grad psi)` (symmetric positive semi-definite on
/// the grid inner product; strictly positive on zero-mean trig polynomials).
fn weighted_operator(psi: &TorusField, rho0: &TorusField) -> Result<TorusField> {
    let g = gradient(psi)?;
    let rg = mul_scalar(rho0, &g)?;
    let mut out = divergence(&rg)?;
    out.scale(Complex64::new(-1.0, 0.0));
    out.symmetrize_real();
    Ok(out)
}

/// Preconditioner: spectral inverse Laplacian scaled by `1/mean(rho0)`.
/// Modes with zero derivative-consistent wavenumber (mean, pure Nyquist)
/// are annihilated.
fn preconditioner(r: &TorusField, mean_rho0: f64) -> TorusField {
    let grid = r.grid();
    let mut spec = forward(r);
    let npts = grid.points();
    for p in 0..npts {
        let k = grid.k_vec_deriv(p);
        let k2 = k[0] * k[0] + k[1] * k[1];
        let c = &mut spec.comp_mut(0)[p];
        if k2 > 0.0 {
            *c /= mean_rho0 * k2;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    inverse(&spec, Reality::Real)
}

/// Zero the mean and pure-Nyquist coefficients of a scalar field (projection
/// onto the solvable subspace of the weighted Poisson problem).
fn project_out_null(f: &mut TorusField) {
    let grid = f.grid();
    let mut spec = forward(f);
    for p in 0..grid.points() {
        let k = grid.k_vec_deriv(p);
        if k[0] == 0.0 && k[1] == 0.0 {
            spec.comp_mut(0)[p] = Complex64::new(0.0, 0.0);
        }
    }
    *f = inverse(&spec, Reality::Real);
}

fn grid_dot(a: &TorusField, b: &TorusField) -> f64 {
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x.re * y.re)
        .sum::<f64>()
        * a.grid().cell_volume()
}

/// Solve `div(rho0 grad psi) = div f` for the zero-mean potential `psi` by
/// preconditioned conjugate gradients.  `tol` is the absolute L2 residual
/// target.
pub fn solve_weighted_poisson(
    f: &TorusField,
    rho0: &TorusField,
    tol: f64,
    max_iter: usize,
) -> Result<PoissonSolve> {
    same_grid(f, rho0)?;
    check_density(rho0)?;
    let dim = f.grid().dim();
    if f.components() != dim {
        return Err(CoreError::ComponentMismatch {
            expected: dim,
            got: f.components(),
        });
    }
    if !(tol > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "poisson tolerance must be positive, got {tol}"
        )));
    }

    let mean_rho0 = grid::integral(rho0)?.re / f.grid().volume();
    let contrast = {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for z in rho0.comp(0) {
            min = min.min(z.re);
            max = max.max(z.re);
        }
        max / min
    };

    // b = -div f, projected onto the solvable subspace.
    let mut b = divergence(f)?;
    b.scale(Complex64::new(-1.0, 0.0));
    b.symmetrize_real();
    project_out_null(&mut b);

    let mut psi = TorusField::zeros(f.grid(), 1, Reality::Real);
    let mut r = b.clone();
    let mut resid = l2_norm(&r);
    if resid <= tol {
        return Ok(PoissonSolve {
            psi,
            residual: resid,
            iterations: 0,
        });
    }

    let mut z = preconditioner(&r, mean_rho0);
    let mut p = z.clone();
    let mut rz = grid_dot(&r, &z);

    for iter in 1..=max_iter {
        let ap = weighted_operator(&p, rho0)?;
        let pap = grid_dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(CoreError::SolveDidNotConverge {
                iters: iter,
                residual: resid,
                condition: contrast,
            });
        }
        let alpha = rz / pap;
        psi.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        resid = l2_norm(&r);
        if resid <= tol {
            project_out_null(&mut psi);
            return Ok(PoissonSolve {
                psi,
                residual: resid,
                iterations: iter,
            });
        }
        z = preconditioner(&r, mean_rho0);
        let rz_new = grid_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_new = z.clone();
        p_new.axpy(beta, &p)?;
        p = p_new;
    }

    Err(CoreError::SolveDidNotConverge {
        iters: max_iter,
        residual: resid,
        condition: contrast,
    })
}

/// Weighted Helmholtz decomposition of `f` with the default iteration budget.
pub fn project(f: &TorusField, rho0: &TorusField, tol: f64) -> Result<WeightedDecomposition> {
    project_with_budget(f, rho0, tol, DEFAULT_MAX_ITER)
}

pub fn project_with_budget(
    f: &TorusField,
    rho0: &TorusField,
    tol: f64,
    max_iter: usize,
) -> Result<WeightedDecomposition> {
    let solve = solve_weighted_poisson(f, rho0, tol, max_iter)?;
    let gradient_part = mul_scalar(rho0, &gradient(&solve.psi)?)?;
    let solenoidal = f.sub(&gradient_part)?;
    Ok(WeightedDecomposition {
        solenoidal,
        gradient_part,
        potential: solve.psi,
        residual: solve.residual,
        iterations: solve.iterations,
    })
}

/// Classical Leray projection onto divergence-free fields via the analytic
/// spectral multiplier `I - k k^T / |k|^2` (derivative-consistent
/// wavenumbers).  This is the constant-density specialization of [`project`]
/// and serves as its independent reference.
pub fn leray_project(f: &TorusField) -> Result<TorusField> {
    let grid = f.grid();
    let dim = grid.dim();
    if f.components() != dim {
        return Err(CoreError::ComponentMismatch {
            expected: dim,
            got: f.components(),
        });
    }
    let spec = forward(f);
    let mut out = spec.clone();
    for p in 0..grid.points() {
        let k = grid.k_vec_deriv(p);
        let k2 = k[0] * k[0] + k[1] * k[1];
        if k2 == 0.0 {
            continue;
        }
        let mut kdotv = Complex64::new(0.0, 0.0);
        for c in 0..dim {
            kdotv += k[c] * spec.comp(c)[p];
        }
        for c in 0..dim {
            let proj = kdotv * (k[c] / k2);
            out.comp_mut(c)[p] = spec.comp(c)[p] - proj;
        }
    }
    Ok(inverse(&out, f.reality()))
}

/// L2 norm of the weighted divergence `div(f)` — diagnostic for membership
/// in the solenoidal subspace (`f` here is typically `rho0 v`).
pub fn divergence_defect(f: &TorusField) -> Result<f64> {
    Ok(l2_norm(&divergence(f)?))
}

/// sigma-weighted inner product of two vector fields (componentwise sum).
pub fn sigma_inner(f: &TorusField, g: &TorusField, rho0: &TorusField) -> Result<Complex64> {
    grid::same_shape(f, g)?;
    same_grid(f, rho0)?;
    check_density(rho0)?;
    let npts = f.grid().points();
    let mut sum = Complex64::new(0.0, 0.0);
    for c in 0..f.components() {
        let (fc, gc) = (f.comp(c), g.comp(c));
        let r = rho0.comp(0);
        for pnt in 0..npts {
            sum += fc[pnt] * gc[pnt].conj() / r[pnt].re;
        }
    }
    Ok(sum * f.grid().cell_volume())
}
