//! Spectral theory of the acoustic operator `A = -div(rho0 grad .)` on the
//! zero-mean subspace, the associated wave group, and the resonance-averaged
//! coupling forms.
//!
//! The first-order system behind the fast waves is
//!
//! ```text
//! d_t (phi, h) = -(div(rho0 grad w), sqrt(rho0) grad phi),   h = sqrt(rho0) grad w,
//! ```
//!
//! whose generator has eigenvalues `±i sqrt(kappa_j)` built from the
//! eigenpairs `A chi_j = kappa_j chi_j`.  A state pair
//! `V = (phi, sqrt(rho0) grad w)` is stored either as grid fields or in the
//! eigencoordinates `a_j^±` of the expansion
//!
//! ```text
//! V = sum_j a_j^+ (chi_j, (i/sqrt(kappa_j)) sqrt(rho0) grad chi_j)
//!         + a_j^- (chi_j, (-i/sqrt(kappa_j)) sqrt(rho0) grad chi_j),
//! ```
//!
//! with `a_j^+ = conj(a_j^-)` exactly when `V` is real.  The evolution group
//! `L(tau)` multiplies `a_j^±` by `e^(±i sqrt(kappa_j) tau)`.
//!
//! The averaged forms are defined as long-time averages of the filtered
//! quadratic couplings:
//!
//! ```text
//! Q1(u,V) = lim (1/T) \int_0^T L(-s) lift(P B1(u,V,s)) ds
//! Q2(V,W) = lim (1/T) \int_0^T L(-s) lift(P B2(V,W,s)) ds
//! ```
//!
//! where `P` is the weighted gradient projection, `lift(F)` is the pair
//! `(0, F/sqrt(rho0))`, and B1/B2 are the grid-level forms below.  These
//! limits are computed exactly here by keeping only phase-matched terms:
//! equal-eigenvalue clusters for Q1, resonance triples
//! `sigma sqrt(kappa_l) + mu sqrt(kappa_m) = nu sqrt(kappa_j)` for Q2.  A
//! brute-force numerical time average is provided as an independent oracle.

use crate::error::{CoreError, Result};
use crate::grid::{
    self, check_density, dealias, divergence, forward, gradient, hessian, inverse, l2_norm,
    pairing, same_grid, tensor_divergence, Reality, TorusField, TorusGrid,
};
use crate::helmholtz;
use crate::hydro::HydroState;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Cluster tolerance is `coeff * (1 + kappa)`.
pub const DEFAULT_CLUSTER_TOL_COEFF: f64 = 1e-8;
/// Resonance tolerance is `coeff * (1 + sqrt(kappa_max))`.
pub const DEFAULT_RES_TOL_COEFF: f64 = 1e-8;
/// Near-resonances with defect in `(res_tol, gap_tol]` are excluded from the
/// averaged forms but reported.
pub const DEFAULT_GAP_TOL: f64 = 1e-3;
/// Relative tolerance of the gradient-type check in [`expand`].
pub const DEFAULT_EXPAND_TOL: f64 = 1e-8;

/// Parity of a real trigonometric basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Cosine,
    Sine,
}

/// The acoustic operator assembled over the real trigonometric basis
/// `{cos(k.x), sin(k.x)} / sqrt(vol/2)` indexed by the half lattice
/// (`k1 > 0`, or `k1 = 0 && k2 > 0`) with `0 < |k| <= K`.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub matrix: DMatrix<f64>,
    pub wavevecs: Vec<[i64; 2]>,
    pub parities: Vec<Parity>,
    pub truncation: i64,
    pub rho0: TorusField,
}

fn half_lattice(dim: usize, k_max: i64) -> Vec<[i64; 2]> {
    let mut out = Vec::new();
    if dim == 1 {
        for k in 1..=k_max {
            out.push([k, 0]);
        }
    } else {
        for k1 in 0..=k_max {
            let lo = if k1 == 0 { 1 } else { -k_max };
            for k2 in lo..=k_max {
                if k1 * k1 + k2 * k2 <= k_max * k_max {
                    out.push([k1, k2]);
                }
            }
        }
    }
    out
}

fn flat_index(grid: TorusGrid, m: [i64; 2]) -> usize {
    let n = grid.n() as i64;
    let ix = ((m[0] % n) + n) % n;
    if grid.dim() == 1 {
        ix as usize
    } else {
        let iy = ((m[1] % n) + n) % n;
        (iy * n + ix) as usize
    }
}

/// `-div(rho0 grad f)`, evaluated spectrally with pointwise multiplication.
fn acoustic_apply(rho0: &TorusField, f: &TorusField) -> Result<TorusField> {
    let grid = f.grid();
    let mut flux = gradient(f)?;
    for c in 0..grid.dim() {
        for p in 0..grid.points() {
            let w = rho0.comp(0)[p];
            flux.comp_mut(c)[p] *= w;
        }
    }
    Ok(divergence(&flux)?.scaled(-1.0))
}

/// Assemble the operator matrix over the truncated trig basis.  Entries are
/// `A_ij = integral rho0 grad(beta_i) . grad(beta_j) dx`, computed by
/// applying the operator spectrally to each basis function and reading the
/// Galerkin coefficients off its transform.  Exact (no aliasing) as long as
/// `K + bandwidth(rho0) <= n/2`, which is enforced.
pub fn assemble_operator(rho0: &TorusField, truncation: i64) -> Result<AssembledOperator> {
    check_density(rho0)?;
    let grid = rho0.grid();
    if truncation < 1 {
        return Err(CoreError::InvalidParameter(format!(
            "truncation must be >= 1, got {truncation}"
        )));
    }
    // Bandwidth of rho0: largest |k|_inf with a non-negligible coefficient.
    let spec0 = forward(rho0);
    let mut band = 0i64;
    let mut max_coeff = 0.0f64;
    for p in 0..grid.points() {
        max_coeff = max_coeff.max(spec0.comp(0)[p].norm());
    }
    for p in 0..grid.points() {
        if spec0.comp(0)[p].norm() > 1e-13 * max_coeff {
            let m = grid.mode_vec(p);
            band = band.max(m[0].abs()).max(m[1].abs());
        }
    }
    let half = grid.n() as i64 / 2;
    if truncation + band > half {
        return Err(CoreError::TruncationExceedsNyquist {
            k: (truncation + band) as usize,
            nyquist: half as usize,
        });
    }

    let kvecs = half_lattice(grid.dim(), truncation);
    let mut wavevecs = Vec::with_capacity(2 * kvecs.len());
    let mut parities = Vec::with_capacity(2 * kvecs.len());
    for k in &kvecs {
        wavevecs.push(*k);
        parities.push(Parity::Cosine);
        wavevecs.push(*k);
        parities.push(Parity::Sine);
    }
    let nb = wavevecs.len();
    let vol = grid.volume();
    let norm = (vol / 2.0).sqrt();

    let mut matrix = DMatrix::<f64>::zeros(nb, nb);
    for j in 0..nb {
        let kj = wavevecs[j];
        let beta = match parities[j] {
            Parity::Cosine => TorusField::from_fn_real(grid, 1, |x, _| {
                (grid.wavenumber(kj[0]) * x[0] + grid.wavenumber(kj[1]) * x[1]).cos() / norm
            }),
            Parity::Sine => TorusField::from_fn_real(grid, 1, |x, _| {
                (grid.wavenumber(kj[0]) * x[0] + grid.wavenumber(kj[1]) * x[1]).sin() / norm
            }),
        };
        let image = acoustic_apply(rho0, &beta)?;
        let spec = forward(&image);
        for i in 0..nb {
            let c = spec.comp(0)[flat_index(grid, wavevecs[i])];
            let val = match parities[i] {
                Parity::Cosine => vol * c.re / norm,
                Parity::Sine => -vol * c.im / norm,
            };
            matrix[(i, j)] = val;
        }
    }
    // Symmetrize away the last rounding bits (the operator is symmetric).
    for i in 0..nb {
        for j in 0..i {
            let s = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = s;
            matrix[(j, i)] = s;
        }
    }
    Ok(AssembledOperator {
        matrix,
        wavevecs,
        parities,
        truncation,
        rho0: rho0.clone(),
    })
}

/// Diagonalized acoustic operator with materialized eigenfunctions.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    /// Ascending positive eigenvalues (materialized modes only).
    pub kappas: Vec<f64>,
    /// `sqrt(kappas)`, cached.
    pub sqrt_kappas: Vec<f64>,
    /// Eigenfunctions `chi_j` (scalar real fields, L2-orthonormal).
    pub modes: Vec<TorusField>,
    /// `grad chi_j`.
    pub grad_modes: Vec<TorusField>,
    /// `sqrt(rho0) grad chi_j`.
    pub weighted_grad_modes: Vec<TorusField>,
    /// Index groups of (numerically) equal eigenvalues.
    pub clusters: Vec<Vec<usize>>,
    /// Cluster id of each mode.
    pub cluster_of: Vec<usize>,
    /// The full ascending spectrum of the assembled matrix (diagnostics).
    pub full_spectrum: Vec<f64>,
    pub truncation: i64,
    pub cluster_tol_coeff: f64,
    pub rho0: TorusField,
    pub sqrt_rho0: TorusField,
}

/// Diagonalize an assembled operator and materialize at most `max_modes`
/// eigenfunctions (ascending).  Clusters are never split: the materialized
/// count is rounded down to a cluster boundary.
pub fn eigendecompose(
    op: &AssembledOperator,
    cluster_tol_coeff: f64,
    max_modes: usize,
) -> Result<EigenSystem> {
    let nb = op.matrix.nrows();
    let mut defect = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..nb {
        for j in 0..nb {
            defect = defect.max((op.matrix[(i, j)] - op.matrix[(j, i)]).abs());
            scale = scale.max(op.matrix[(i, j)].abs());
        }
    }
    if defect > 1e-12 * (1.0 + scale) {
        return Err(CoreError::NotSymmetric { defect });
    }

    let eig = nalgebra::SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let full_spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if full_spectrum[0] <= 0.0 {
        return Err(CoreError::InvalidParameter(format!(
            "acoustic operator not positive definite: min eigenvalue {}",
            full_spectrum[0]
        )));
    }

    // Cluster boundaries over the full spectrum.
    let mut cluster_of_full = vec![0usize; nb];
    let mut cid = 0usize;
    for i in 1..nb {
        if full_spectrum[i] - full_spectrum[i - 1]
            > cluster_tol_coeff * (1.0 + full_spectrum[i - 1])
        {
            cid += 1;
        }
        cluster_of_full[i] = cid;
    }
    // Round the materialized count down to a cluster boundary.
    let mut m = max_modes.min(nb);
    while m > 0 && m < nb && cluster_of_full[m - 1] == cluster_of_full[m] {
        m -= 1;
    }
    if m == 0 {
        return Err(CoreError::InvalidParameter(
            "no modes left after cluster-safe truncation".into(),
        ));
    }

    let grid = op.rho0.grid();
    let vol = grid.volume();
    let norm = (vol / 2.0).sqrt();
    let sqrt_rho0 = {
        let mut f = TorusField::zeros(grid, 1, Reality::Real);
        for p in 0..grid.points() {
            f.comp_mut(0)[p] = Complex64::new(op.rho0.comp(0)[p].re.sqrt(), 0.0);
        }
        f
    };

    let mut kappas = Vec::with_capacity(m);
    let mut modes = Vec::with_capacity(m);
    let mut grad_modes = Vec::with_capacity(m);
    let mut weighted_grad_modes = Vec::with_capacity(m);
    for r in 0..m {
        let col = eig.eigenvectors.column(order[r]);
        kappas.push(full_spectrum[r]);
        // Synthesize chi = sum_b c_b beta_b by placing trig coefficients.
        let mut spec = grid::Spectral::zeros(grid, 1);
        for (b, &c) in col.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let k = op.wavevecs[b];
            let plus = flat_index(grid, k);
            let minus = flat_index(grid, [-k[0], -k[1]]);
            let amp = c / (2.0 * norm);
            match op.parities[b] {
                Parity::Cosine => {
                    spec.comp_mut(0)[plus] += Complex64::new(amp, 0.0);
                    spec.comp_mut(0)[minus] += Complex64::new(amp, 0.0);
                }
                Parity::Sine => {
                    spec.comp_mut(0)[plus] += Complex64::new(0.0, -amp);
                    spec.comp_mut(0)[minus] += Complex64::new(0.0, amp);
                }
            }
        }
        let chi = inverse(&spec, Reality::Real);
        let grad = gradient(&chi)?;
        let mut wgrad = grad.clone();
        for c in 0..grid.dim() {
            for p in 0..grid.points() {
                let w = sqrt_rho0.comp(0)[p];
                wgrad.comp_mut(c)[p] *= w;
            }
        }
        modes.push(chi);
        grad_modes.push(grad);
        weighted_grad_modes.push(wgrad);
    }

    let cluster_of: Vec<usize> = cluster_of_full[..m].to_vec();
    let n_clusters = cluster_of[m - 1] + 1;
    let mut clusters = vec![Vec::new(); n_clusters];
    for (j, &c) in cluster_of.iter().enumerate() {
        clusters[c].push(j);
    }

    Ok(EigenSystem {
        sqrt_kappas: kappas.iter().map(|k| k.sqrt()).collect(),
        kappas,
        modes,
        grad_modes,
        weighted_grad_modes,
        clusters,
        cluster_of,
        full_spectrum,
        truncation: op.truncation,
        cluster_tol_coeff,
        rho0: op.rho0.clone(),
        sqrt_rho0,
    })
}

/// Convenience: assemble and diagonalize with default tolerances.
pub fn acoustic_eigensystem(
    rho0: &TorusField,
    truncation: i64,
    max_modes: usize,
) -> Result<EigenSystem> {
    let op = assemble_operator(rho0, truncation)?;
    eigendecompose(&op, DEFAULT_CLUSTER_TOL_COEFF, max_modes)
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.kappas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappas.is_empty()
    }

    pub fn grid(&self) -> TorusGrid {
        self.rho0.grid()
    }

    /// Keep only the lowest `retain` modes, rounded down so clusters are
    /// never split.
    pub fn truncate(&self, retain: usize) -> EigenSystem {
        let mut m = retain.min(self.len()).max(1);
        while m > 0 && m < self.len() && self.cluster_of[m - 1] == self.cluster_of[m] {
            m -= 1;
        }
        let m = m.max(1);
        let cluster_of: Vec<usize> = self.cluster_of[..m].to_vec();
        let n_clusters = cluster_of[m - 1] + 1;
        let mut clusters = vec![Vec::new(); n_clusters];
        for (j, &c) in cluster_of.iter().enumerate() {
            clusters[c].push(j);
        }
        EigenSystem {
            kappas: self.kappas[..m].to_vec(),
            sqrt_kappas: self.sqrt_kappas[..m].to_vec(),
            modes: self.modes[..m].to_vec(),
            grad_modes: self.grad_modes[..m].to_vec(),
            weighted_grad_modes: self.weighted_grad_modes[..m].to_vec(),
            clusters,
            cluster_of,
            full_spectrum: self.full_spectrum.clone(),
            truncation: self.truncation,
            cluster_tol_coeff: self.cluster_tol_coeff,
            rho0: self.rho0.clone(),
            sqrt_rho0: self.sqrt_rho0.clone(),
        }
    }

    /// `|| A chi_j - kappa_j chi_j ||_L2` with the operator applied
    /// spectrally on the grid (independent of the assembly path).
    pub fn operator_residual(&self, j: usize) -> Result<f64> {
        let image = acoustic_apply(&self.rho0, &self.modes[j])?;
        let diff = image.sub(&self.modes[j].scaled(self.kappas[j]))?;
        Ok(l2_norm(&diff))
    }

    /// L2 inner product matrix defect `max |<chi_l, chi_j> - delta_lj|`.
    pub fn orthonormality_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for l in 0..self.len() {
            for j in l..self.len() {
                let ip = grid::inner_product(&self.modes[l], &self.modes[j])?.re;
                let target = if l == j { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        Ok(worst)
    }
}

/// A fast-wave state in eigencoordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveCoords {
    pub plus: Vec<Complex64>,
    pub minus: Vec<Complex64>,
}

impl WaveCoords {
    pub fn zeros(n: usize) -> Self {
        WaveCoords {
            plus: vec![Complex64::new(0.0, 0.0); n],
            minus: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    /// L2 norm of the represented pair:
    /// `||V||^2 = 2 sum_j (|a_j^+|^2 + |a_j^-|^2)`.
    pub fn norm(&self) -> f64 {
        let s: f64 = self
            .plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| p.norm_sqr() + m.norm_sqr())
            .sum();
        (2.0 * s).sqrt()
    }

    /// Largest deviation from the reality condition `a_j^+ = conj(a_j^-)`.
    pub fn conjugacy_defect(&self) -> f64 {
        self.plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| (p - m.conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn axpy(&mut self, a: Complex64, other: &WaveCoords) {
        for j in 0..self.len() {
            self.plus[j] += a * other.plus[j];
            self.minus[j] += a * other.minus[j];
        }
    }

    pub fn scale(&mut self, a: Complex64) {
        for j in 0..self.len() {
            self.plus[j] *= a;
            self.minus[j] *= a;
        }
    }

    pub fn sub(&self, other: &WaveCoords) -> WaveCoords {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }
}

/// `integral A . B dx` (no conjugation) of two pairs in eigencoordinates:
/// `2 sum_j (a_j^+ b_j^- + a_j^- b_j^+)`.
pub fn coords_pairing(a: &WaveCoords, b: &WaveCoords) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..a.len() {
        s += a.plus[j] * b.minus[j] + a.minus[j] * b.plus[j];
    }
    2.0 * s
}

/// Hermitian inner product `integral A . conj(B) dx`:
/// `2 sum_j (a_j^+ conj(b_j^+) + a_j^- conj(b_j^-))`.
pub fn coords_inner(a: &WaveCoords, b: &WaveCoords) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..a.len() {
        s += a.plus[j] * b.plus[j].conj() + a.minus[j] * b.minus[j].conj();
    }
    2.0 * s
}

fn expand_core(
    eig: &EigenSystem,
    scalar: Option<&TorusField>,
    vector: &TorusField,
) -> Result<WaveCoords> {
    let m = eig.len();
    let mut coords = WaveCoords::zeros(m);
    for j in 0..m {
        let p = match scalar {
            Some(f) => pairing(f, &eig.modes[j])?,
            None => Complex64::new(0.0, 0.0),
        };
        let v = pairing(vector, &eig.weighted_grad_modes[j])?;
        let corr = Complex64::new(0.0, 1.0) * v / eig.sqrt_kappas[j];
        coords.plus[j] = 0.5 * (p - corr);
        coords.minus[j] = 0.5 * (p + corr);
    }
    Ok(coords)
}

/// Expand a grid pair `(phi, h)` with `h` expected of the form
/// `sqrt(rho0) grad w`.  The gradient-type precondition is checked by Leray
/// decomposition of `h / sqrt(rho0)`: its non-gradient content (mean +
/// divergence-free part) must stay below `tol * (1 + ||h/sqrt(rho0)||)`.
pub fn expand(
    eig: &EigenSystem,
    scalar: &TorusField,
    vector: &TorusField,
    tol: f64,
) -> Result<WaveCoords> {
    same_grid(scalar, &eig.rho0)?;
    same_grid(vector, &eig.rho0)?;
    let grid = eig.grid();
    // g = h / sqrt(rho0) should be a pure gradient.
    let mut g = vector.clone();
    for c in 0..grid.dim() {
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            g.comp_mut(c)[p] /= w;
        }
    }
    let solenoidal = helmholtz::leray_project(&g)?;
    let defect = l2_norm(&solenoidal);
    let bound = tol * (1.0 + l2_norm(&g));
    if defect > bound {
        return Err(CoreError::NonGradientComponent {
            norm: defect,
            tol: bound,
        });
    }
    expand_core(eig, Some(scalar), vector)
}

/// Reconstruct grid fields `(phi, h)` from eigencoordinates.  The fields are
/// complex in general; they are real (to rounding) whenever
/// `a_j^+ = conj(a_j^-)`.
pub fn reconstruct(eig: &EigenSystem, coords: &WaveCoords) -> Result<(TorusField, TorusField)> {
    if coords.len() != eig.len() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} coordinates", eig.len()),
            got: format!("{}", coords.len()),
        });
    }
    let grid = eig.grid();
    let dim = grid.dim();
    let mut scalar = TorusField::zeros(grid, 1, Reality::Complex);
    let mut vector = TorusField::zeros(grid, dim, Reality::Complex);
    for j in 0..eig.len() {
        let s = coords.plus[j] + coords.minus[j];
        let v = Complex64::new(0.0, 1.0) * (coords.plus[j] - coords.minus[j]) / eig.sqrt_kappas[j];
        if s.norm() > 0.0 {
            for p in 0..grid.points() {
                let add = s * eig.modes[j].comp(0)[p];
                scalar.comp_mut(0)[p] += add;
            }
        }
        if v.norm() > 0.0 {
            for c in 0..dim {
                for p in 0..grid.points() {
                    let add = v * eig.weighted_grad_modes[j].comp(c)[p];
                    vector.comp_mut(c)[p] += add;
                }
            }
        }
    }
    Ok((scalar, vector))
}

/// Apply the wave group `L(tau)`: `a_j^± *= e^(±i sqrt(kappa_j) tau)`.
pub fn wave_group(coords: &WaveCoords, eig: &EigenSystem, tau: f64) -> WaveCoords {
    let mut out = coords.clone();
    wave_group_mut(&mut out, eig, tau);
    out
}

pub fn wave_group_mut(coords: &mut WaveCoords, eig: &EigenSystem, tau: f64) {
    for j in 0..coords.len() {
        let phase = eig.sqrt_kappas[j] * tau;
        let e = Complex64::from_polar(1.0, phase);
        coords.plus[j] *= e;
        coords.minus[j] *= e.conj();
    }
}

/// Reconstruct the scalar (`L1`) and vector (`L2`) components of
/// `L(tau) V` as grid fields.
pub fn wave_group_fields(
    eig: &EigenSystem,
    coords: &WaveCoords,
    tau: f64,
) -> Result<(TorusField, TorusField)> {
    reconstruct(eig, &wave_group(coords, eig, tau))
}

fn check_weighted_solenoidal(u: &TorusField, rho0: &TorusField, tol: f64) -> Result<()> {
    let grid = u.grid();
    let mut flux = u.clone();
    for c in 0..grid.dim() {
        for p in 0..grid.points() {
            let w = rho0.comp(0)[p];
            flux.comp_mut(c)[p] *= w;
        }
    }
    let defect = l2_norm(&divergence(&flux)?);
    let bound = tol * (1.0 + l2_norm(u));
    if defect > bound {
        return Err(CoreError::NotWeightedSolenoidal {
            norm: defect,
            tol: bound,
        });
    }
    Ok(())
}

/// Grid-level linear coupling
/// `B1(u,V,tau) = div(sqrt(rho0) u (x) L2(tau)V + sqrt(rho0) L2(tau)V (x) u)`
/// with dealiased products.  Requires `div(rho0 u) = 0` within `sol_tol`.
pub fn b1(
    eig: &EigenSystem,
    u: &TorusField,
    v: &WaveCoords,
    tau: f64,
    sol_tol: f64,
) -> Result<TorusField> {
    same_grid(u, &eig.rho0)?;
    check_weighted_solenoidal(u, &eig.rho0, sol_tol)?;
    let grid = eig.grid();
    let dim = grid.dim();
    let (_, y) = wave_group_fields(eig, v, tau)?;
    // sqrt(rho0) u
    let mut su = u.clone();
    for c in 0..dim {
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            su.comp_mut(c)[p] *= w;
        }
    }
    let mut tensor = TorusField::zeros(grid, dim * dim, Reality::Complex);
    for r in 0..dim {
        for c in 0..dim {
            for p in 0..grid.points() {
                tensor.comp_mut(r * dim + c)[p] =
                    su.comp(r)[p] * y.comp(c)[p] + y.comp(r)[p] * su.comp(c)[p];
            }
        }
    }
    tensor_divergence(&dealias(&tensor))
}

/// Grid-level quadratic coupling
/// `B2(V1,V2,tau) = (1/2) div(L2 V1 (x) L2 V2 + L2 V2 (x) L2 V1)
///                + (1/2) grad(L1 V1 . L1 V2)`
/// with dealiased products.  Symmetric in its two arguments.
pub fn b2(eig: &EigenSystem, v1: &WaveCoords, v2: &WaveCoords, tau: f64) -> Result<TorusField> {
    let grid = eig.grid();
    let dim = grid.dim();
    let (x1, y1) = wave_group_fields(eig, v1, tau)?;
    let (x2, y2) = wave_group_fields(eig, v2, tau)?;
    let mut tensor = TorusField::zeros(grid, dim * dim, Reality::Complex);
    for r in 0..dim {
        for c in 0..dim {
            for p in 0..grid.points() {
                tensor.comp_mut(r * dim + c)[p] =
                    0.5 * (y1.comp(r)[p] * y2.comp(c)[p] + y2.comp(r)[p] * y1.comp(c)[p]);
            }
        }
    }
    let mut scalar = TorusField::zeros(grid, 1, Reality::Complex);
    for p in 0..grid.points() {
        scalar.comp_mut(0)[p] = 0.5 * x1.comp(0)[p] * x2.comp(0)[p];
    }
    let part1 = tensor_divergence(&dealias(&tensor))?;
    let part2 = gradient(&dealias(&scalar))?;
    part1.add(&part2)
}

/// Precomputed mode Hessians for the Q1 coupling matrix.
#[derive(Clone, Debug)]
pub struct Q1Context {
    hessians: Vec<TorusField>,
}

pub fn q1_context(eig: &EigenSystem) -> Result<Q1Context> {
    let hessians = eig.modes.iter().map(hessian).collect::<Result<Vec<_>>>()?;
    Ok(Q1Context { hessians })
}

/// Coupling matrix `g_jl(u) = integral div(rho0 u (x) grad chi_l
/// + grad chi_l (x) rho0 u) . grad chi_j dx`, evaluated by parts as
/// `-2 integral rho0 u . (hess(chi_j) grad chi_l) dx`.  Antisymmetric in
/// `(j,l)` exactly when `div(rho0 u) = 0`.
pub fn q1_matrix(ctx: &Q1Context, eig: &EigenSystem, u: &TorusField) -> Result<DMatrix<f64>> {
    same_grid(u, &eig.rho0)?;
    let grid = eig.grid();
    let dim = grid.dim();
    let npts = grid.points();
    let m = eig.len();
    let cell = grid.cell_volume();
    // w = rho0 u (real vector samples)
    let mut w = vec![0.0f64; dim * npts];
    for c in 0..dim {
        for p in 0..npts {
            w[c * npts + p] = eig.rho0.comp(0)[p].re * u.comp(c)[p].re;
        }
    }
    let mut g = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let hj = &ctx.hessians[j];
        for l in 0..m {
            // Only couplings inside a cluster are ever used, but the full
            // matrix is cheap and useful for the antisymmetry diagnostics.
            let gl = &eig.grad_modes[l];
            let mut acc = 0.0;
            for p in 0..npts {
                for r in 0..dim {
                    let mut hv = 0.0;
                    for c in 0..dim {
                        hv += hj.comp(r * dim + c)[p].re * gl.comp(c)[p].re;
                    }
                    acc += w[r * npts + p] * hv;
                }
            }
            g[(j, l)] = -2.0 * acc * cell;
        }
    }
    Ok(g)
}

/// Apply the resonance-averaged linear form:
/// `Q1(u,V)_j^± = (1/(2 kappa_j)) sum_{l in cluster(j)} a_l^± g_jl(u)`.
pub fn apply_q1(g: &DMatrix<f64>, eig: &EigenSystem, v: &WaveCoords) -> WaveCoords {
    let m = eig.len();
    let mut out = WaveCoords::zeros(m);
    for j in 0..m {
        let cluster = &eig.clusters[eig.cluster_of[j]];
        let mut p = Complex64::new(0.0, 0.0);
        let mut q = Complex64::new(0.0, 0.0);
        for &l in cluster {
            p += v.plus[l] * g[(j, l)];
            q += v.minus[l] * g[(j, l)];
        }
        let scale = 1.0 / (2.0 * eig.kappas[j]);
        out.plus[j] = p * scale;
        out.minus[j] = q * scale;
    }
    out
}

/// Convenience: check `u`, build the matrix, and apply.
pub fn q1(eig: &EigenSystem, u: &TorusField, v: &WaveCoords, sol_tol: f64) -> Result<WaveCoords> {
    check_weighted_solenoidal(u, &eig.rho0, sol_tol)?;
    let ctx = q1_context(eig)?;
    let g = q1_matrix(&ctx, eig, u)?;
    Ok(apply_q1(&g, eig, v))
}

/// One exactly resonant interaction `sigma sqrt(kappa_l) + mu sqrt(kappa_m)
/// = nu sqrt(kappa_j)` retained by the averaged quadratic form.
#[derive(Clone, Copy, Debug)]
pub struct ResonantTerm {
    pub j: usize,
    pub l: usize,
    pub m: usize,
    pub sigma: i8,
    pub mu: i8,
    pub nu: i8,
    /// Multiplies `a_l^sigma b_m^mu` and accumulates into side `nu` of mode `j`.
    pub coeff: Complex64,
}

/// A (near-)resonance record: `gamma_j + gamma_l + gamma_m = defect` with
/// `gamma_s = signs * sqrt(kappa_s)`.
#[derive(Clone, Copy, Debug)]
pub struct ResonanceTriple {
    pub j: usize,
    pub l: usize,
    pub m: usize,
    pub signs: [i8; 3],
    pub defect: f64,
}

/// Precomputed resonance structure of the quadratic form.
#[derive(Clone, Debug)]
pub struct Q2Tables {
    pub terms: Vec<ResonantTerm>,
    /// Exactly resonant triples (defect <= res_tol), in `(gamma_j, gamma_l,
    /// gamma_m)` sign convention.
    pub triples: Vec<ResonanceTriple>,
    /// Ambiguous gaps: res_tol < defect <= gap_tol.  Excluded from `terms`.
    pub near: Vec<ResonanceTriple>,
    pub res_tol: f64,
    pub gap_tol: f64,
    pub n_modes: usize,
}

/// Detect resonance triples and precompute the interaction coefficients
///
/// ```text
/// coeff = (-nu i / (2 sqrt(kappa_j))) * (1/2) [ -sigma mu /
///         (sqrt(kappa_l) sqrt(kappa_m)) * d_jlm + n_jlm ]
/// d_jlm = integral div(rho0 (grad chi_l (x) grad chi_m
///         + grad chi_m (x) grad chi_l)) . grad chi_j dx
/// n_jlm = integral grad(chi_l chi_m) . grad chi_j dx
/// ```
///
/// evaluated by parts as Hessian/Laplacian quadratures.  Rejects
/// `res_tol_coeff < cluster_tol_coeff` (a resonance net finer than the
/// cluster resolution is meaningless).
pub fn q2_tables(eig: &EigenSystem, res_tol_coeff: f64, gap_tol: f64) -> Result<Q2Tables> {
    if res_tol_coeff < eig.cluster_tol_coeff {
        return Err(CoreError::ToleranceConflict(format!(
            "resonance tolerance coefficient {res_tol_coeff} is finer than the cluster \
             tolerance coefficient {}",
            eig.cluster_tol_coeff
        )));
    }
    let m = eig.len();
    let grid = eig.grid();
    let dim = grid.dim();
    let npts = grid.points();
    let cell = grid.cell_volume();
    let sq = &eig.sqrt_kappas;
    let res_tol = res_tol_coeff * (1.0 + sq[m - 1]);
    if gap_tol <= res_tol {
        return Err(CoreError::ToleranceConflict(format!(
            "gap tolerance {gap_tol} must exceed the resonance tolerance {res_tol}"
        )));
    }

    // Enumerate sign patterns; collect unique (j,l,m) needing quadratures.
    let mut needed = std::collections::BTreeSet::new();
    let mut triples = Vec::new();
    let mut near = Vec::new();
    let mut raw_terms = Vec::new(); // (j,l,m,sigma,mu,nu)
    for j in 0..m {
        for l in 0..m {
            for mm in 0..m {
                for &sigma in &[1i8, -1] {
                    for &mu in &[1i8, -1] {
                        for &nu in &[1i8, -1] {
                            let defect = (sigma as f64 * sq[l] + mu as f64 * sq[mm]
                                - nu as f64 * sq[j])
                                .abs();
                            if defect <= res_tol {
                                raw_terms.push((j, l, mm, sigma, mu, nu));
                                needed.insert((j, l, mm));
                                // gamma convention: gamma_j = -nu sqrt(kappa_j)
                                triples.push(ResonanceTriple {
                                    j,
                                    l,
                                    m: mm,
                                    signs: [-nu, sigma, mu],
                                    defect,
                                });
                            } else if defect <= gap_tol {
                                near.push(ResonanceTriple {
                                    j,
                                    l,
                                    m: mm,
                                    signs: [-nu, sigma, mu],
                                    defect,
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    // Hessians and Laplacians required by the quadratures.
    let mut hess_needed = std::collections::BTreeSet::new();
    let mut lap_needed = std::collections::BTreeSet::new();
    for &(j, _, _) in &needed {
        hess_needed.insert(j);
        lap_needed.insert(j);
    }
    let mut hessians = std::collections::BTreeMap::new();
    for &j in &hess_needed {
        hessians.insert(j, hessian(&eig.modes[j])?);
    }
    let mut laplacians = std::collections::BTreeMap::new();
    for &j in &lap_needed {
        laplacians.insert(j, grid::laplacian(&eig.modes[j])?);
    }

    // d_jlm = -2 integral rho0 grad chi_l . (hess chi_j grad chi_m) dx
    // n_jlm = -  integral chi_l chi_m lap chi_j dx
    let mut dn = std::collections::BTreeMap::new();
    for &(j, l, mm) in &needed {
        let hj = &hessians[&j];
        let gl = &eig.grad_modes[l];
        let gm = &eig.grad_modes[mm];
        let mut d = 0.0;
        for p in 0..npts {
            let w = eig.rho0.comp(0)[p].re;
            for r in 0..dim {
                let mut hv = 0.0;
                for c in 0..dim {
                    hv += hj.comp(r * dim + c)[p].re * gm.comp(c)[p].re;
                }
                d += w * gl.comp(r)[p].re * hv;
            }
        }
        d *= -2.0 * cell;
        let lj = &laplacians[&j];
        let mut n = 0.0;
        for p in 0..npts {
            n += eig.modes[l].comp(0)[p].re * eig.modes[mm].comp(0)[p].re * lj.comp(0)[p].re;
        }
        n *= -cell;
        dn.insert((j, l, mm), (d, n));
    }

    let mut terms = Vec::with_capacity(raw_terms.len());
    for (j, l, mm, sigma, mu, nu) in raw_terms {
        let (d, n) = dn[&(j, l, mm)];
        let h = 0.5 * (-(sigma as f64) * (mu as f64) / (sq[l] * sq[mm]) * d + n);
        let coeff = Complex64::new(0.0, -(nu as f64) / (2.0 * sq[j])) * h;
        terms.push(ResonantTerm {
            j,
            l,
            m: mm,
            sigma,
            mu,
            nu,
            coeff,
        });
    }

    Ok(Q2Tables {
        terms,
        triples,
        near,
        res_tol,
        gap_tol,
        n_modes: m,
    })
}

fn side(v: &WaveCoords, idx: usize, sign: i8) -> Complex64 {
    if sign > 0 {
        v.plus[idx]
    } else {
        v.minus[idx]
    }
}

/// Apply the resonance-averaged quadratic form (symmetric in `v1, v2`).
pub fn apply_q2(tables: &Q2Tables, v1: &WaveCoords, v2: &WaveCoords) -> WaveCoords {
    let mut out = WaveCoords::zeros(tables.n_modes);
    for t in &tables.terms {
        let contrib = t.coeff * side(v1, t.l, t.sigma) * side(v2, t.m, t.mu);
        if t.nu > 0 {
            out.plus[t.j] += contrib;
        } else {
            out.minus[t.j] += contrib;
        }
    }
    out
}

/// Convenience: build tables with default tolerances and apply once.
pub fn q2(eig: &EigenSystem, v1: &WaveCoords, v2: &WaveCoords) -> Result<WaveCoords> {
    let tables = q2_tables(eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL)?;
    Ok(apply_q2(&tables, v1, v2))
}

/// Averaging window of the numerical time average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AverageWindow {
    /// Plain average; leakage of a frequency `w` decays like `1/(w T)`.
    Flat,
    /// Symmetric triangular window; leakage decays like `(4/(w T))^2`.
    Triangular,
}

/// Options of the brute-force time-average oracle.
#[derive(Clone, Copy, Debug)]
pub struct OracleOptions {
    pub tau_max: f64,
    pub n_samples: usize,
    pub window: AverageWindow,
    /// Absolute residual tolerance of the projection solves.
    pub project_tol: f64,
    pub gap_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            tau_max: 4000.0,
            n_samples: 40_000,
            window: AverageWindow::Triangular,
            project_tol: 1e-11,
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

/// Near-resonances visible to the oracle (frequency gaps below `gap_tol`
/// that are not exact resonances); the averages cannot separate them from
/// true resonances at finite `tau_max`.
fn detect_near_resonances(eig: &EigenSystem, res_tol: f64, gap_tol: f64) -> Vec<ResonanceTriple> {
    let m = eig.len();
    let sq = &eig.sqrt_kappas;
    let mut near = Vec::new();
    for j in 0..m {
        for l in 0..m {
            for mm in 0..m {
                for &sigma in &[1i8, -1] {
                    for &mu in &[1i8, -1] {
                        for &nu in &[1i8, -1] {
                            let defect = (sigma as f64 * sq[l] + mu as f64 * sq[mm]
                                - nu as f64 * sq[j])
                                .abs();
                            if defect > res_tol && defect <= gap_tol {
                                near.push(ResonanceTriple {
                                    j,
                                    l,
                                    m: mm,
                                    signs: [-nu, sigma, mu],
                                    defect,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    near
}

/// Lift a grid vector field into eigencoordinates of `(0, P F / sqrt(rho0))`
/// through the explicit weighted projection (the oracle path).
fn lift_projected(eig: &EigenSystem, f: &TorusField, project_tol: f64) -> Result<WaveCoords> {
    let grid = eig.grid();
    // Complex fields: project real and imaginary parts separately.
    let project_part = |part: &TorusField| -> Result<TorusField> {
        helmholtz::project(part, &eig.rho0, project_tol).map(|d| d.gradient_part)
    };
    let (re, im) = split_complex(f);
    let pre = project_part(&re)?;
    let pim = if im.max_abs() > 1e-14 * (1.0 + f.max_abs()) {
        Some(project_part(&im)?)
    } else {
        None
    };
    let mut h = TorusField::zeros(grid, f.components(), Reality::Complex);
    for c in 0..f.components() {
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            let re_v = pre.comp(c)[p].re;
            let im_v = pim.as_ref().map_or(0.0, |g| g.comp(c)[p].re);
            h.comp_mut(c)[p] = Complex64::new(re_v, im_v) / w;
        }
    }
    expand_core(eig, None, &h)
}

fn split_complex(f: &TorusField) -> (TorusField, TorusField) {
    let grid = f.grid();
    let mut re = TorusField::zeros(grid, f.components(), Reality::Real);
    let mut im = TorusField::zeros(grid, f.components(), Reality::Real);
    for c in 0..f.components() {
        for p in 0..grid.points() {
            let z = f.comp(c)[p];
            re.comp_mut(c)[p] = Complex64::new(z.re, 0.0);
            im.comp_mut(c)[p] = Complex64::new(z.im, 0.0);
        }
    }
    (re, im)
}

fn averaged_lift<BF>(
    eig: &EigenSystem,
    opts: &OracleOptions,
    mut b_at: BF,
) -> Result<(WaveCoords, Vec<ResonanceTriple>)>
where
    BF: FnMut(f64) -> Result<TorusField>,
{
    // Sampling must resolve the fastest beat frequency.
    let omega_max = 3.0 * eig.sqrt_kappas.last().copied().unwrap_or(0.0);
    let ds = opts.tau_max / opts.n_samples as f64;
    if omega_max * ds > std::f64::consts::PI / 2.0 {
        return Err(CoreError::InvalidParameter(format!(
            "oracle undersampled: ds = {ds:.3e} too coarse for beat frequency {omega_max:.3}"
        )));
    }
    let res_tol = DEFAULT_RES_TOL_COEFF * (1.0 + eig.sqrt_kappas.last().copied().unwrap_or(0.0));
    let near = detect_near_resonances(eig, res_tol, opts.gap_tol);

    let mut acc = WaveCoords::zeros(eig.len());
    let mut wsum = 0.0;
    for k in 0..opts.n_samples {
        let s = (k as f64 + 0.5) * ds;
        let w = match opts.window {
            AverageWindow::Flat => 1.0,
            AverageWindow::Triangular => 1.0 - (2.0 * s / opts.tau_max - 1.0).abs(),
        };
        let field = b_at(s)?;
        let mut z = lift_projected(eig, &field, opts.project_tol)?;
        wave_group_mut(&mut z, eig, -s);
        acc.axpy(Complex64::new(w, 0.0), &z);
        wsum += w;
    }
    acc.scale(Complex64::new(1.0 / wsum, 0.0));
    Ok((acc, near))
}

/// Brute-force numerical average defining the linear form; converges to
/// [`q1`] as `tau_max` grows (rate `1/tau_max` with the flat window).
pub fn time_average_q1(
    eig: &EigenSystem,
    u: &TorusField,
    v: &WaveCoords,
    opts: &OracleOptions,
) -> Result<(WaveCoords, Vec<ResonanceTriple>)> {
    check_weighted_solenoidal(u, &eig.rho0, 1e-8)?;
    averaged_lift(eig, opts, |s| b1(eig, u, v, s, 1e-8))
}

/// Brute-force numerical average defining the quadratic form; converges to
/// [`q2`] as `tau_max` grows when all non-resonant gaps exceed `gap_tol`.
pub fn time_average_q2(
    eig: &EigenSystem,
    v1: &WaveCoords,
    v2: &WaveCoords,
    opts: &OracleOptions,
) -> Result<(WaveCoords, Vec<ResonanceTriple>)> {
    averaged_lift(eig, opts, |s| b2(eig, v1, v2, s))
}

/// Filtered state `L(-t/eps)(phi, sqrt(rho0) grad w)` of a hydrodynamic
/// snapshot, where `rho0 grad w` is the weighted-gradient part of `J`.
pub fn filter_state(h: &HydroState, eig: &EigenSystem, project_tol: f64) -> Result<WaveCoords> {
    same_grid(&h.rho, &eig.rho0)?;
    let grid = eig.grid();
    let proj = helmholtz::project(&h.j, &eig.rho0, project_tol)?;
    // sqrt(rho0) grad w = (rho0 grad w) / sqrt(rho0)
    let mut vec_part = proj.gradient_part;
    for c in 0..grid.dim() {
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            vec_part.comp_mut(c)[p] /= w;
        }
    }
    let mut coords = expand_core(eig, Some(&h.phi), &vec_part)?;
    wave_group_mut(&mut coords, eig, -h.time / h.eps);
    Ok(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_product, integral};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn const_rho0(grid: TorusGrid) -> TorusField {
        TorusField::from_fn_real(grid, 1, |_, _| 1.0)
    }

    fn cosine_rho0(grid: TorusGrid, amp: f64) -> TorusField {
        TorusField::from_fn_real(grid, 1, |x, _| 1.0 + amp * x[0].cos())
    }

    fn random_real_coords(n: usize, rng: &mut ChaCha8Rng) -> WaveCoords {
        let mut c = WaveCoords::zeros(n);
        for j in 0..n {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            c.plus[j] = z;
            c.minus[j] = z.conj();
        }
        c
    }

    #[test]
    fn assembly_is_diagonal_for_constant_density() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let rho0 = const_rho0(grid);
        let op = assemble_operator(&rho0, 5).unwrap();
        let expected = [1.0, 1.0, 4.0, 4.0, 9.0, 9.0, 16.0, 16.0, 25.0, 25.0];
        for i in 0..op.matrix.nrows() {
            for j in 0..op.matrix.ncols() {
                let want = if i == j { expected[i] } else { 0.0 };
                assert!(
                    (op.matrix[(i, j)] - want).abs() < 1e-12,
                    "entry ({i},{j}) = {} want {want}",
                    op.matrix[(i, j)]
                );
            }
        }
    }

    #[test]
    fn constant_density_spectrum_is_squares_with_pairs() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&const_rho0(grid), 8, 100).unwrap();
        let expected: Vec<f64> = (1..=8)
            .flat_map(|k| [k * k, k * k])
            .map(|v| v as f64)
            .collect();
        assert_eq!(eig.len(), 16);
        for (k, e) in eig.kappas.iter().zip(expected.iter()) {
            assert_relative_eq!(k, e, max_relative = 1e-9);
        }
        for cl in &eig.clusters {
            assert_eq!(cl.len(), 2, "clusters {:?}", eig.clusters);
        }
        assert!(eig.orthonormality_defect().unwrap() < 1e-10);
        for j in 0..eig.len() {
            let r = eig.operator_residual(j).unwrap();
            assert!(r <= 1e-9 * (1.0 + eig.kappas[j]), "residual {r} at j={j}");
        }
    }

    #[test]
    fn constant_density_spectrum_2d_multiplicities() {
        let grid = TorusGrid::unit(2, 32).unwrap();
        let eig = acoustic_eigensystem(&const_rho0(grid), 3, 1000).unwrap();
        // |k|^2 values: 1 (x4), 2 (x4), 4 (x4), 5 (x8), 8 (x4), 9 (x4)
        let expected = [(1.0, 4), (2.0, 4), (4.0, 4), (5.0, 8), (8.0, 4), (9.0, 4)];
        let mut idx = 0;
        for (val, mult) in expected {
            for _ in 0..mult {
                assert_relative_eq!(eig.kappas[idx], val, max_relative = 1e-9);
                idx += 1;
            }
        }
        assert_eq!(eig.clusters[0].len(), 4);
        assert_eq!(eig.clusters[3].len(), 8);
    }

    #[test]
    fn cosine_density_eigensystem_invariants() {
        let grid = TorusGrid::unit(1, 128).unwrap();
        let rho0 = cosine_rho0(grid, 0.3);
        let op = assemble_operator(&rho0, 40).unwrap();
        let eig = eigendecompose(&op, DEFAULT_CLUSTER_TOL_COEFF, 30).unwrap();
        assert!(eig.kappas[0] > 0.0);
        assert!(eig.orthonormality_defect().unwrap() < 1e-10);
        for j in 0..eig.len() {
            let r = eig.operator_residual(j).unwrap();
            assert!(
                r <= 1e-9 * (1.0 + eig.kappas[j]),
                "residual {r} vs kappa {}",
                eig.kappas[j]
            );
        }
        // ascending order
        for w in eig.kappas.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
    }

    #[test]
    fn truncation_beyond_grid_rejected() {
        let grid = TorusGrid::unit(1, 32).unwrap();
        let rho0 = cosine_rho0(grid, 0.3);
        assert!(matches!(
            assemble_operator(&rho0, 16),
            Err(CoreError::TruncationExceedsNyquist { .. })
        ));
    }

    #[test]
    fn nonsymmetric_matrix_rejected() {
        let grid = TorusGrid::unit(1, 32).unwrap();
        let rho0 = const_rho0(grid);
        let mut op = assemble_operator(&rho0, 3).unwrap();
        op.matrix[(0, 1)] += 1e-6;
        assert!(matches!(
            eigendecompose(&op, DEFAULT_CLUSTER_TOL_COEFF, 10),
            Err(CoreError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn expand_single_scalar_mode() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 12, 10).unwrap();
        let zero_vec = TorusField::zeros(grid, 1, Reality::Real);
        let coords = expand(&eig, &eig.modes[0], &zero_vec, DEFAULT_EXPAND_TOL).unwrap();
        assert!((coords.plus[0] - Complex64::new(0.5, 0.0)).norm() < 1e-10);
        assert!((coords.minus[0] - Complex64::new(0.5, 0.0)).norm() < 1e-10);
        for j in 1..eig.len() {
            assert!(coords.plus[j].norm() < 1e-10);
            assert!(coords.minus[j].norm() < 1e-10);
        }
    }

    #[test]
    fn expand_single_vector_mode() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 12, 10).unwrap();
        let zero_scalar = TorusField::zeros(grid, 1, Reality::Real);
        let vec_part = eig.weighted_grad_modes[0].scaled(1.0 / eig.sqrt_kappas[0]);
        let coords = expand(&eig, &zero_scalar, &vec_part, DEFAULT_EXPAND_TOL).unwrap();
        // a_1^+ = -i/2, a_1^- = +i/2
        assert!((coords.plus[0] - Complex64::new(0.0, -0.5)).norm() < 1e-10);
        assert!((coords.minus[0] - Complex64::new(0.0, 0.5)).norm() < 1e-10);
        for j in 1..eig.len() {
            assert!(coords.plus[j].norm() < 1e-10);
        }
    }

    #[test]
    fn expand_reconstruct_roundtrip() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 16, 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let coords = random_real_coords(eig.len(), &mut rng);
            let (phi, h) = reconstruct(&eig, &coords).unwrap();
            assert!(phi.max_imag() < 1e-12, "reconstruction should be real");
            let back = expand(&eig, &phi, &h, DEFAULT_EXPAND_TOL).unwrap();
            let err = back.sub(&coords).norm();
            assert!(err < 1e-9, "round trip error {err}");
            assert!(back.conjugacy_defect() < 1e-10);
        }
    }

    #[test]
    fn expand_rejects_nongradient_vector_part() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 12, 10).unwrap();
        let zero_scalar = TorusField::zeros(grid, 1, Reality::Real);
        // In 1D a constant vector part is not of gradient type.
        let junk = TorusField::from_fn_real(grid, 1, |_, _| 0.3);
        match expand(&eig, &zero_scalar, &junk, DEFAULT_EXPAND_TOL) {
            Err(CoreError::NonGradientComponent { norm, .. }) => {
                assert!(norm > 0.1, "defect should be reported, got {norm}");
            }
            other => panic!("expected non-gradient rejection, got {other:?}"),
        }
    }

    #[test]
    fn wave_group_isometry_and_group_law() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 16, 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let v = random_real_coords(eig.len(), &mut rng);
            let t1: f64 = rng.gen_range(-20.0..20.0);
            let t2: f64 = rng.gen_range(-20.0..20.0);
            let n0 = v.norm();
            let w = wave_group(&v, &eig, t1);
            assert!((w.norm() - n0).abs() <= 1e-10 * n0, "isometry violated");
            let a = wave_group(&w, &eig, t2);
            let b = wave_group(&v, &eig, t1 + t2);
            assert!(a.sub(&b).norm() <= 1e-10 * n0, "group law violated");
            let id = wave_group(&w, &eig, -t1);
            assert!(id.sub(&v).norm() <= 1e-10 * n0, "inverse violated");
            assert_eq!(wave_group(&v, &eig, 0.0), v);
        }
    }

    #[test]
    fn wave_group_satisfies_generator_relation() {
        // (L1(t+h)V - L1(t-h)V)/(2h) = -div(sqrt(rho0) L2(t)V) + O(h^2)
        let grid = TorusGrid::unit(1, 128).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 16, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_real_coords(eig.len(), &mut rng);
        let tau = 0.37;
        let (_, y) = wave_group_fields(&eig, &v, tau).unwrap();
        let mut sy = y.clone();
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            sy.comp_mut(0)[p] *= w;
        }
        let rhs = divergence(&sy).unwrap().scaled(-1.0);
        let err_at = |h: f64| {
            let (xp, _) = wave_group_fields(&eig, &v, tau + h).unwrap();
            let (xm, _) = wave_group_fields(&eig, &v, tau - h).unwrap();
            let diff = xp.sub(&xm).unwrap().scaled(1.0 / (2.0 * h));
            l2_norm(&diff.sub(&rhs).unwrap())
        };
        let e1 = err_at(1e-3);
        let e2 = err_at(5e-4);
        let ratio = e1 / e2;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "expected O(h^2): errors {e1:.3e}, {e2:.3e} ratio {ratio:.2}"
        );
    }

    #[test]
    fn b_forms_vanish_on_zero_input() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 12, 10).unwrap();
        let zero = WaveCoords::zeros(eig.len());
        // 1D weighted-solenoidal: u = c / rho0.
        let u = TorusField::from_fn_real(grid, 1, |x, _| 1.0 / (1.0 + 0.3 * x[0].cos()));
        assert!(b1(&eig, &u, &zero, 0.7, 1e-8).unwrap().max_abs() < 1e-14);
        assert!(b2(&eig, &zero, &zero, 0.7).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn b1_rejects_non_weighted_solenoidal_u() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 12, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_real_coords(eig.len(), &mut rng);
        let u = TorusField::from_fn_real(grid, 1, |x, _| 1.0 + 0.5 * x[0].sin());
        assert!(matches!(
            b1(&eig, &u, &v, 0.1, 1e-8),
            Err(CoreError::NotWeightedSolenoidal { .. })
        ));
    }

    #[test]
    fn b2_single_mode_matches_symbolic_form() {
        // V = mode-j pair with a^+ = a^- = 1/2:
        //   L1(t)V = cos(sqrt(k) t) chi,  L2(t)V = -(sin(sqrt(k) t)/sqrt(k)) sqrt(rho0) grad chi
        // so B2(V,V,t) = (sin^2/k) div(rho0 grad chi (x) grad chi)
        //              + (cos^2/2) grad(chi^2).
        let grid = TorusGrid::unit(1, 128).unwrap();
        let rho0 = cosine_rho0(grid, 0.3);
        let eig = acoustic_eigensystem(&rho0, 16, 10).unwrap();
        let j = 2;
        let mut v = WaveCoords::zeros(eig.len());
        v.plus[j] = Complex64::new(0.5, 0.0);
        v.minus[j] = Complex64::new(0.5, 0.0);
        let tau = 0.83;
        let got = b2(&eig, &v, &v, tau).unwrap();

        let sk = eig.sqrt_kappas[j];
        let (s2, c2) = ((sk * tau).sin().powi(2), (sk * tau).cos().powi(2));
        let dim = grid.dim();
        let mut tensor = TorusField::zeros(grid, dim * dim, Reality::Real);
        for r in 0..dim {
            for c in 0..dim {
                for p in 0..grid.points() {
                    tensor.comp_mut(r * dim + c)[p] = rho0.comp(0)[p]
                        * eig.grad_modes[j].comp(r)[p]
                        * eig.grad_modes[j].comp(c)[p];
                }
            }
        }
        let mut chi2 = TorusField::zeros(grid, 1, Reality::Real);
        for p in 0..grid.points() {
            chi2.comp_mut(0)[p] = eig.modes[j].comp(0)[p] * eig.modes[j].comp(0)[p];
        }
        let part1 = tensor_divergence(&dealias(&tensor))
            .unwrap()
            .scaled(s2 / eig.kappas[j]);
        let part2 = gradient(&dealias(&chi2)).unwrap().scaled(0.5 * c2);
        let expected = part1.add(&part2).unwrap();
        let err = l2_norm(&got.sub(&expected).unwrap()) / (1.0 + l2_norm(&expected));
        assert!(err < 1e-10, "single-mode B2 mismatch {err}");
    }

    #[test]
    fn b2_zero_frequency_part_is_weighted_gradient() {
        // The time average of <B2(V,V,s), u> over weighted-solenoidal u
        // vanishes: the zero-frequency component of B2 pairs to zero, the
        // oscillatory remainder averages out at rate 1/tau.
        let grid = TorusGrid::unit(1, 64).unwrap();
        let rho0 = cosine_rho0(grid, 0.3);
        let eig = acoustic_eigensystem(&rho0, 12, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = random_real_coords(eig.len(), &mut rng);
        let u = TorusField::from_fn_real(grid, 1, |x, _| 1.0 / (1.0 + 0.3 * x[0].cos()));
        let avg_at = |tau_max: f64| {
            let n = 4000;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let s = (k as f64 + 0.5) * tau_max / n as f64;
                let b = b2(&eig, &v, &v, s).unwrap();
                acc += pairing(&b, &u).unwrap();
            }
            (acc / n as f64).norm()
        };
        let a1 = avg_at(50.0);
        let a2 = avg_at(100.0);
        let scale = v.norm() * v.norm() * l2_norm(&u);
        assert!(a2 < a1, "average should decay: {a1:.3e} -> {a2:.3e}");
        assert!(
            a2 < 0.05 * scale,
            "average too large: {a2:.3e} vs scale {scale:.3e}"
        );
    }

    #[test]
    fn q1_energy_identity_and_antisymmetry() {
        let grid = TorusGrid::unit(1, 128).unwrap();
        let rho0 = cosine_rho0(grid, 0.3);
        let eig = acoustic_eigensystem(&rho0, 24, 20).unwrap();
        let u = TorusField::from_fn_real(grid, 1, |x, _| 1.0 / (1.0 + 0.3 * x[0].cos()));
        let ctx = q1_context(&eig).unwrap();
        let g = q1_matrix(&ctx, &eig, &u).unwrap();

        // g antisymmetric when div(rho0 u) = 0 (exact here).
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..eig.len() {
            for l in 0..eig.len() {
                worst = worst.max((g[(j, l)] + g[(l, j)]).abs());
                scale = scale.max(g[(j, l)].abs());
            }
        }
        assert!(worst <= 1e-9 * (1.0 + scale), "antisymmetry defect {worst}");

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..25 {
            let v1 = random_real_coords(eig.len(), &mut rng);
            let v2 = random_real_coords(eig.len(), &mut rng);
            let q_v1 = apply_q1(&g, &eig, &v1);
            let q_v2 = apply_q1(&g, &eig, &v2);
            let self_pair = coords_pairing(&q_v1, &v1).norm();
            assert!(
                self_pair <= 1e-8 * v1.norm() * v1.norm() * (1.0 + scale),
                "energy identity defect {self_pair}"
            );
            let cross = (coords_pairing(&q_v1, &v2) + coords_pairing(&q_v2, &v1)).norm();
            assert!(
                cross <= 1e-8 * v1.norm() * v2.norm() * (1.0 + scale),
                "antisymmetric form defect {cross}"
            );
        }
    }

    #[test]
    fn q1_matches_time_average_oracle() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let rho0 = const_rho0(grid);
        let eig = acoustic_eigensystem(&rho0, 8, 6).unwrap();
        let u = TorusField::from_fn_real(grid, 1, |_, _| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v = random_real_coords(eig.len(), &mut rng);
        let exact = q1(&eig, &u, &v, 1e-8).unwrap();
        let opts = OracleOptions {
            tau_max: 6000.0,
            n_samples: 60_000,
            ..Default::default()
        };
        let (oracle, near) = time_average_q1(&eig, &u, &v, &opts).unwrap();
        assert!(near.is_empty());
        let err = exact.sub(&oracle).norm() / (1.0 + exact.norm());
        assert!(err < 1e-6, "q1 vs oracle {err}");
    }

    #[test]
    fn q2_identities_hold() {
        let grid = TorusGrid::unit(1, 128).unwrap();
        let rho0 = const_rho0(grid);
        // k <= 10: plenty of integer resonances.
        let eig = acoustic_eigensystem(&rho0, 20, 20).unwrap();
        let tables = q2_tables(&eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
        assert!(tables.near.is_empty());
        assert!(
            !tables.terms.is_empty(),
            "resonances expected on this system"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..25 {
            let v1 = random_real_coords(eig.len(), &mut rng);
            let v2 = random_real_coords(eig.len(), &mut rng);
            let q11 = apply_q2(&tables, &v1, &v1);
            let q12 = apply_q2(&tables, &v1, &v2);
            let q21 = apply_q2(&tables, &v2, &v1);
            // symmetry of the bilinear extension
            assert!(q12.sub(&q21).norm() < 1e-12 * (1.0 + q12.norm()));
            // cubic identity
            let scale1 = v1.norm().powi(3).max(1.0);
            let c1 = coords_pairing(&q11, &v1).norm();
            assert!(c1 <= 1e-8 * scale1, "cubic identity defect {c1:.3e}");
            // trilinear identity
            let scale2 = (v1.norm().powi(2) * v2.norm()).max(1.0);
            let t = (coords_pairing(&q11, &v2) + 2.0 * coords_pairing(&q12, &v1)).norm();
            assert!(t <= 1e-8 * scale2, "trilinear identity defect {t:.3e}");
        }
    }

    #[test]
    fn q2_matches_time_average_oracle() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let rho0 = const_rho0(grid);
        // retain k <= 3 (6 modes): resonances 1+1=2, 1+2=3, and conjugates.
        let eig = acoustic_eigensystem(&rho0, 8, 6).unwrap();
        let tables = q2_tables(&eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let v1 = random_real_coords(eig.len(), &mut rng);
        let v2 = random_real_coords(eig.len(), &mut rng);
        let exact = apply_q2(&tables, &v1, &v2);
        let opts = OracleOptions {
            tau_max: 6000.0,
            n_samples: 60_000,
            ..Default::default()
        };
        let (oracle, near) = time_average_q2(&eig, &v1, &v2, &opts).unwrap();
        assert!(near.is_empty());
        let err = exact.sub(&oracle).norm() / (1.0 + exact.norm());
        assert!(err < 1e-6, "q2 vs oracle {err:.3e}");
        assert!(
            exact.norm() > 1e-3,
            "test should exercise nonzero resonances"
        );
    }

    #[test]
    fn flat_window_average_converges_at_rate_one_over_tau() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let rho0 = const_rho0(grid);

        // Retaining only k = 1: products of k = 1 fields carry wavenumbers
        // {0, 2} only, so the lift onto the retained modes vanishes
        // identically and the table is empty.
        let tiny = acoustic_eigensystem(&rho0, 8, 2).unwrap();
        let tiny_tables = q2_tables(&tiny, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
        assert!(tiny_tables.terms.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let v0 = random_real_coords(tiny.len(), &mut rng);
        let opts0 = OracleOptions {
            tau_max: 40.0,
            n_samples: 400,
            window: AverageWindow::Flat,
            ..Default::default()
        };
        let (avg0, _) = time_average_q2(&tiny, &v0, &v0, &opts0).unwrap();
        assert!(
            avg0.norm() < 1e-13,
            "zero lift expected, got {:.3e}",
            avg0.norm()
        );

        // k <= 2 carries the 1 + 1 = 2 resonance; the plain (flat-window)
        // average converges to the table value with leakage O(1/tau).  The
        // leakage amplitude oscillates in tau, so compare the maxima over a
        // phase window per decade.
        let eig = acoustic_eigensystem(&rho0, 8, 4).unwrap();
        let tables = q2_tables(&eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
        assert!(!tables.terms.is_empty());
        let v = random_real_coords(eig.len(), &mut rng);
        let exact = apply_q2(&tables, &v, &v);
        let err_at = |tau: f64| {
            let opts = OracleOptions {
                tau_max: tau,
                n_samples: (tau * 10.0) as usize,
                window: AverageWindow::Flat,
                ..Default::default()
            };
            let (avg, _) = time_average_q2(&eig, &v, &v, &opts).unwrap();
            avg.sub(&exact).norm()
        };
        let max_err = |tau: f64| {
            [1.0, 1.1, 1.2, 1.3]
                .iter()
                .map(|f| err_at(f * tau))
                .fold(0.0, f64::max)
        };
        let coarse = max_err(100.0);
        let fine = max_err(800.0);
        assert!(
            fine < coarse / 2.5,
            "flat-window leakage did not decay like 1/tau: {coarse:.3e} -> {fine:.3e}"
        );
        assert!(
            fine < 0.05 * (1.0 + exact.norm()),
            "leakage at tau ~ 800 too large: {fine:.3e}"
        );
    }

    #[test]
    fn resonance_set_on_constant_density_matches_integer_relations() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&const_rho0(grid), 8, 10).unwrap(); // k <= 5
        let tables = q2_tables(&eig, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
        // sqrt(kappa) of mode j is the integer wavenumber k_j = j/2 + 1.
        let kint: Vec<i64> = eig.sqrt_kappas.iter().map(|s| s.round() as i64).collect();
        for s in &eig.sqrt_kappas {
            assert!((s - s.round()).abs() < 1e-9);
        }
        for t in &tables.triples {
            let sum = t.signs[0] as i64 * kint[t.j]
                + t.signs[1] as i64 * kint[t.l]
                + t.signs[2] as i64 * kint[t.m];
            assert_eq!(sum, 0, "stored triple is not resonant: {t:?}");
        }
        // and conversely: every integer relation is present
        let m = eig.len();
        let mut count = 0;
        for j in 0..m {
            for l in 0..m {
                for mm in 0..m {
                    for sj in [1i64, -1] {
                        for sl in [1i64, -1] {
                            for sm in [1i64, -1] {
                                if sj * kint[j] + sl * kint[l] + sm * kint[mm] == 0 {
                                    count += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(tables.triples.len(), count);
        assert!(tables.near.is_empty());
    }

    #[test]
    fn tolerance_conflict_rejected() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&const_rho0(grid), 6, 4).unwrap();
        assert!(matches!(
            q2_tables(&eig, 1e-10, DEFAULT_GAP_TOL),
            Err(CoreError::ToleranceConflict(_))
        ));
    }

    #[test]
    fn near_resonances_reported_and_excluded() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&const_rho0(grid), 8, 6).unwrap();
        // Perturb one eigenvalue: sqrt(kappa) = 2 + 5e-4 makes 1 + 1 = 2
        // a near-resonance instead of an exact one.
        let mut perturbed = eig.clone();
        for j in 0..perturbed.len() {
            if (perturbed.sqrt_kappas[j] - 2.0).abs() < 1e-9 {
                let s = 2.0 + 5e-4;
                perturbed.sqrt_kappas[j] = s;
                perturbed.kappas[j] = s * s;
            }
        }
        let tables = q2_tables(&perturbed, DEFAULT_RES_TOL_COEFF, DEFAULT_GAP_TOL).unwrap();
        assert!(
            !tables.near.is_empty(),
            "perturbed spectrum should produce near-resonances"
        );
        for t in &tables.terms {
            // no 1+1=2-type term may survive among exact resonances
            let s = [t.j, t.l, t.m]
                .iter()
                .map(|&i| perturbed.sqrt_kappas[i].round() as i64)
                .collect::<Vec<_>>();
            let touches_two = [t.j, t.l, t.m]
                .iter()
                .any(|&i| (perturbed.sqrt_kappas[i] - (2.0 + 5e-4)).abs() < 1e-9);
            if touches_two && s.iter().filter(|&&v| v == 1).count() == 2 {
                panic!("near-resonant term was not excluded: {t:?}");
            }
        }
    }

    #[test]
    fn filter_state_identities() {
        let grid = TorusGrid::unit(1, 128).unwrap();
        let rho0 = cosine_rho0(grid, 0.3);
        let eig = acoustic_eigensystem(&rho0, 16, 10).unwrap();
        let (eps, alpha) = (0.1, 1.0);

        // Well-prepared data: psi = sqrt(rho0), so J = 0 and phi = 0.
        let psi = TorusField::from_fn_complex(grid, 1, |x, _| {
            Complex64::new((1.0 + 0.3 * x[0].cos()).sqrt(), 0.0)
        });
        let state = crate::gpe::WaveState {
            psi,
            time: 0.0,
            eps,
            alpha,
        };
        let h = crate::hydro::observables(&state, &rho0).unwrap();
        let coords = filter_state(&h, &eig, 1e-11).unwrap();
        assert!(coords.norm() < 1e-9, "well-prepared state must filter to 0");

        // t = 0: filtering is the identity on the expansion.
        let phi0 = TorusField::from_fn_real(grid, 1, |x, _| 0.2 * x[0].cos());
        let s0 = TorusField::from_fn_real(grid, 1, |x, _| 0.1 * x[0].sin());
        let data = crate::gpe::InitialData {
            rho0: &rho0,
            phi0: &phi0,
            s0: &s0,
            winding: [0.0, 0.0],
        };
        let st = crate::gpe::build_initial_state(&data, eps, alpha).unwrap();
        let h0 = crate::hydro::observables(&st, &rho0).unwrap();
        let direct = filter_state(&h0, &eig, 1e-11).unwrap();
        // independent path: project J, divide by sqrt(rho0), expand
        let proj = helmholtz::project(&h0.j, &rho0, 1e-11).unwrap();
        let mut vec_part = proj.gradient_part;
        for p in 0..grid.points() {
            let w = eig.sqrt_rho0.comp(0)[p];
            vec_part.comp_mut(0)[p] /= w;
        }
        let manual = expand(&eig, &h0.phi, &vec_part, 1e-5).unwrap();
        assert!(direct.sub(&manual).norm() < 1e-10);
    }

    #[test]
    fn coords_pairing_matches_grid_integral() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let eig = acoustic_eigensystem(&cosine_rho0(grid, 0.3), 12, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let a = random_real_coords(eig.len(), &mut rng);
        let b = random_real_coords(eig.len(), &mut rng);
        let (pa, ha) = reconstruct(&eig, &a).unwrap();
        let (pb, hb) = reconstruct(&eig, &b).unwrap();
        let grid_pair = pairing(&pa, &pb).unwrap() + pairing(&ha, &hb).unwrap();
        let coord_pair = coords_pairing(&a, &b);
        assert!(
            (grid_pair - coord_pair).norm() < 1e-10 * (1.0 + coord_pair.norm()),
            "pairing mismatch {grid_pair} vs {coord_pair}"
        );
        // norm consistency
        let grid_norm = (l2_norm(&pa).powi(2) + l2_norm(&ha).powi(2)).sqrt();
        assert_relative_eq!(grid_norm, a.norm(), max_relative = 1e-10);
        // mode orthonormality sanity via integral of chi_0^2
        let mut chi2 = TorusField::zeros(grid, 1, Reality::Real);
        for p in 0..grid.points() {
            chi2.comp_mut(0)[p] = eig.modes[0].comp(0)[p] * eig.modes[0].comp(0)[p];
        }
        assert_relative_eq!(integral(&chi2).unwrap().re, 1.0, max_relative = 1e-10);
        let ip = inner_product(&eig.modes[0], &eig.modes[1]).unwrap().norm();
        assert!(ip < 1e-10);
    }
}
