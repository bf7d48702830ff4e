//! Uniform periodic grids on the torus and pseudo-spectral field algebra.
//!
//! Fields live on `[0, period)^dim` (dim = 1 or 2) sampled on a uniform grid
//! with a power-of-two number of points per dimension.  Samples are stored as
//! complex numbers; fields that are mathematically real carry a reality flag
//! and are re-symmetrized (imaginary parts dropped) after every round trip
//! through spectral space.
//!
//! Conventions:
//! - forward transform produces coefficients `c_k` with
//!   `f(x) = sum_k c_k exp(i k . x)`, `k = 2 pi m / period`, integer
//!   `m in [-n/2, n/2)`;
//! - quadrature is the rectangle rule, which is exact for band-limited
//!   integrands (discrete Parseval);
//! - derivative multipliers zero the Nyquist mode on the axes involved, so
//!   discrete identities such as `div(grad f) = laplacian f` hold exactly;
//! - the inner product conjugates its second argument.

use crate::error::{CoreError, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

/// Whether a field is mathematically real-valued or genuinely complex.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Reality {
    Real,
    Complex,
}

/// Uniform periodic grid: `dim` in {1, 2}, `n` points per dimension
/// (power of two, at least 8), common period per dimension.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    period: f64,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, period: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(CoreError::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if !n.is_power_of_two() || n < 8 {
            return Err(CoreError::InvalidGrid(format!(
                "points per dimension must be a power of two >= 8, got {n}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(CoreError::InvalidGrid(format!("invalid period {period}")));
        }
        Ok(TorusGrid { dim, n, period })
    }

    /// Grid with the default period `2 pi` (integer wavenumbers).
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        TorusGrid::new(dim, n, TAU)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Total number of sample points.
    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.n as f64
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Largest representable integer mode magnitude (Nyquist).
    pub fn nyquist(&self) -> usize {
        self.n / 2
    }

    /// Integer mode for a sample index along one axis, in `[-n/2, n/2)`.
    pub fn mode(&self, i: usize) -> i64 {
        debug_assert!(i < self.n);
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Physical wavenumber for an integer mode.
    pub fn wavenumber(&self, m: i64) -> f64 {
        TAU * m as f64 / self.period
    }

    /// Decompose a flat index into per-axis indices (x fastest).
    pub fn multi(&self, flat: usize) -> [usize; 2] {
        debug_assert!(flat < self.points());
        match self.dim {
            1 => [flat, 0],
            _ => [flat % self.n, flat / self.n],
        }
    }

    /// Coordinates of a flat sample index.
    pub fn coords(&self, flat: usize) -> [f64; 2] {
        let idx = self.multi(flat);
        let h = self.spacing();
        [idx[0] as f64 * h, idx[1] as f64 * h]
    }

    /// Integer mode vector of a flat coefficient index.
    pub fn mode_vec(&self, flat: usize) -> [i64; 2] {
        let idx = self.multi(flat);
        match self.dim {
            1 => [self.mode(idx[0]), 0],
            _ => [self.mode(idx[0]), self.mode(idx[1])],
        }
    }

    /// Physical wavenumber vector of a flat coefficient index.
    pub fn k_vec(&self, flat: usize) -> [f64; 2] {
        let m = self.mode_vec(flat);
        [self.wavenumber(m[0]), self.wavenumber(m[1])]
    }

    /// 2/3-rule cutoff: coefficients with any `|m_axis|` above this are
    /// dropped when forming products.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    /// Wavenumber vector with the Nyquist mode zeroed per axis — the
    /// convention every derivative operator in this crate uses, so
    /// multiplier-based operators built from it compose consistently with
    /// [`derivative`], [`divergence`] and [`laplacian`].
    pub fn k_vec_deriv(&self, flat: usize) -> [f64; 2] {
        let m = self.mode_vec(flat);
        let half = self.n as i64 / 2;
        let f = |mm: i64| {
            if mm == -half {
                0.0
            } else {
                self.wavenumber(mm)
            }
        };
        [f(m[0]), f(m[1])]
    }
}

/// Field sampled on a [`TorusGrid`]: `components` planes of complex samples,
/// stored component-major.
#[derive(Clone, Debug)]
pub struct TorusField {
    grid: TorusGrid,
    components: usize,
    reality: Reality,
    data: Vec<Complex64>,
}

impl TorusField {
    pub fn zeros(grid: TorusGrid, components: usize, reality: Reality) -> Self {
        TorusField {
            grid,
            components,
            reality,
            data: vec![Complex64::new(0.0, 0.0); components * grid.points()],
        }
    }

    pub fn from_fn_real(
        grid: TorusGrid,
        components: usize,
        mut f: impl FnMut(&[f64; 2], usize) -> f64,
    ) -> Self {
        let mut field = TorusField::zeros(grid, components, Reality::Real);
        for c in 0..components {
            for p in 0..grid.points() {
                let x = grid.coords(p);
                field.comp_mut(c)[p] = Complex64::new(f(&x, c), 0.0);
            }
        }
        field
    }

    pub fn from_fn_complex(
        grid: TorusGrid,
        components: usize,
        mut f: impl FnMut(&[f64; 2], usize) -> Complex64,
    ) -> Self {
        let mut field = TorusField::zeros(grid, components, Reality::Complex);
        for c in 0..components {
            for p in 0..grid.points() {
                let x = grid.coords(p);
                field.comp_mut(c)[p] = f(&x, c);
            }
        }
        field
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn reality(&self) -> Reality {
        self.reality
    }

    pub fn set_reality(&mut self, r: Reality) {
        self.reality = r;
    }

    pub fn comp(&self, c: usize) -> &[Complex64] {
        let n = self.grid.points();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.points();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Extract one component as a scalar field.
    pub fn component_field(&self, c: usize) -> TorusField {
        TorusField {
            grid: self.grid,
            components: 1,
            reality: self.reality,
            data: self.comp(c).to_vec(),
        }
    }

    /// Stack scalar fields into one multi-component field.
    pub fn stack(parts: &[&TorusField]) -> Result<TorusField> {
        let first = parts
            .first()
            .ok_or_else(|| CoreError::InvalidParameter("stack of zero fields".into()))?;
        let mut reality = Reality::Real;
        let mut data = Vec::with_capacity(parts.len() * first.grid.points());
        for part in parts {
            same_grid(first, part)?;
            if part.components != 1 {
                return Err(CoreError::ComponentMismatch {
                    expected: 1,
                    got: part.components,
                });
            }
            if part.reality == Reality::Complex {
                reality = Reality::Complex;
            }
            data.extend_from_slice(part.comp(0));
        }
        Ok(TorusField {
            grid: first.grid,
            components: parts.len(),
            reality,
            data,
        })
    }

    /// Largest imaginary magnitude over all samples (diagnostic for fields
    /// flagged real).
    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    /// Drop imaginary parts (used after inverse transforms of real fields).
    pub fn symmetrize_real(&mut self) {
        for z in &mut self.data {
            z.im = 0.0;
        }
        self.reality = Reality::Real;
    }

    pub fn scale(&mut self, s: Complex64) {
        for z in &mut self.data {
            *z *= s;
        }
        if self.reality == Reality::Real && s.im != 0.0 {
            self.reality = Reality::Complex;
        }
    }

    pub fn scaled(&self, s: f64) -> TorusField {
        let mut out = self.clone();
        for z in &mut out.data {
            *z *= s;
        }
        out
    }

    pub fn add_assign(&mut self, other: &TorusField) -> Result<()> {
        same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        if other.reality == Reality::Complex {
            self.reality = Reality::Complex;
        }
        Ok(())
    }

    pub fn axpy(&mut self, a: f64, other: &TorusField) -> Result<()> {
        same_shape(self, other)?;
        for (x, y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * y;
        }
        if other.reality == Reality::Complex {
            self.reality = Reality::Complex;
        }
        Ok(())
    }

    pub fn sub(&self, other: &TorusField) -> Result<TorusField> {
        same_shape(self, other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        if other.reality == Reality::Complex {
            out.reality = Reality::Complex;
        }
        Ok(out)
    }

    pub fn add(&self, other: &TorusField) -> Result<TorusField> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    /// Pointwise inf-norm over the Euclidean magnitude across components.
    pub fn max_abs(&self) -> f64 {
        let npts = self.grid.points();
        let mut best = 0.0f64;
        for p in 0..npts {
            let mut s = 0.0;
            for c in 0..self.components {
                s += self.comp(c)[p].norm_sqr();
            }
            best = best.max(s);
        }
        best.sqrt()
    }
}

/// Spectral coefficients of a field, same layout as [`TorusField`].
#[derive(Clone, Debug)]
pub struct Spectral {
    grid: TorusGrid,
    components: usize,
    data: Vec<Complex64>,
}

impl Spectral {
    pub fn zeros(grid: TorusGrid, components: usize) -> Self {
        Spectral {
            grid,
            components,
            data: vec![Complex64::new(0.0, 0.0); components * grid.points()],
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn comp(&self, c: usize) -> &[Complex64] {
        let n = self.grid.points();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.points();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Multiply every coefficient by `f(k_vec, mode_vec)`.
    pub fn apply_multiplier(&mut self, mut f: impl FnMut(&[f64; 2], &[i64; 2]) -> Complex64) {
        let npts = self.grid.points();
        // Precompute the multiplier once, reuse across components.
        let mut mult = Vec::with_capacity(npts);
        for p in 0..npts {
            let k = self.grid.k_vec(p);
            let m = self.grid.mode_vec(p);
            mult.push(f(&k, &m));
        }
        for c in 0..self.components {
            for (z, m) in self.comp_mut(c).iter_mut().zip(mult.iter()) {
                *z *= m;
            }
        }
    }

    /// Zero every coefficient with `|m_axis| > cutoff` on any axis.
    pub fn truncate_above(&mut self, cutoff: i64) {
        let npts = self.grid.points();
        let dim = self.grid.dim();
        for c in 0..self.components {
            let (grid, comp) = (self.grid, self.comp_mut(c));
            for (p, z) in comp.iter_mut().enumerate().take(npts) {
                let m = grid.mode_vec(p);
                if m[..dim].iter().any(|mm| mm.abs() > cutoff) {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Sum of squared coefficient magnitudes times volume (discrete Parseval
    /// value of the squared L2 norm).
    pub fn l2_norm_sq(&self) -> f64 {
        self.grid.volume() * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, forward: bool) -> Arc<dyn rustfft::Fft<f64>> {
    PLANNER.with(|pl| {
        let mut pl = pl.borrow_mut();
        if forward {
            pl.plan_fft_forward(n)
        } else {
            pl.plan_fft_inverse(n)
        }
    })
}

/// In-place FFT along one axis of every component.
fn axis_fft(
    data: &mut [Complex64],
    grid: TorusGrid,
    components: usize,
    axis: usize,
    forward: bool,
) {
    let n = grid.n();
    let npts = grid.points();
    let fft = plan(n, forward);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for c in 0..components {
        let comp = &mut data[c * npts..(c + 1) * npts];
        match (grid.dim(), axis) {
            (1, 0) => fft.process_with_scratch(comp, &mut scratch),
            (2, 0) => {
                for row in comp.chunks_exact_mut(n) {
                    fft.process_with_scratch(row, &mut scratch);
                }
            }
            (2, 1) => {
                let mut col = vec![Complex64::new(0.0, 0.0); n];
                for ix in 0..n {
                    for iy in 0..n {
                        col[iy] = comp[iy * n + ix];
                    }
                    fft.process_with_scratch(&mut col, &mut scratch);
                    for iy in 0..n {
                        comp[iy * n + ix] = col[iy];
                    }
                }
            }
            _ => unreachable!("axis out of range"),
        }
    }
}

/// Forward transform: samples to coefficients (normalized by 1/points).
pub fn forward(field: &TorusField) -> Spectral {
    let grid = field.grid();
    let mut out = Spectral {
        grid,
        components: field.components(),
        data: field.data().to_vec(),
    };
    for axis in 0..grid.dim() {
        axis_fft(&mut out.data, grid, out.components, axis, true);
    }
    let scale = 1.0 / grid.points() as f64;
    for z in &mut out.data {
        *z *= scale;
    }
    out
}

/// Inverse transform: coefficients to samples.  Fields flagged `Real` are
/// symmetrized (imaginary parts dropped) after the transform.
pub fn inverse(spec: &Spectral, reality: Reality) -> TorusField {
    let grid = spec.grid();
    let mut field = TorusField {
        grid,
        components: spec.components(),
        reality: Reality::Complex,
        data: spec.data.clone(),
    };
    for axis in 0..grid.dim() {
        axis_fft(&mut field.data, grid, field.components, axis, false);
    }
    if reality == Reality::Real {
        debug_assert!(
            field.max_imag() <= 1e-10 * (1.0 + field.max_abs()),
            "field flagged real has large imaginary part {:.3e}",
            field.max_imag()
        );
        field.symmetrize_real();
    }
    field
}

fn expect_components(field: &TorusField, expected: usize) -> Result<()> {
    if field.components() != expected {
        return Err(CoreError::ComponentMismatch {
            expected,
            got: field.components(),
        });
    }
    Ok(())
}

pub fn same_grid(a: &TorusField, b: &TorusField) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{:?}", a.grid()),
            got: format!("{:?}", b.grid()),
        });
    }
    Ok(())
}

pub fn same_shape(a: &TorusField, b: &TorusField) -> Result<()> {
    same_grid(a, b)?;
    if a.components() != b.components() {
        return Err(CoreError::ComponentMismatch {
            expected: a.components(),
            got: b.components(),
        });
    }
    Ok(())
}

/// Derivative along `axis` of every component (Nyquist mode zeroed).
pub fn derivative(field: &TorusField, axis: usize) -> TorusField {
    let grid = field.grid();
    let half = grid.n() as i64 / 2;
    let mut spec = forward(field);
    spec.apply_multiplier(|k, m| {
        if m[axis] == -half {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, k[axis])
        }
    });
    inverse(&spec, field.reality())
}

/// Gradient of a scalar field: `dim` components.
pub fn gradient(field: &TorusField) -> Result<TorusField> {
    expect_components(field, 1)?;
    let grid = field.grid();
    let parts: Vec<TorusField> = (0..grid.dim()).map(|a| derivative(field, a)).collect();
    let refs: Vec<&TorusField> = parts.iter().collect();
    TorusField::stack(&refs)
}

/// Divergence of a vector field (`dim` components in, scalar out).
pub fn divergence(field: &TorusField) -> Result<TorusField> {
    let dim = field.grid().dim();
    expect_components(field, dim)?;
    let mut out = derivative(&field.component_field(0), 0);
    for axis in 1..dim {
        let d = derivative(&field.component_field(axis), axis);
        out.add_assign(&d)?;
    }
    Ok(out)
}

/// Componentwise Laplacian (sum of second derivatives, Nyquist zeroed, so
/// that `laplacian = divergence . gradient` holds exactly on scalars).
pub fn laplacian(field: &TorusField) -> Result<TorusField> {
    let grid = field.grid();
    let half = grid.n() as i64 / 2;
    let dim = grid.dim();
    let mut spec = forward(field);
    spec.apply_multiplier(|k, m| {
        let mut s = 0.0;
        for a in 0..dim {
            if m[a] != -half {
                s -= k[a] * k[a];
            }
        }
        Complex64::new(s, 0.0)
    });
    Ok(inverse(&spec, field.reality()))
}

/// Hessian of a scalar field: `dim*dim` components, row-major
/// (`r*dim + c` holds `d_r d_c f`).
pub fn hessian(field: &TorusField) -> Result<TorusField> {
    expect_components(field, 1)?;
    let dim = field.grid().dim();
    let mut parts = Vec::with_capacity(dim * dim);
    let grads: Vec<TorusField> = (0..dim).map(|a| derivative(field, a)).collect();
    for g in grads.iter() {
        for c in 0..dim {
            parts.push(derivative(g, c));
        }
    }
    let refs: Vec<&TorusField> = parts.iter().collect();
    TorusField::stack(&refs)
}

/// Row-wise divergence of a tensor field (`dim*dim` components in,
/// `dim` out): `out_r = sum_c d_c T[r,c]`.
pub fn tensor_divergence(field: &TorusField) -> Result<TorusField> {
    let dim = field.grid().dim();
    expect_components(field, dim * dim)?;
    let mut rows = Vec::with_capacity(dim);
    for r in 0..dim {
        let mut acc = derivative(&field.component_field(r * dim), 0);
        for c in 1..dim {
            let d = derivative(&field.component_field(r * dim + c), c);
            acc.add_assign(&d)?;
        }
        rows.push(acc);
    }
    let refs: Vec<&TorusField> = rows.iter().collect();
    TorusField::stack(&refs)
}

/// 2/3-rule truncation of a field (round trip through spectral space).
pub fn dealias(field: &TorusField) -> TorusField {
    let mut spec = forward(field);
    spec.truncate_above(field.grid().dealias_cutoff());
    inverse(&spec, field.reality())
}

/// Pointwise product of a scalar field with every component of `f`.
pub fn mul_scalar(s: &TorusField, f: &TorusField) -> Result<TorusField> {
    same_grid(s, f)?;
    expect_components(s, 1)?;
    let mut out = f.clone();
    let sc = s.comp(0).to_vec();
    for c in 0..out.components() {
        for (z, w) in out.comp_mut(c).iter_mut().zip(sc.iter()) {
            *z *= w;
        }
    }
    if s.reality() == Reality::Complex {
        out.reality = Reality::Complex;
    }
    Ok(out)
}

/// Pointwise Euclidean dot product of two equal-shape vector fields.
pub fn dot(a: &TorusField, b: &TorusField) -> Result<TorusField> {
    same_shape(a, b)?;
    let grid = a.grid();
    let mut out = TorusField::zeros(grid, 1, a.reality());
    if b.reality() == Reality::Complex {
        out.reality = Reality::Complex;
    }
    for c in 0..a.components() {
        let (ac, bc) = (a.comp(c), b.comp(c));
        for (p, z) in out.comp_mut(0).iter_mut().enumerate() {
            *z += ac[p] * bc[p];
        }
    }
    Ok(out)
}

/// Outer product of two vector fields: `T[r,c] = u_r w_c` (row-major).
pub fn outer(u: &TorusField, w: &TorusField) -> Result<TorusField> {
    same_shape(u, w)?;
    let dim = u.grid().dim();
    expect_components(u, dim)?;
    let mut out = TorusField::zeros(u.grid(), dim * dim, u.reality());
    if w.reality() == Reality::Complex {
        out.reality = Reality::Complex;
    }
    for r in 0..dim {
        for c in 0..dim {
            let (ur, wc) = (u.comp(r), w.comp(c));
            for (p, z) in out.comp_mut(r * dim + c).iter_mut().enumerate() {
                *z = ur[p] * wc[p];
            }
        }
    }
    Ok(out)
}

/// Integral of a scalar field over the torus (rectangle rule).
pub fn integral(field: &TorusField) -> Result<Complex64> {
    expect_components(field, 1)?;
    let sum: Complex64 = field.comp(0).iter().sum();
    Ok(sum * field.grid().cell_volume())
}

/// Inner product `<f, g> = integral of f conj(g)`, summed over components.
pub fn inner_product(f: &TorusField, g: &TorusField) -> Result<Complex64> {
    same_shape(f, g)?;
    let mut sum = Complex64::new(0.0, 0.0);
    for (a, b) in f.data().iter().zip(g.data().iter()) {
        sum += a * b.conj();
    }
    Ok(sum * f.grid().cell_volume())
}

/// Real bilinear pairing `integral of f . g` (no conjugation).
pub fn pairing(f: &TorusField, g: &TorusField) -> Result<Complex64> {
    same_shape(f, g)?;
    let mut sum = Complex64::new(0.0, 0.0);
    for (a, b) in f.data().iter().zip(g.data().iter()) {
        sum += a * b;
    }
    Ok(sum * f.grid().cell_volume())
}

/// Validate a background density: scalar, real, strictly positive.
pub fn check_density(rho0: &TorusField) -> Result<()> {
    expect_components(rho0, 1)?;
    let mut min = f64::INFINITY;
    for z in rho0.comp(0) {
        min = min.min(z.re);
    }
    if !(min > 0.0) {
        return Err(CoreError::NonPositiveDensity { min });
    }
    Ok(())
}

/// Weighted inner product `<f, g>_sigma = integral of f conj(g) / rho0`.
pub fn weighted_inner_product(
    f: &TorusField,
    g: &TorusField,
    rho0: &TorusField,
) -> Result<Complex64> {
    same_shape(f, g)?;
    same_grid(f, rho0)?;
    check_density(rho0)?;
    let npts = f.grid().points();
    let mut sum = Complex64::new(0.0, 0.0);
    for c in 0..f.components() {
        let (fc, gc) = (f.comp(c), g.comp(c));
        let r = rho0.comp(0);
        for p in 0..npts {
            sum += fc[p] * gc[p].conj() / r[p].re;
        }
    }
    Ok(sum * f.grid().cell_volume())
}

/// L2 norm over all components.
pub fn l2_norm(f: &TorusField) -> f64 {
    let s: f64 = f.data().iter().map(|z| z.norm_sqr()).sum();
    (s * f.grid().cell_volume()).sqrt()
}

/// Weighted L2 norm `sqrt(<f, f>_sigma)`.
pub fn weighted_l2_norm(f: &TorusField, rho0: &TorusField) -> Result<f64> {
    let v = weighted_inner_product(f, f, rho0)?;
    Ok(v.re.max(0.0).sqrt())
}

/// Lp norm of the pointwise Euclidean magnitude across components.
pub fn lp_norm(f: &TorusField, p: f64) -> f64 {
    let npts = f.grid().points();
    let mut sum = 0.0;
    for pt in 0..npts {
        let mut mag2 = 0.0;
        for c in 0..f.components() {
            mag2 += f.comp(c)[pt].norm_sqr();
        }
        sum += mag2.sqrt().powf(p);
    }
    (sum * f.grid().cell_volume()).powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: TorusGrid, components: usize, rng: &mut ChaCha8Rng) -> TorusField {
        let mut f = TorusField::zeros(grid, components, Reality::Complex);
        for z in f.data_mut() {
            *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        f
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(3, 16, TAU).is_err());
        assert!(TorusGrid::new(1, 12, TAU).is_err());
        assert!(TorusGrid::new(1, 4, TAU).is_err());
        assert!(TorusGrid::new(2, 16, -1.0).is_err());
        assert!(TorusGrid::new(2, 16, TAU).is_ok());
    }

    #[test]
    fn roundtrip_and_parseval_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1usize, 2] {
            let grid = TorusGrid::unit(dim, 32).unwrap();
            for _ in 0..50 {
                let f = random_field(grid, 1, &mut rng);
                let spec = forward(&f);
                let back = inverse(&spec, Reality::Complex);
                let diff: f64 = f
                    .data()
                    .iter()
                    .zip(back.data().iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(diff < 1e-12, "round trip error {diff}");
                // Parseval: integral |f|^2 == vol * sum |c_k|^2.
                let phys = l2_norm(&f).powi(2);
                let spect = spec.l2_norm_sq();
                assert_relative_eq!(phys, spect, max_relative = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn parseval_proptest(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TorusGrid::unit(1, 16).unwrap();
            let f = random_field(grid, 1, &mut rng);
            let spec = forward(&f);
            let phys = l2_norm(&f).powi(2);
            prop_assert!((phys - spec.l2_norm_sq()).abs() <= 1e-11 * (1.0 + phys));
        }
    }

    #[test]
    fn derivative_exact_on_trig_polynomials() {
        let grid = TorusGrid::unit(1, 32).unwrap();
        let f = TorusField::from_fn_real(grid, 1, |x, _| {
            (3.0 * x[0]).sin() + 0.5 * (5.0 * x[0]).cos()
        });
        let df = derivative(&f, 0);
        let exact = TorusField::from_fn_real(grid, 1, |x, _| {
            3.0 * (3.0 * x[0]).cos() - 2.5 * (5.0 * x[0]).sin()
        });
        let err = l2_norm(&df.sub(&exact).unwrap());
        assert!(err < 1e-12, "derivative error {err}");

        let grid2 = TorusGrid::unit(2, 16).unwrap();
        let g = TorusField::from_fn_real(grid2, 1, |x, _| (2.0 * x[0] + x[1]).sin());
        let gy = derivative(&g, 1);
        let exact_y = TorusField::from_fn_real(grid2, 1, |x, _| (2.0 * x[0] + x[1]).cos());
        assert!(l2_norm(&gy.sub(&exact_y).unwrap()) < 1e-12);
    }

    #[test]
    fn laplacian_consistent_with_div_grad() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(grid, 1, &mut rng);
        let lap = laplacian(&f).unwrap();
        let dg = divergence(&gradient(&f).unwrap()).unwrap();
        let err = l2_norm(&lap.sub(&dg).unwrap());
        assert!(err < 1e-10, "laplacian vs div grad: {err}");
    }

    #[test]
    fn hessian_matches_second_derivative() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let f = TorusField::from_fn_real(grid, 1, |x, _| (x[0] + 2.0 * x[1]).cos());
        let h = hessian(&f).unwrap();
        // d_x d_y of cos(x + 2y) = -2 cos(x + 2y)... second mixed derivative:
        // d_x d_y cos(x+2y) = -(1)(2) cos(x+2y)
        let exact = TorusField::from_fn_real(grid, 1, |x, _| -2.0 * (x[0] + 2.0 * x[1]).cos());
        let err = l2_norm(&h.component_field(1).sub(&exact).unwrap());
        assert!(err < 1e-12, "hessian error {err}");
    }

    #[test]
    fn reality_preserved_through_roundtrip() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let f = TorusField::from_fn_real(grid, 1, |x, _| (x[0]).cos() * (2.0 * x[1]).sin() + 0.3);
        let spec = forward(&f);
        let back = inverse(&spec, Reality::Real);
        assert_eq!(back.reality(), Reality::Real);
        assert_eq!(back.max_imag(), 0.0);
        let err = l2_norm(&f.sub(&back).unwrap());
        assert!(err < 1e-12);
    }

    #[test]
    fn dealiased_product_is_exact_galerkin() {
        // For band-limited factors inside the 2/3 zone the plain product
        // aliases; the dealiased product must agree with the analytic
        // truncation of the true product.
        let grid = TorusGrid::unit(1, 32).unwrap();
        // modes 9 and 10: product has modes 19 and 1; cutoff is 10.
        let a = TorusField::from_fn_real(grid, 1, |x, _| (9.0 * x[0]).cos());
        let b = TorusField::from_fn_real(grid, 1, |x, _| (10.0 * x[0]).cos());
        let ad = dealias(&a);
        let bd = dealias(&b);
        let prod = dealias(&mul_scalar(&ad, &bd).unwrap());
        // cos9 cos10 = (cos19 + cos1)/2 -> truncated to cos1/2.
        let exact = TorusField::from_fn_real(grid, 1, |x, _| 0.5 * (x[0]).cos());
        let err = l2_norm(&prod.sub(&exact).unwrap());
        assert!(err < 1e-13, "dealiased product error {err}");
    }

    #[test]
    fn quadrature_and_norms() {
        let grid = TorusGrid::unit(1, 64).unwrap();
        let f = TorusField::from_fn_real(grid, 1, |x, _| 1.0 + 0.5 * (x[0]).cos());
        let int = integral(&f).unwrap();
        assert_relative_eq!(int.re, TAU, max_relative = 1e-13);
        // L2 norm of 1 + 0.5 cos x: sqrt(2 pi (1 + 0.125)).
        assert_relative_eq!(l2_norm(&f), (TAU * 1.125).sqrt(), max_relative = 1e-13);
        // L4 norm of cos: (integral cos^4 = 3/4 pi) -> (3 pi / 4)^(1/4).
        let c = TorusField::from_fn_real(grid, 1, |x, _| (x[0]).cos());
        assert_relative_eq!(
            lp_norm(&c, 4.0),
            (0.75 * std::f64::consts::PI).powf(0.25),
            max_relative = 1e-12
        );
    }

    #[test]
    fn weighted_inner_product_rejects_nonpositive_density() {
        let grid = TorusGrid::unit(1, 16).unwrap();
        let f = TorusField::from_fn_real(grid, 1, |x, _| (x[0]).sin());
        let bad = TorusField::from_fn_real(grid, 1, |x, _| (x[0]).cos());
        assert!(matches!(
            weighted_inner_product(&f, &f, &bad),
            Err(CoreError::NonPositiveDensity { .. })
        ));
        let good = TorusField::from_fn_real(grid, 1, |_, _| 2.0);
        let v = weighted_inner_product(&f, &f, &good).unwrap();
        assert_relative_eq!(v.re, l2_norm(&f).powi(2) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn component_mismatch_rejected() {
        let grid = TorusGrid::unit(2, 16).unwrap();
        let scalar = TorusField::zeros(grid, 1, Reality::Real);
        let vector = TorusField::zeros(grid, 2, Reality::Real);
        assert!(matches!(
            gradient(&vector),
            Err(CoreError::ComponentMismatch { .. })
        ));
        assert!(matches!(
            divergence(&scalar),
            Err(CoreError::ComponentMismatch { .. })
        ));
        assert!(matches!(
            tensor_divergence(&vector),
            Err(CoreError::ComponentMismatch { .. })
        ));
    }

    #[test]
    fn integration_by_parts_is_exact() {
        // <div F, g> = -<F, grad g> exactly in the discrete algebra.
        let grid = TorusGrid::unit(2, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_field(grid, 2, &mut rng);
        let g = random_field(grid, 1, &mut rng);
        let lhs = inner_product(&divergence(&f).unwrap(), &g).unwrap();
        let rhs = inner_product(&f, &gradient(&g).unwrap()).unwrap();
        assert!((lhs + rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
    }
}
