//! Numerical laboratory for the scaled Gross-Pitaevskii equation on the
//! periodic torus (1D/2D) and its anelastic singular limit.
//!
//! The crate is organized bottom-up:
//! - [`grid`]: pseudo-spectral substrate (transforms, derivatives, quadrature);
//! - [`helmholtz`]: density-weighted Helmholtz decomposition;
//! - [`gpe`]: Strang-splitting integrator for the scaled equation;
//! - [`hydro`]: hydrodynamic observables and weak conservation residuals;
//! - [`fastwave`]: spectral theory of the acoustic operator, wave group,
//!   oscillation-averaged forms and resonances;
//! - [`limits`]: anelastic system and the oscillating coefficient ODE;
//! - [`modenergy`]: modulated energy functional and convergence diagnostics;
//! - [`scenario`]: scenario configs, sweep orchestration, CSV artifacts.

pub mod config;
pub mod error;
pub mod fastwave;
pub mod fieldio;
pub mod gpe;
pub mod grid;
pub mod helmholtz;
pub mod hydro;
pub mod limits;
pub mod modenergy;
pub mod scenario;

pub use error::{CoreError, Result};
pub use gpe::WaveState;
pub use grid::{Reality, Spectral, TorusField, TorusGrid};
pub use num_complex::Complex64;
