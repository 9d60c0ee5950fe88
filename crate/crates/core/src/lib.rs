//! Ground states, blowup dynamics and instability diagnostics for the
//! radial nonlinear Schrodinger equation with a harmonic trap,
//!
//! ```text
//!   i u_t = -Delta u + |x|^2 u - |u|^(p-1) u ,   x in R^N .
//! ```

// Negated comparisons are deliberate: they reject NaN along with the
// out-of-range values. Banded kernels index several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod dynamics;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod groundstate;
pub mod verify;

pub use error::{Error, Result};
pub use functionals::{
    normalize_to_constraints, report, scale, scaled_energy_profile, FunctionalReport, Norms,
};
pub use grid::{
    make_field_from, make_grid, make_params, radial_derivative, Field, Params, RadialGrid,
};
