//! Lindstedt series and tree expansion for small-amplitude periodic solutions of
//! the beam equation `v_tt + v_xxxx + mu v = a v^2 + b v_t^2` with Dirichlet
//! boundary conditions on `[0, pi]`.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectrum`]: frequencies, divisors, propagators and the dyadic partition of unity.
//! * [`kernel`]: the sine-triple interaction kernel and its quadrature oracle.
//! * [`series`]: the order-by-order recursion, amplitude equation, counterterm
//!   fixed point and PDE residual.
//! * [`trees`]: tree expansion, clusters, resonances, counterterms and
//!   renormalized sums.
//! * [`bruno`]: scale assignments and the scale-counting inequalities.
//! * [`diophantine`]: non-resonance conditions and measure estimates.

pub mod bruno;
pub mod diophantine;
pub mod error;
pub mod io;
pub mod kernel;
pub mod params;
pub mod sampling;
pub mod series;
pub mod spectrum;
pub mod trees;

pub use error::{Error, Result};
pub use params::{Detuning, ModelParams};
pub use spectrum::{Frame, Mode, NuTable};
