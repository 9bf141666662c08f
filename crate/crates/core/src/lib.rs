//! Forward simulation and coefficient identification for a two-dimensional
//! time-fractional diffusion equation with a spatially varying reaction term.
//!
//! The crate has two halves. The forward half discretizes
//!
//! ```text
//! ∂ₜᵅ u − Δu + q(x)·u = 0   on (0,1)², zero initial state,
//! u = λ(t)·g(x)             on the boundary,
//! ```
//!
//! with a lowest-order mixed finite element method in space ([`mesh`],
//! [`forward`]) and a first-order fractional-derivative quadrature in time
//! ([`caputo`]), producing boundary flux measurements. The inverse half
//! recovers the cellwise reaction coefficient `q` from such measurements:
//! [`param`] maps low-dimensional parameter vectors to coefficient fields,
//! [`regpen`] provides quadratic and bounded-variation penalties, [`synth`]
//! generates reproducible noisy data, and [`invert`] runs the damped
//! Gauss–Newton iteration. [`driver`] orchestrates named experiments and
//! parameter sweeps for the command-line binary.

pub mod band;
pub mod caputo;
pub mod error;
pub mod forward;
pub mod invert;
pub mod mesh;
pub mod param;
pub mod regpen;
pub mod synth;

pub use error::{Error, Result};
