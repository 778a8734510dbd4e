//! Lyapunov exponents, Oseledets filtrations and semi-invertible Oseledets
//! splittings for cocycles of linear operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`grassmann`]: subspace geometry (projections, local norms, gap metric).
//! * [`cocycle`]: matrix cocycles over a two-sided shift, Lyapunov spectra,
//!   filtrations, splittings and the associated diagnostics.
//! * [`interval`]: Perron-Frobenius operators of random piecewise expanding
//!   interval maps acting on bounded-variation functions.
//! * [`sft`]: weighted transfer operators on one-sided subshifts of finite
//!   type acting on Lipschitz functions.

pub mod cocycle;
pub mod grassmann;
pub mod interval;
pub mod sft;

pub use nalgebra::{DMatrix, DVector};
