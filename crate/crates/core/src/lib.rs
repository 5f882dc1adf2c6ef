//! Coupled spin-libration model of a Paul-trapped nanodiamond carrying a
//! single NV center.
//!
//! [`system`] turns geometry, trap and field inputs into libration
//! frequencies, couplings and dispersive shifts. [`su11`] evaluates the
//! closed-form spin-echo interference probability built on the SU(1,1)
//! normal-ordered factorization of the branch propagators.
//!
//! The crate is `no_std` and only needs `alloc` for trace evaluation.

#![no_std]

extern crate alloc;

mod error;
pub mod quad;
pub mod roots;
pub mod su11;
pub mod system;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
