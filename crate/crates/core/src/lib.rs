//! Symbolic per-element energies compiled into derivative kernels, blocked
//! sparse assembly over coupled dof sets, and Newton-based backward Euler
//! time stepping.
//!
//! The crate is `no_std` + `alloc`. The `std` feature is only needed for
//! the `parallel` feature, which evaluates elements and scatters Hessian rows
//! on the rayon thread pool.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod assembly;
pub mod bind;
pub mod diff;
pub mod energy;
pub mod error;
pub mod expr;
pub mod kernel;
mod par;
pub mod solver;

pub use error::{Error, Result};
