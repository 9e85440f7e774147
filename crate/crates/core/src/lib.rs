//! Pseudo-fermion simulation of fermionic impurities coupled to continuum
//! electronic reservoirs.
//!
//! Each reservoir is replaced by a small set of damped ancillary fermionic
//! modes whose parameters may be complex; the augmented system obeys a
//! parity-resolved Lindblad master equation whose reduced dynamics reproduces
//! that of the original continuum model whenever the summed mode correlations
//! match the reservoir correlation function.

pub mod bath;
pub mod config;
pub mod engine;
pub mod error;
pub mod fock;
pub mod observables;
pub mod oracles;
pub mod output;
pub mod pf;
pub mod sparse;
pub mod util;
pub mod workflows;

pub use error::{PfError, Result};
