//! Exact construction of the Burnside process K on words and its dual Q on
//! group elements, for the value-permutation and coordinate-permutation
//! actions of symmetric groups, with closed forms, spectra, mixing analysis,
//! lumping and stochastic simulation.

pub mod actions;
pub mod closedforms;
pub mod combinat;
pub mod dynamics;
pub mod kernels;
pub mod matrix;
pub mod modp;
pub mod permgroup;
pub mod sampler;
pub mod spectra;

pub use num_bigint::{BigInt, BigUint};
pub use num_rational::BigRational;
