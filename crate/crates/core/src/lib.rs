//! Hamiltonian mechanics treated as a field theory on the interval `[0,1]`.
//!
//! Curves `t -> (u(t), p(t))` in `T*Q` are the fields; their endpoint data
//! live in the boundary phase space `T*Q x T*Q`. The crate integrates
//! Hamilton's equations, solves the Dirichlet two-point problem by shooting,
//! evaluates Hamilton's principal function, certifies numerically that the
//! boundary image of the solution space is isotropic/Lagrangian, and runs the
//! pointwise presymplectic constraint algorithm for momentum constraints
//! `p = Sigma(e)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod constraints;
pub mod error;
pub mod examples;
pub mod integrators;
pub mod linalg;
pub mod serde_float;
pub mod system;
pub mod verifier;

pub use error::{Error, Result};
