//! Numerics for Tonelli Hamiltonians on tori and Sol 3-manifolds.
//!
//! The crate provides the building blocks for four kinds of experiments:
//!
//! * symplectic integration of Hamiltonian flows with first-integral
//!   monitoring ([`flow`]),
//! * min-max estimation of the strict critical value `c0(H) = inf_theta
//!   max_x H(x, theta_x)` over closed 1-forms, together with lower bounds
//!   from zero-homology orbit measures ([`critical`]),
//! * construction and verification of stabilizing 1-forms
//!   `lambda = f(p_t) pi*alpha + g(p_t) dt` for suspended level sets, the
//!   blending family used to deform level functions, and the convexifying
//!   reparametrization `h` ([`stability`]),
//! * closed-orbit search and homology integrals on the Sol manifold
//!   ([`geometry`], [`flow`]).
//!
//! Everything is `no_std + alloc`; IO, file formats and the CLI live in the
//! companion `mane-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod critical;
pub mod fft;
pub mod flow;
pub mod forms;
pub mod geometry;
pub mod hamiltonian;
pub mod linalg;
pub mod math;
pub mod quad;
pub mod rng;
pub mod spline;
pub mod stability;

pub use geometry::{Chart, ChartPoint, PhasePoint, SolLattice, TorusChart};
pub use hamiltonian::TonelliHamiltonian;
