//! Symbolic + numeric toolkit for the canonical analysis of singular
//! higher-order Lagrangians.
//!
//! The pipeline runs in stages:
//!
//! 1. [`model`] — parse and validate a system (coordinates, derivative
//!    order, Lagrangian) from `.hjl` text.
//! 2. [`legendre`] — Ostrogradsky momenta, Hessian in the top derivatives,
//!    generic rank, solved accelerations, primary constraints and the
//!    canonical Hamiltonian.
//! 3. [`hj`] — Hamilton-Jacobi generator set, Poisson brackets, the
//!    integrability closure loop and total differential equations of motion.
//! 4. [`action`] — action differential, reduced phase space, path-integral
//!    exponent and time-sliced propagators for quadratic systems.
//! 5. [`numeric`] — fixed-step integration along parameter curves,
//!    Euler-Lagrange and constraint-drift oracles, order reduction.
//!
//! Everything upstream of [`numeric`] works in exact rational arithmetic;
//! floats only appear when expressions are evaluated at a point.

pub mod action;
pub mod cli;
pub mod expr;
pub mod hj;
pub mod legendre;
pub mod model;
pub mod numeric;
pub mod report;
