//! Simulation toolkit for disturbance-observer-based safe control of
//! control-affine systems.
//!
//! The crate provides an immersion-and-invariance disturbance observer,
//! an auxiliary low-pass disturbance filter with a known derivative, a
//! CBF-QP safety filter acting on the input rate of an integrator-augmented
//! plant, a tracking controller with a dynamic-surface filter, and a
//! closed-loop experiment runner with CSV/SVG/report outputs.

pub mod filter;
pub mod model;
pub mod numerics;
pub mod observer;
pub mod runner;
pub mod safety;
pub mod scenarios;
pub mod tracking;

/// Scalar type used by the domain modules. The low-level numerics are
/// generic over the scalar; everything above them works in `Real`.
pub type Real = f64;
/// Dense column vector of [`Real`].
pub type Vector = nalgebra::DVector<Real>;
/// Dense matrix of [`Real`].
pub type Matrix = nalgebra::DMatrix<Real>;
