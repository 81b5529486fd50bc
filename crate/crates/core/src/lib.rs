//! Riemannian geometry of the AC power-flow solution manifold.
//!
//! The crate builds the metric tensors and Christoffel symbols of the
//! manifold at an operating point, expands geodesics to second order along
//! power-varying directions, and estimates per-bus collapse voltages from the
//! extremum of that expansion. A predictor-corrector continuation power flow
//! provides the reference nose points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod continuation;
pub mod geometry;
pub mod network;
pub mod powerflow;
pub mod sweep;

pub use network::{parse_case, NetworkModel};
pub use powerflow::{InjectionVector, StateVector};
