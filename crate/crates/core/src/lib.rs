//! Numerical controllability toolkit for control systems on R^n, flat tori
//! and the 2-sphere.
//!
//! The crate decides and demonstrates controllability properties of finite
//! generator families of vector fields: the Lie algebra rank condition via
//! iterated brackets, full-rank chronological products and their
//! differentials, reachable-set sampling with grid coverage, closed-orbit
//! detection, positive-spanning (ample) cone checks, and an eigenvalue test
//! for 3D bilinear systems projected to the sphere of directions.

pub mod bilinear;
pub mod cli;
pub mod config;
pub mod expr;
pub mod fields;
pub mod flow;
pub mod lie;
pub mod manifold;
pub mod numeric;
pub mod reach;
pub mod simplex;

pub use fields::{ControlSystem, VectorField};
pub use manifold::{Manifold, Point};
