//! Physics-guided graph neural ODEs for nonlinear truss dynamics, with a
//! graph extended Kalman filter for online virtual sensing.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: structural graphs, corotational kinematics, state layout.
//! * [`sim`]: truss generators, ground-truth force laws, forcing and
//!   integration, measurement corruption.
//! * [`nn`]: a small dense network with hand-written reverse mode.
//! * [`model`]: the physics-guided graph ODE, Velocity Verlet transition,
//!   physics losses and offline training.
//! * [`gekf`]: the graph extended Kalman filter.
//! * [`harness`]: NMSE, experiment presets, reports.

pub mod error;
pub mod gekf;
pub mod graph;
pub mod harness;
pub mod model;
pub mod nn;
pub mod sim;

pub use error::{Error, Result};

/// Planar vector used for positions, displacements, velocities and forces.
pub type Vec2 = nalgebra::Vector2<f64>;
