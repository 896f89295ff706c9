//! Dynamics, control and simulated bench experiments for a 3-DoF
//! sagittal-plane spine modelled as a planar 4-R open chain.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: link parameters, gains, friction parameters and the default
//!   spine parameterisation.
//! * [`config`]: TOML configuration loading and validation.
//! * [`dynamics`]: forward kinematics, Jacobians, recursive Newton-Euler
//!   inverse dynamics and the model terms derived from it.
//! * [`control`]: Cartesian impedance law, task-space PD law, damped
//!   least-squares pseudoinverse and Stribeck friction compensation.
//! * [`sim`]: zero-order-hold plant simulation and the push-pull,
//!   displace-and-release and PD sweep protocols.
//! * [`analysis`]: OLS stiffness fits, mass-spring-damper references and
//!   response metrics.

pub mod analysis;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
