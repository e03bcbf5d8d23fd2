//! Orbital stabilization of s-parameterized point-to-point maneuvers.
//!
//! The pipeline: plan a maneuver from the reduced dynamics of a mechanical
//! system ([`reduced_dynamics`]), build a projection operator onto it
//! ([`projection`]), synthesize a gain schedule from boundary LQR and a
//! grid-discretized differential LMI ([`synthesis`]), and check the result by
//! residuals and closed-loop simulation ([`simulate`]).

pub mod curves;
pub mod linearization;
pub mod maneuver;
pub mod mechanics;
pub mod numerics;
pub mod projection;
pub mod reduced_dynamics;
pub mod synthesis;
pub mod simulate;
pub mod pipeline;
