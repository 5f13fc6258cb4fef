//! Safe controlled-invariant ellipsoids and linear state feedback for
//! continuous-time linear systems `ẋ = Ax + Bu` with `‖u‖² ≤ u_max`.
//!
//! Synthesis alternates two sum-of-squares programs, compiled to dense SDPs
//! and solved by the embedded interior-point solver in [`sdp`]. Certificates
//! are re-checked in [`verify`] with eigenvalue oracles and closed-loop
//! simulation only.

pub mod cli;
pub mod error;
pub mod numerics;
pub mod sdp;
pub mod sos;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
