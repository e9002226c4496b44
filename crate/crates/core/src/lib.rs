//! Simulation and control design for a nanoparticle held at the unstable apex
//! of an optical double-well potential.
//!
//! The crate is `no_std` with `alloc`. It covers four layers:
//!
//! * [`potential`]: the TEM00 + TEM01 optical potential, forces, and apex/well geometry.
//! * [`dynamics`]: Langevin integration, detection, drift processes and the sampled closed loop.
//! * [`control`]: linear models, Riccati solvers, LQG synthesis and the runnable
//!   controller with apex-estimate projection.
//! * [`analysis`]: windowed PDFs, Welch PSDs, stabilization criteria and calibration fits.
//!
//! All quantities are SI unless a name says otherwise.
#![no_std]
// `!(x > 0.0)` rejects NaN along with non-positive values; matrix kernels index by row and column.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod consts;
pub mod control;
pub mod dynamics;
pub mod linalg;
pub mod potential;

pub use consts::BOLTZMANN;
