//! Reference estimators on a constant-velocity motion model: least-squares
//! trilateration, an extended Kalman filter with its Rauch–Tung–Striebel
//! smoother, and a bootstrap particle filter.

mod ekf;
mod pf;
mod trilateration;

pub use ekf::{ekf_track, rts_smooth, EkfParams, EkfStep, KinematicState};
pub use pf::{pf_track, ParticleSet, PfParams, PfTrack};
pub use trilateration::{trilaterate, trilaterate_track, TrilaterationTrack};
