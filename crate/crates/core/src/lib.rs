//! Grid hidden-Markov-model localization of a mobile target from anchor
//! range measurements.
//!
//! The workspace is tiled into square cells, each cell is a hidden state, and
//! the most probable cell sequence is recovered with Viterbi decoding. Two
//! decoders are provided:
//!
//! * [`viterbi`]: the conventional decoder over a single grid, `O(N²)` per
//!   frame.
//! * [`adaptive`]: a coarse-to-fine decoder over a quadtree
//!   [`ResolutionLadder`](grid::ResolutionLadder). The coarsest level is
//!   decoded in full and every finer level only considers the four children of
//!   the cell picked one level up.
//!
//! Supporting modules cover range preprocessing, reference estimators
//! (trilateration, EKF, RTS smoother, particle filter), a scenario simulator
//! and accuracy/cost metrics.
//!
//! With the default `parallel` feature the dense trellis step fans out over
//! destination cells with rayon; without it everything runs on the calling
//! thread.

pub mod adaptive;
pub mod baselines;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod par;
pub mod preprocess;
pub mod sim;
pub mod viterbi;

pub use error::{Error, Result};

/// A point or displacement in the workspace plane, in meters.
pub type Position = nalgebra::Vector2<f64>;
