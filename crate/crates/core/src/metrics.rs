//! Accuracy metrics and decode cost accounting.

use serde::{Deserialize, Serialize};

use crate::sim::TruthSample;
use crate::viterbi::Counters;
use crate::{Error, Position, Result};

/// Euclidean error of every estimate against the aligned truth.
pub fn per_step_errors(estimate: &[Position], truth: &[Position]) -> Result<Vec<f64>> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimate.len(),
            right: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm())
        .collect())
}

/// Root mean squared position error, m.
pub fn rmse(estimate: &[Position], truth: &[Position]) -> Result<f64> {
    let errs = per_step_errors(estimate, truth)?;
    Ok((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

/// Distance between the first and last estimate, m.
pub fn loop_closure_error(estimate: &[Position]) -> Result<f64> {
    match (estimate.first(), estimate.last()) {
        (Some(a), Some(b)) if estimate.len() >= 2 => Ok((b - a).norm()),
        _ => Err(Error::TooShort {
            needed: 2,
            got: estimate.len(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    #[default]
    Linear,
    Nearest,
}

/// Truth positions at `times`, interpolated from a (possibly faster) truth
/// stream. Times outside the truth span are rejected.
pub fn align_truth(
    truth: &[TruthSample],
    times: &[f64],
    alignment: Alignment,
) -> Result<Vec<Position>> {
    const TOL: f64 = 1e-6;
    let (first, last) = match (truth.first(), truth.last()) {
        (Some(a), Some(b)) => (a.time, b.time),
        _ => return Err(Error::TooShort { needed: 1, got: 0 }),
    };
    let mut out = Vec::with_capacity(times.len());
    let mut j = 0;
    for &t in times {
        if t < first - TOL || t > last + TOL {
            return Err(Error::LengthMismatch {
                left: times.len(),
                right: truth.len(),
            });
        }
        while j + 1 < truth.len() && truth[j + 1].time <= t {
            j += 1;
        }
        let a = truth[j];
        let p = match truth.get(j + 1) {
            Some(b) if (t - a.time).abs() > TOL => {
                let w = ((t - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
                match alignment {
                    Alignment::Linear => a.position + (b.position - a.position) * w,
                    Alignment::Nearest if w < 0.5 => a.position,
                    Alignment::Nearest => b.position,
                }
            }
            _ => a.position,
        };
        out.push(p);
    }
    Ok(out)
}

/// Backpointer cells of a conventional decode: `N · T`.
pub fn conventional_table_cells(n: u64, t: u64) -> u64 {
    n * t
}

/// Backpointer cells stored by one coarse-to-fine decode:
/// `(N₁ + 4 (r − 1)) · T`.
pub fn adaptive_table_cells(n1: u64, r: u64, t: u64) -> u64 {
    (n1 + 4 * (r - 1)) * t
}

/// Memory figure counting all `r` per-level trajectories:
/// `(N₁ + 4 (r − 1)) · T · r`.
pub fn adaptive_memory_cells(n1: u64, r: u64, t: u64) -> u64 {
    adaptive_table_cells(n1, r, t) * r
}

pub fn conventional_transitions(n: u64, t: u64) -> u64 {
    n * n * t.saturating_sub(1)
}

pub fn adaptive_transitions(n1: u64, r: u64, t: u64) -> u64 {
    (n1 * n1 + 16 * (r - 1)) * t.saturating_sub(1)
}

pub fn adaptive_observations(n1: u64, r: u64, t: u64) -> u64 {
    (n1 + 4 * (r - 1)) * t
}

/// Shape of a decode, for the closed-form cost laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeShape {
    Conventional { cells: u64 },
    Adaptive { coarse_cells: u64, levels: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub transitions: u64,
    pub observations: u64,
    pub backpointer_cells: u64,
    /// Memory figure: `N · T` for a conventional decode and
    /// `(N₁ + 4 (r − 1)) · T · r` for a coarse-to-fine one.
    pub memory_cells: u64,
    /// Whether the measured counters equal the closed-form laws.
    pub counters_match: bool,
}

pub fn cost_report(counters: &Counters, horizon: u64, shape: DecodeShape) -> CostReport {
    let (transitions, observations, cells, memory) = match shape {
        DecodeShape::Conventional { cells: n } => (
            conventional_transitions(n, horizon),
            n * horizon,
            conventional_table_cells(n, horizon),
            conventional_table_cells(n, horizon),
        ),
        DecodeShape::Adaptive {
            coarse_cells: n1,
            levels: r,
        } => (
            adaptive_transitions(n1, r, horizon),
            adaptive_observations(n1, r, horizon),
            adaptive_table_cells(n1, r, horizon),
            adaptive_memory_cells(n1, r, horizon),
        ),
    };
    CostReport {
        transitions: counters.transitions,
        observations: counters.observations,
        backpointer_cells: counters.backpointer_cells,
        memory_cells: memory,
        counters_match: counters.transitions == transitions
            && counters.observations == observations
            && counters.backpointer_cells == cells,
    }
}

/// Accuracy and cost of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: Option<f64>,
    pub lce: Option<f64>,
    pub per_step_errors: Vec<f64>,
    pub cost: Option<CostReport>,
    pub wall_time_s: f64,
}
