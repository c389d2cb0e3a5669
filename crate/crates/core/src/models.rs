//! Log-domain transition and observation models.
//!
//! Both models are unnormalized Gaussian kernels, so every log value is `≤ 0`
//! and finite. The transition kernel is an annulus around the previous cell
//! with radius `T_s · v_c`; the observation kernel compares measured ranges
//! with the anchor-to-cell-center distances. When more than three anchors are
//! in range, only the best-scoring three are used, chosen independently for
//! every candidate position.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::{offset_distance, CellIndex, GridSpec};
use crate::viterbi::TransitionScore;
use crate::{Error, Position, Result};

/// Number of ranges used by the observation model when more are available.
pub const SUBSET_SIZE: usize = 3;

/// HMM hyper-parameters. Defaults are the values used for walking targets
/// with 10 Hz UWB ranging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmParams {
    /// Motion model standard deviation, m.
    pub sigma_x: f64,
    /// Range measurement standard deviation, m.
    pub sigma_o: f64,
    /// Sampling interval, s.
    pub ts: f64,
    /// Assumed constant speed, m/s.
    pub vc: f64,
}

impl Default for HmmParams {
    fn default() -> Self {
        HmmParams {
            sigma_x: 1.5,
            sigma_o: 0.5,
            ts: 0.1,
            vc: 0.5,
        }
    }
}

impl HmmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be > 0, got {v}")))
            }
        };
        positive("sigma_x", self.sigma_x)?;
        positive("sigma_o", self.sigma_o)?;
        positive("ts", self.ts)?;
        if self.vc.is_nan() || self.vc < 0.0 || !self.vc.is_finite() {
            return Err(Error::param("vc", format!("must be >= 0, got {}", self.vc)));
        }
        Ok(())
    }

    /// Log transition kernel as a function of the center-to-center distance.
    pub fn transition_kernel(&self, distance: f64) -> f64 {
        let d = distance - self.ts * self.vc;
        -(d * d) / (2.0 * self.sigma_x * self.sigma_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: u32,
    pub position: Position,
}

impl Anchor {
    pub fn new(id: u32, x: f64, y: f64) -> Self {
        Anchor {
            id,
            position: Position::new(x, y),
        }
    }
}

/// Ranges collected at one sampling instant, keyed by anchor id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementFrame {
    /// Time stamp, s.
    pub time: f64,
    pub ranges: BTreeMap<u32, f64>,
}

impl MeasurementFrame {
    pub fn new(time: f64) -> Self {
        MeasurementFrame {
            time,
            ranges: BTreeMap::new(),
        }
    }

    pub fn with_ranges(time: f64, ranges: impl IntoIterator<Item = (u32, f64)>) -> Self {
        MeasurementFrame {
            time,
            ranges: ranges.into_iter().collect(),
        }
    }

    /// Number of connected anchors.
    pub fn anchor_count(&self) -> usize {
        self.ranges.len()
    }
}

/// Log transition probability between two cells of `grid`.
pub fn transition_logprob(
    grid: &GridSpec,
    from: CellIndex,
    to: CellIndex,
    params: &HmmParams,
) -> Result<f64> {
    grid.check(from)?;
    grid.check(to)?;
    Ok(params.transition_kernel(grid.center_distance(from, to)))
}

/// The range observation model for one frame, with anchor ids resolved to
/// positions. Evaluates at arbitrary positions, so it serves the grid decoders
/// and the particle filter alike.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    ids: Vec<u32>,
    anchors: Vec<Position>,
    ranges: Vec<f64>,
    two_var: f64,
}

impl ObservationModel {
    pub fn new(frame: &MeasurementFrame, anchors: &[Anchor], sigma_o: f64) -> Result<Self> {
        if frame.ranges.is_empty() {
            return Err(Error::EmptyFrame);
        }
        let mut ids = Vec::with_capacity(frame.ranges.len());
        let mut positions = Vec::with_capacity(frame.ranges.len());
        let mut ranges = Vec::with_capacity(frame.ranges.len());
        for (&id, &range) in &frame.ranges {
            let anchor = anchors
                .iter()
                .find(|a| a.id == id)
                .ok_or(Error::UnknownAnchor(id))?;
            ids.push(id);
            positions.push(anchor.position);
            ranges.push(range);
        }
        Ok(ObservationModel {
            ids,
            anchors: positions,
            ranges,
            two_var: 2.0 * sigma_o * sigma_o,
        })
    }

    pub fn anchor_count(&self) -> usize {
        self.ids.len()
    }

    fn term(&self, k: usize, p: Position) -> f64 {
        let d = self.ranges[k] - (p - self.anchors[k]).norm();
        -(d * d) / self.two_var
    }

    /// Best subset (positions into `ids`) and its log value at `p`.
    fn evaluate(&self, p: Position) -> (Option<[usize; SUBSET_SIZE]>, f64) {
        let k = self.ids.len();
        if k <= SUBSET_SIZE {
            let mut sum = self.term(0, p);
            for i in 1..k {
                sum += self.term(i, p);
            }
            return (None, sum);
        }
        let mut terms = [0.0; 16];
        let mut owned;
        let terms: &mut [f64] = if k <= terms.len() {
            &mut terms[..k]
        } else {
            owned = vec![0.0; k];
            &mut owned
        };
        for (i, t) in terms.iter_mut().enumerate() {
            *t = self.term(i, p);
        }
        let mut best = ([0, 1, 2], f64::NEG_INFINITY);
        // Lexicographic enumeration with a strict comparison keeps the
        // smallest id set among ties.
        for a in 0..k {
            for b in a + 1..k {
                for c in b + 1..k {
                    let v = terms[a] + terms[b] + terms[c];
                    if v > best.1 {
                        best = ([a, b, c], v);
                    }
                }
            }
        }
        (Some(best.0), best.1)
    }

    pub fn log_prob(&self, p: Position) -> f64 {
        self.evaluate(p).1
    }

    /// Ids of the three anchors realizing [`Self::log_prob`] at `p`.
    pub fn best_subset(&self, p: Position) -> Result<[u32; SUBSET_SIZE]> {
        match self.evaluate(p).0 {
            Some(idx) => Ok(idx.map(|i| self.ids[i])),
            None => Err(Error::NotEnoughAnchors {
                needed: SUBSET_SIZE,
                available: self.ids.len(),
            }),
        }
    }

    /// Anchors and ranges actually used at `p`, in id order.
    pub fn used_ranges(&self, p: Position) -> Vec<(u32, Position, f64)> {
        match self.evaluate(p).0 {
            Some(idx) => idx
                .iter()
                .map(|&i| (self.ids[i], self.anchors[i], self.ranges[i]))
                .collect(),
            None => (0..self.ids.len())
                .map(|i| (self.ids[i], self.anchors[i], self.ranges[i]))
                .collect(),
        }
    }
}

/// Log observation probability of `frame` given the target is at the center
/// of `cell`.
pub fn observation_logprob(
    grid: &GridSpec,
    cell: CellIndex,
    frame: &MeasurementFrame,
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<f64> {
    grid.check(cell)?;
    let model = ObservationModel::new(frame, anchors, params.sigma_o)?;
    Ok(model.log_prob(grid.cell_center(cell)))
}

/// The three anchors selected by the observation model at `cell`. Only
/// defined when the frame has more than three ranges.
pub fn best_anchor_subset(
    grid: &GridSpec,
    cell: CellIndex,
    frame: &MeasurementFrame,
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<[u32; SUBSET_SIZE]> {
    grid.check(cell)?;
    let model = ObservationModel::new(frame, anchors, params.sigma_o)?;
    model.best_subset(grid.cell_center(cell))
}

/// Transition kernel of a uniform grid, tabulated by cell offset.
///
/// The kernel only depends on `(|dx|, |dy|)`, so one table of `nx · ny`
/// entries covers every pair. For the dense step each table row is mirrored
/// into a `2·nx − 1` strip, which turns the per-source-row lookups into one
/// contiguous slice.
#[derive(Debug, Clone)]
pub struct GridTransition {
    nx: usize,
    ny: usize,
    strips: Vec<f64>,
}

impl GridTransition {
    pub fn new(grid: &GridSpec, params: &HmmParams) -> Self {
        let (nx, ny) = grid.dims();
        let width = 2 * nx - 1;
        let mut strips = vec![0.0; width * ny];
        for dy in 0..ny {
            for k in 0..width {
                let dx = k.abs_diff(nx - 1);
                strips[dy * width + k] =
                    params.transition_kernel(offset_distance(dx, dy, grid.resolution()));
            }
        }
        GridTransition { nx, ny, strips }
    }

    fn strip(&self, dy: usize) -> &[f64] {
        let width = 2 * self.nx - 1;
        &self.strips[dy * width..(dy + 1) * width]
    }

    pub fn log_prob_offset(&self, dx: usize, dy: usize) -> f64 {
        self.strip(dy)[self.nx - 1 + dx]
    }
}

fn max_of_sums(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [f64::NEG_INFINITY; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            let v = x[l] + y[l];
            acc[l] = if v > acc[l] { v } else { acc[l] };
        }
    }
    let mut m = f64::NEG_INFINITY;
    for (x, y) in ra.iter().zip(rb) {
        let v = x + y;
        m = if v > m { v } else { m };
    }
    acc.iter().fold(m, |m, &v| if v > m { v } else { m })
}

impl TransitionScore for GridTransition {
    fn state_count(&self) -> usize {
        self.nx * self.ny
    }

    fn log_transition(&self, from: usize, to: usize) -> f64 {
        let (fx, fy) = (from % self.nx, from / self.nx);
        let (tx, ty) = (to % self.nx, to / self.nx);
        self.log_prob_offset(fx.abs_diff(tx), fy.abs_diff(ty))
    }

    fn best_predecessor(&self, prev: &[f64], to: usize) -> (usize, f64) {
        let nx = self.nx;
        let (tx, ty) = (to % nx, to / nx);
        let mut best = (0, f64::NEG_INFINITY);
        for (jy, row) in prev.chunks_exact(nx).enumerate() {
            let strip = &self.strip(jy.abs_diff(ty))[nx - 1 - tx..2 * nx - 1 - tx];
            let m = max_of_sums(row, strip);
            if m > best.1 {
                let jx = row
                    .iter()
                    .zip(strip)
                    .position(|(r, s)| r + s == m)
                    .expect("row maximum is attained");
                best = (jy * nx + jx, m);
            }
        }
        best
    }
}
