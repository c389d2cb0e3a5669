//! Log-domain Viterbi decoding.
//!
//! [`Trellis`] is model-agnostic: columns of log observation values are pushed
//! in, together with a [`TransitionScore`], and it keeps the per-column
//! log-beliefs `ρ_t` and backpointers `Ψ_t`. A column may be restricted to an
//! ascending list of active states, which is how the coarse-to-fine decoder
//! runs over its four-cell candidate sets.
//!
//! [`GridDecoder`] binds a trellis to a [`GridSpec`] and the range models and
//! supports online use: `init` with the first frame, then `step` per frame and
//! `backtrack` whenever a trajectory is needed.
//!
//! Every argmax breaks ties toward the smallest state index. There is no
//! per-column normalization.

use crate::grid::{CellIndex, GridSpec};
use crate::models::{Anchor, GridTransition, HmmParams, MeasurementFrame, ObservationModel};
use crate::par::{map_indices, Parallelism};
use crate::{Error, Position, Result};

/// Log transition scores over a finite state space.
pub trait TransitionScore: Sync {
    fn state_count(&self) -> usize;

    fn log_transition(&self, from: usize, to: usize) -> f64;

    /// `argmax_j prev[j] + log_transition(j, to)` over the full state space,
    /// ties to the smallest `j`. Implementations may override this with a
    /// faster kernel but must return bit-identical results.
    fn best_predecessor(&self, prev: &[f64], to: usize) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, &r) in prev.iter().enumerate() {
            let v = r + self.log_transition(j, to);
            if v > best.1 {
                best = (j, v);
            }
        }
        best
    }
}

/// A dense `from × to` table of log transition values.
#[derive(Debug, Clone)]
pub struct DenseTransition {
    n: usize,
    table: Vec<f64>,
}

impl DenseTransition {
    /// `table[from * n + to]`.
    pub fn new(n: usize, table: Vec<f64>) -> Self {
        assert_eq!(table.len(), n * n, "transition table must be n × n");
        DenseTransition { n, table }
    }
}

impl TransitionScore for DenseTransition {
    fn state_count(&self) -> usize {
        self.n
    }

    fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.table[from * self.n + to]
    }
}

/// Instrumentation collected while decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    /// Transition evaluations (predecessor/successor pairs scored).
    pub transitions: u64,
    /// Observation-likelihood evaluations.
    pub observations: u64,
    /// Entries stored in the backpointer table.
    pub backpointer_cells: u64,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, rhs: Self) {
        self.transitions += rhs.transitions;
        self.observations += rhs.observations;
        self.backpointer_cells += rhs.backpointer_cells;
    }
}

#[derive(Debug, Clone)]
struct Column {
    /// Ascending active states; `None` means every state.
    active: Option<Vec<u32>>,
    /// Empty once dropped in low-memory mode.
    rho: Vec<f64>,
    backptrs: Vec<u32>,
}

impl Column {
    fn len(&self, n_states: usize) -> usize {
        self.active.as_ref().map_or(n_states, Vec::len)
    }

    fn state(&self, pos: usize) -> usize {
        self.active.as_ref().map_or(pos, |a| a[pos] as usize)
    }

    fn position(&self, state: usize) -> Option<usize> {
        match &self.active {
            None => Some(state),
            Some(a) => a.binary_search(&(state as u32)).ok(),
        }
    }
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Log-belief columns and backpointer table of a Viterbi decode.
#[derive(Debug, Clone)]
pub struct Trellis {
    n_states: usize,
    columns: Vec<Column>,
    last_rho: Vec<f64>,
    keep_rho: bool,
    parallelism: Parallelism,
    counters: Counters,
}

impl Trellis {
    pub fn new(n_states: usize) -> Self {
        Trellis {
            n_states,
            columns: Vec::new(),
            last_rho: Vec::new(),
            keep_rho: true,
            parallelism: Parallelism::default(),
            counters: Counters::default(),
        }
    }

    /// Keep only the newest `ρ` column (backpointers are always kept).
    pub fn low_memory(mut self) -> Self {
        self.keep_rho = false;
        self
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn state_count(&self) -> usize {
        self.n_states
    }

    /// Number of columns `T`.
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Log-beliefs of column `t` (0-based), one per active state. `None` if
    /// the column was dropped in low-memory mode.
    pub fn rho(&self, t: usize) -> Option<&[f64]> {
        if t + 1 == self.columns.len() {
            return Some(&self.last_rho);
        }
        let c = self.columns.get(t)?;
        (!c.rho.is_empty() || c.len(self.n_states) == 0).then_some(c.rho.as_slice())
    }

    pub fn last_rho(&self) -> &[f64] {
        &self.last_rho
    }

    /// Backpointers of column `t`, one absolute predecessor state per active
    /// state. Column 0 holds the maximum-likelihood state for every entry.
    pub fn backptrs(&self, t: usize) -> Option<&[u32]> {
        self.columns.get(t).map(|c| c.backptrs.as_slice())
    }

    /// Active states of column `t`, `None` when the column spans every state.
    pub fn active(&self, t: usize) -> Option<&[u32]> {
        self.columns.get(t).and_then(|c| c.active.as_deref())
    }

    fn check_active(&self, active: &Option<Vec<u32>>, obs_len: usize) {
        match active {
            None => assert_eq!(obs_len, self.n_states, "observation column length"),
            Some(a) => {
                assert_eq!(obs_len, a.len(), "observation column length");
                assert!(!a.is_empty(), "active set must not be empty");
                assert!(a.windows(2).all(|w| w[0] < w[1]), "active set must ascend");
                assert!((*a.last().unwrap() as usize) < self.n_states);
            }
        }
    }

    fn push_column(&mut self, column: Column, rho: Vec<f64>) {
        let cells = column.backptrs.len() as u64;
        self.counters.backpointer_cells += cells;
        self.counters.observations += cells;
        if let Some(prev) = self.columns.last_mut() {
            if self.keep_rho {
                prev.rho = std::mem::take(&mut self.last_rho);
            }
        }
        self.columns.push(column);
        self.last_rho = rho;
    }

    /// Start a new decode from the first column's log observation values
    /// (`ρ_1 = ln P(o_1 | x)`). Any previous columns are discarded.
    pub fn start(&mut self, obs: Vec<f64>, active: Option<Vec<u32>>) {
        self.check_active(&active, obs.len());
        self.columns.clear();
        self.counters = Counters::default();
        let (ml, _) = argmax_first(&obs);
        let ml_state = active.as_ref().map_or(ml as u32, |a| a[ml]);
        let column = Column {
            backptrs: vec![ml_state; obs.len()],
            active,
            rho: Vec::new(),
        };
        self.push_column(column, obs);
    }

    /// Append a column: `Ψ_t(i) = argmax_j ρ_{t-1}(j) + ln P(i | j)` and
    /// `ρ_t(i) = ln P(o_t | i) + max_j (…)`.
    pub fn push<T: TransitionScore + ?Sized>(
        &mut self,
        transition: &T,
        obs: Vec<f64>,
        active: Option<Vec<u32>>,
    ) {
        assert!(!self.columns.is_empty(), "start the trellis first");
        assert_eq!(transition.state_count(), self.n_states);
        self.check_active(&active, obs.len());
        let prev = self.columns.last().unwrap();
        let prev_rho = &self.last_rho;
        let prev_len = prev.len(self.n_states);
        let dest_state = |pos: usize| active.as_ref().map_or(pos, |a| a[pos] as usize);

        let best: Vec<(u32, f64)> = map_indices(obs.len(), self.parallelism, |pos| {
            let to = dest_state(pos);
            let (j, m) = match &prev.active {
                None => transition.best_predecessor(prev_rho, to),
                Some(states) => {
                    let mut best = (0, f64::NEG_INFINITY);
                    for (&j, &r) in states.iter().zip(prev_rho) {
                        let v = r + transition.log_transition(j as usize, to);
                        if v > best.1 {
                            best = (j as usize, v);
                        }
                    }
                    best
                }
            };
            (j as u32, obs[pos] + m)
        });

        self.counters.transitions += (prev_len * obs.len()) as u64;
        let (backptrs, rho): (Vec<u32>, Vec<f64>) = best.into_iter().unzip();
        let column = Column {
            active,
            rho: Vec::new(),
            backptrs,
        };
        self.push_column(column, rho);
    }

    /// Most probable state sequence and its log score.
    pub fn backtrack(&self) -> Result<(Vec<usize>, f64)> {
        let last = self.columns.last().ok_or(Error::EmptyTrellis)?;
        let (pos, score) = argmax_first(&self.last_rho);
        let mut state = last.state(pos);
        let mut states = vec![0; self.columns.len()];
        for t in (0..self.columns.len()).rev() {
            states[t] = state;
            if t == 0 {
                break;
            }
            let column = &self.columns[t];
            let pos = column
                .position(state)
                .expect("state is active in its column");
            state = column.backptrs[pos] as usize;
        }
        Ok((states, score))
    }
}

/// Log score of a state sequence, accumulated in the same order as the
/// trellis recursion.
pub fn sequence_score<T: TransitionScore + ?Sized>(
    obs: &[Vec<f64>],
    transition: &T,
    states: &[usize],
) -> f64 {
    let mut score = obs[0][states[0]];
    for t in 1..states.len() {
        score = obs[t][states[t]] + (score + transition.log_transition(states[t - 1], states[t]));
    }
    score
}

/// A decoded cell sequence with its cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTrajectory {
    /// Ladder level the cells belong to; `None` for a standalone grid.
    pub level: Option<usize>,
    pub cells: Vec<CellIndex>,
    pub positions: Vec<Position>,
    /// Log score of the sequence under the decoder's models.
    pub score: f64,
}

impl MapTrajectory {
    pub fn from_cells(
        grid: &GridSpec,
        level: Option<usize>,
        cells: Vec<CellIndex>,
        score: f64,
    ) -> Self {
        let positions = cells.iter().map(|&c| grid.cell_center(c)).collect();
        MapTrajectory {
            level,
            cells,
            positions,
            score,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Resolve every frame's observation model once.
pub fn observation_models(
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<Vec<ObservationModel>> {
    frames
        .iter()
        .map(|f| ObservationModel::new(f, anchors, params.sigma_o))
        .collect()
}

/// Log observation values of `model` over every cell of `grid`.
pub fn observation_column(
    grid: &GridSpec,
    model: &ObservationModel,
    parallelism: Parallelism,
) -> Vec<f64> {
    map_indices(grid.cell_count(), parallelism, |i| {
        model.log_prob(grid.cell_center(CellIndex(i)))
    })
}

/// Online conventional Viterbi over a single grid.
#[derive(Debug, Clone)]
pub struct GridDecoder<'a> {
    grid: &'a GridSpec,
    anchors: &'a [Anchor],
    params: HmmParams,
    transition: GridTransition,
    trellis: Trellis,
    level: Option<usize>,
}

impl<'a> GridDecoder<'a> {
    pub fn new(grid: &'a GridSpec, anchors: &'a [Anchor], params: HmmParams) -> Result<Self> {
        params.validate()?;
        Ok(GridDecoder {
            grid,
            anchors,
            params,
            transition: GridTransition::new(grid, &params),
            trellis: Trellis::new(grid.cell_count()),
            level: None,
        })
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.trellis = self.trellis.with_parallelism(parallelism);
        self
    }

    pub fn low_memory(mut self) -> Self {
        self.trellis = self.trellis.low_memory();
        self
    }

    /// Tag produced trajectories with a ladder level.
    pub fn at_level(mut self, level: usize) -> Self {
        self.level = Some(level);
        self
    }

    pub fn grid(&self) -> &GridSpec {
        self.grid
    }

    pub fn trellis(&self) -> &Trellis {
        &self.trellis
    }

    pub fn into_trellis(self) -> Trellis {
        self.trellis
    }

    pub fn transition(&self) -> &GridTransition {
        &self.transition
    }

    fn column(&self, frame: &MeasurementFrame) -> Result<Vec<f64>> {
        let model = ObservationModel::new(frame, self.anchors, self.params.sigma_o)?;
        Ok(observation_column(
            self.grid,
            &model,
            self.trellis.parallelism,
        ))
    }

    /// Reset and seed the trellis with the first frame.
    pub fn init(&mut self, frame: &MeasurementFrame) -> Result<()> {
        let obs = self.column(frame)?;
        self.trellis.start(obs, None);
        Ok(())
    }

    /// Append one frame (`init` is called implicitly on an empty trellis).
    pub fn step(&mut self, frame: &MeasurementFrame) -> Result<()> {
        if self.trellis.is_empty() {
            return self.init(frame);
        }
        let obs = self.column(frame)?;
        self.trellis.push(&self.transition, obs, None);
        Ok(())
    }

    pub fn backtrack(&self) -> Result<MapTrajectory> {
        let (states, score) = self.trellis.backtrack()?;
        let cells = states.into_iter().map(CellIndex).collect();
        Ok(MapTrajectory::from_cells(
            self.grid, self.level, cells, score,
        ))
    }
}

/// Trellis holding the first frame's column.
pub fn init_column(
    grid: &GridSpec,
    frame: &MeasurementFrame,
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<Trellis> {
    let mut dec = GridDecoder::new(grid, anchors, *params)?;
    dec.init(frame)?;
    Ok(dec.into_trellis())
}

/// Append one frame to a trellis built over `grid`.
pub fn step(
    trellis: &mut Trellis,
    grid: &GridSpec,
    frame: &MeasurementFrame,
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<()> {
    if trellis.is_empty() {
        return Err(Error::EmptyTrellis);
    }
    let model = ObservationModel::new(frame, anchors, params.sigma_o)?;
    let obs = observation_column(grid, &model, trellis.parallelism);
    trellis.push(&GridTransition::new(grid, params), obs, None);
    Ok(())
}

pub fn backtrack(trellis: &Trellis, grid: &GridSpec) -> Result<MapTrajectory> {
    let (states, score) = trellis.backtrack()?;
    Ok(MapTrajectory::from_cells(
        grid,
        None,
        states.into_iter().map(CellIndex).collect(),
        score,
    ))
}

/// Decode the MAP cell sequence for `frames` over `grid`.
pub fn decode(
    grid: &GridSpec,
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<MapTrajectory> {
    Ok(decode_with(grid, frames, anchors, params, Parallelism::default())?.0)
}

/// [`decode`] with explicit execution mode, also returning the counters.
pub fn decode_with(
    grid: &GridSpec,
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
    parallelism: Parallelism,
) -> Result<(MapTrajectory, Counters)> {
    if frames.is_empty() {
        return Err(Error::LadderMismatch);
    }
    let mut dec = GridDecoder::new(grid, anchors, *params)?
        .with_parallelism(parallelism)
        .low_memory();
    for frame in frames {
        dec.step(frame)?;
    }
    Ok((dec.backtrack()?, dec.trellis().counters()))
}
