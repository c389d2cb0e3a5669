//! Coarse-to-fine Viterbi over a quadtree resolution ladder.
//!
//! Level 0 is decoded in full. Every finer level `k` then runs a Viterbi pass
//! whose candidate set at time `t` is exactly the four children of the cell
//! decoded at level `k − 1` for the same `t`, so each refinement step scores
//! 16 transition pairs and 4 observations regardless of the grid size.
//!
//! Levels are 0-based here: level 0 is the coarsest grid and level `r − 1`
//! the finest.

use crate::grid::{CellIndex, GridSpec, ResolutionLadder};
use crate::models::{Anchor, GridTransition, HmmParams, MeasurementFrame, ObservationModel};
use crate::par::Parallelism;
use crate::viterbi::{observation_column, observation_models, Counters, MapTrajectory, Trellis};
use crate::{Error, Result};

/// One level of the coarse-to-fine decode.
#[derive(Debug, Clone)]
pub struct RefinementPass {
    pub level: usize,
    /// Candidate cells per time step; empty for the full-grid pass at level 0.
    pub candidate_sets: Vec<[CellIndex; 4]>,
    pub trellis: Trellis,
    pub trajectory: MapTrajectory,
}

#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub passes: Vec<RefinementPass>,
    pub final_trajectory: MapTrajectory,
    /// Summed over all passes.
    pub counters: Counters,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AdaptiveOptions {
    pub parallelism: Parallelism,
    /// Drop all but the newest log-belief column in every pass.
    pub low_memory: bool,
}

fn coarse_pass(
    grid: &GridSpec,
    models: &[ObservationModel],
    params: &HmmParams,
    options: AdaptiveOptions,
) -> RefinementPass {
    let transition = GridTransition::new(grid, params);
    let mut trellis = Trellis::new(grid.cell_count()).with_parallelism(options.parallelism);
    if options.low_memory {
        trellis = trellis.low_memory();
    }
    for (t, model) in models.iter().enumerate() {
        let obs = observation_column(grid, model, options.parallelism);
        if t == 0 {
            trellis.start(obs, None);
        } else {
            trellis.push(&transition, obs, None);
        }
    }
    let (states, score) = trellis.backtrack().expect("at least one frame");
    let trajectory = MapTrajectory::from_cells(
        grid,
        Some(0),
        states.into_iter().map(CellIndex).collect(),
        score,
    );
    RefinementPass {
        level: 0,
        candidate_sets: Vec::new(),
        trellis,
        trajectory,
    }
}

fn refine_with_models(
    ladder: &ResolutionLadder,
    k: usize,
    prev: &MapTrajectory,
    models: &[ObservationModel],
    params: &HmmParams,
    low_memory: bool,
) -> Result<RefinementPass> {
    if k == 0 || k >= ladder.len() {
        return Err(Error::LevelOutOfRange {
            level: k,
            levels: ladder.len(),
        });
    }
    if prev.len() != models.len() {
        return Err(Error::LengthMismatch {
            left: prev.len(),
            right: models.len(),
        });
    }
    let grid = ladder.level(k)?;
    let transition = GridTransition::new(grid, params);
    let mut trellis = Trellis::new(grid.cell_count()).with_parallelism(Parallelism::Sequential);
    if low_memory {
        trellis = trellis.low_memory();
    }
    let mut candidate_sets = Vec::with_capacity(models.len());
    for (t, (model, &parent)) in models.iter().zip(&prev.cells).enumerate() {
        let set = ladder.children(k - 1, parent)?;
        let obs: Vec<f64> = set
            .iter()
            .map(|&c| model.log_prob(grid.cell_center(c)))
            .collect();
        let active = Some(set.iter().map(|c| c.0 as u32).collect());
        if t == 0 {
            trellis.start(obs, active);
        } else {
            trellis.push(&transition, obs, active);
        }
        candidate_sets.push(set);
    }
    let (states, score) = trellis.backtrack()?;
    let trajectory = MapTrajectory::from_cells(
        grid,
        Some(k),
        states.into_iter().map(CellIndex).collect(),
        score,
    );
    Ok(RefinementPass {
        level: k,
        candidate_sets,
        trellis,
        trajectory,
    })
}

/// Refine a level-`k − 1` trajectory on level `k` (`k ≥ 1`).
pub fn refine_pass(
    ladder: &ResolutionLadder,
    k: usize,
    prev: &MapTrajectory,
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<RefinementPass> {
    params.validate()?;
    let models = observation_models(frames, anchors, params)?;
    refine_with_models(ladder, k, prev, &models, params, false)
}

/// Full coarse-to-fine decode of `frames` over every ladder level.
pub fn decode_adaptive(
    ladder: &ResolutionLadder,
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<AdaptiveResult> {
    decode_adaptive_with(ladder, frames, anchors, params, AdaptiveOptions::default())
}

pub fn decode_adaptive_with(
    ladder: &ResolutionLadder,
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
    options: AdaptiveOptions,
) -> Result<AdaptiveResult> {
    if frames.is_empty() {
        return Err(Error::LadderMismatch);
    }
    params.validate()?;
    let models = observation_models(frames, anchors, params)?;
    decode_models(ladder, &models, params, options)
}

fn decode_models(
    ladder: &ResolutionLadder,
    models: &[ObservationModel],
    params: &HmmParams,
    options: AdaptiveOptions,
) -> Result<AdaptiveResult> {
    let mut passes = vec![coarse_pass(ladder.coarsest(), models, params, options)];
    for k in 1..ladder.len() {
        let prev = &passes[k - 1].trajectory;
        let pass = refine_with_models(ladder, k, prev, models, params, options.low_memory)?;
        passes.push(pass);
    }
    let mut counters = Counters::default();
    for p in &passes {
        counters += p.trellis.counters();
    }
    let final_trajectory = passes.last().unwrap().trajectory.clone();
    Ok(AdaptiveResult {
        passes,
        final_trajectory,
        counters,
    })
}

/// Online coarse-to-fine decoding: frames are appended one at a time and
/// the refinement passes are re-run over the whole prefix on every call to
/// [`OnlineAdaptive::trajectory`]. The coarse trellis is extended
/// incrementally.
#[derive(Debug)]
pub struct OnlineAdaptive<'a> {
    ladder: &'a ResolutionLadder,
    anchors: &'a [Anchor],
    params: HmmParams,
    transition: GridTransition,
    coarse: Trellis,
    models: Vec<ObservationModel>,
    parallelism: Parallelism,
}

impl<'a> OnlineAdaptive<'a> {
    pub fn new(
        ladder: &'a ResolutionLadder,
        anchors: &'a [Anchor],
        params: HmmParams,
    ) -> Result<Self> {
        params.validate()?;
        let grid = ladder.coarsest();
        Ok(OnlineAdaptive {
            ladder,
            anchors,
            params,
            transition: GridTransition::new(grid, &params),
            coarse: Trellis::new(grid.cell_count()).low_memory(),
            models: Vec::new(),
            parallelism: Parallelism::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn push(&mut self, frame: &MeasurementFrame) -> Result<()> {
        let model = ObservationModel::new(frame, self.anchors, self.params.sigma_o)?;
        let obs = observation_column(self.ladder.coarsest(), &model, self.parallelism);
        if self.coarse.is_empty() {
            self.coarse.start(obs, None);
        } else {
            self.coarse.push(&self.transition, obs, None);
        }
        self.models.push(model);
        Ok(())
    }

    /// Finest-level MAP trajectory of the frames seen so far.
    pub fn trajectory(&self) -> Result<MapTrajectory> {
        let (states, score) = self.coarse.backtrack()?;
        let mut traj = MapTrajectory::from_cells(
            self.ladder.coarsest(),
            Some(0),
            states.into_iter().map(CellIndex).collect(),
            score,
        );
        for k in 1..self.ladder.len() {
            traj = refine_with_models(self.ladder, k, &traj, &self.models, &self.params, true)?
                .trajectory;
        }
        Ok(traj)
    }
}

/// Agreement between the conventional finest-grid decode and the adaptive
/// decode of the same frames.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    /// Mean Euclidean distance between the two trajectories, m.
    pub mean_distance: f64,
    pub conventional: MapTrajectory,
    pub adaptive: MapTrajectory,
    pub conventional_counters: Counters,
    pub adaptive_counters: Counters,
}

pub fn compare_decodes(
    grid_fine: &GridSpec,
    ladder: &ResolutionLadder,
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    params: &HmmParams,
) -> Result<DivergenceReport> {
    if grid_fine != ladder.finest() {
        return Err(Error::param(
            "grid_fine",
            "must equal the ladder's finest level",
        ));
    }
    let (conventional, conventional_counters) =
        crate::viterbi::decode_with(grid_fine, frames, anchors, params, Parallelism::default())?;
    let adaptive = decode_adaptive(ladder, frames, anchors, params)?;
    let mean_distance = conventional
        .positions
        .iter()
        .zip(&adaptive.final_trajectory.positions)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / conventional.len() as f64;
    Ok(DivergenceReport {
        mean_distance,
        conventional,
        adaptive: adaptive.final_trajectory,
        conventional_counters,
        adaptive_counters: adaptive.counters,
    })
}
