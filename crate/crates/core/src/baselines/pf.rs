use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::Workspace;
use crate::models::{Anchor, HmmParams, MeasurementFrame, ObservationModel};
use crate::{Error, Position, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfParams {
    /// Per-step position jitter of the proposal, m.
    pub position_std: f64,
    /// Per-step velocity jitter of the proposal, m/s.
    pub velocity_std: f64,
    /// Spread of the initial velocities, m/s.
    pub initial_speed: f64,
    pub sigma_o: f64,
}

impl PfParams {
    pub fn from_hmm(params: &HmmParams) -> Self {
        PfParams {
            position_std: params.sigma_x * params.ts,
            velocity_std: params.vc * params.ts.sqrt(),
            initial_speed: params.vc,
            sigma_o: params.sigma_o,
        }
    }
}

/// Weighted constant-velocity particles; weights always sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub positions: Vec<Position>,
    pub velocities: Vec<Position>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean_position(&self) -> Position {
        self.positions
            .iter()
            .zip(&self.weights)
            .fold(Position::zeros(), |acc, (p, w)| acc + p * *w)
    }

    fn reset_uniform(&mut self) {
        let w = 1.0 / self.len() as f64;
        self.weights.iter_mut().for_each(|x| *x = w);
    }

    /// Set weights proportional to `exp(log_weights)`. Returns `false` (and
    /// resets to uniform) when the weights cannot be normalized.
    fn set_log_weights(&mut self, log_weights: &[f64]) -> bool {
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            self.reset_uniform();
            return false;
        }
        for (w, lw) in self.weights.iter_mut().zip(log_weights) {
            *w = (lw - max).exp();
        }
        let sum: f64 = self.weights.iter().sum();
        if sum.is_nan() || sum <= 0.0 || !sum.is_finite() {
            self.reset_uniform();
            return false;
        }
        self.weights.iter_mut().for_each(|w| *w /= sum);
        true
    }

    /// Systematic resampling; leaves uniform weights.
    fn resample(&mut self, rng: &mut impl Rng) {
        let n = self.len();
        let step = 1.0 / n as f64;
        let mut u = rng.random::<f64>() * step;
        let mut cum = self.weights[0];
        let mut i = 0;
        let mut positions = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for _ in 0..n {
            while u > cum && i + 1 < n {
                i += 1;
                cum += self.weights[i];
            }
            positions.push(self.positions[i]);
            velocities.push(self.velocities[i]);
            u += step;
        }
        self.positions = positions;
        self.velocities = velocities;
        self.reset_uniform();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfTrack {
    /// Weighted-mean position at every frame.
    pub positions: Vec<Position>,
    /// Frames whose weights could not be normalized.
    pub degeneracy_events: usize,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Bootstrap particle filter. Particles start uniformly over `workspace`,
/// propagate with a jittered constant-velocity model, are weighted with the
/// grid decoders' range likelihood and resampled systematically every frame.
pub fn pf_track(
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    workspace: &Workspace,
    particle_count: usize,
    params: &PfParams,
    seed: u64,
) -> Result<PfTrack> {
    if particle_count == 0 {
        return Err(Error::param("particle_count", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = workspace.extent;
    let mut set = ParticleSet {
        positions: (0..particle_count)
            .map(|_| {
                workspace.origin + Position::new(rng.random::<f64>() * w, rng.random::<f64>() * h)
            })
            .collect(),
        velocities: (0..particle_count)
            .map(|_| Position::new(normal(&mut rng), normal(&mut rng)) * params.initial_speed)
            .collect(),
        weights: vec![1.0 / particle_count as f64; particle_count],
    };
    let mut positions = Vec::with_capacity(frames.len());
    let mut degeneracy_events = 0;
    let mut last_time: Option<f64> = None;
    let mut log_w = vec![0.0; particle_count];
    for frame in frames {
        let dt = last_time.map_or(0.0, |t| frame.time - t);
        last_time = Some(frame.time);
        if dt > 0.0 {
            for (p, v) in set.positions.iter_mut().zip(set.velocities.iter_mut()) {
                *p += *v * dt
                    + Position::new(normal(&mut rng), normal(&mut rng)) * params.position_std;
                *v += Position::new(normal(&mut rng), normal(&mut rng)) * params.velocity_std;
            }
        }
        if frame.ranges.is_empty() {
            positions.push(set.mean_position());
            continue;
        }
        let model = ObservationModel::new(frame, anchors, params.sigma_o)?;
        for (lw, p) in log_w.iter_mut().zip(&set.positions) {
            *lw = model.log_prob(*p);
        }
        if !set.set_log_weights(&log_w) {
            degeneracy_events += 1;
        }
        positions.push(set.mean_position());
        set.resample(&mut rng);
    }
    Ok(PfTrack {
        positions,
        degeneracy_events,
    })
}
