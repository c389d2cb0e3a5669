use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::models::{Anchor, HmmParams, MeasurementFrame, ObservationModel};
use crate::{Position, Result};

const DIAG_FLOOR: f64 = 1e-12;

/// Constant-velocity state `[x, y, vx, vy]` with covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl KinematicState {
    pub fn new(
        position: Position,
        velocity: Position,
        position_std: f64,
        velocity_std: f64,
    ) -> Self {
        let (pv, vv) = (position_std * position_std, velocity_std * velocity_std);
        KinematicState {
            mean: Vector4::new(position.x, position.y, velocity.x, velocity.y),
            covariance: Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)),
        }
    }

    pub fn position(&self) -> Position {
        Position::new(self.mean[0], self.mean[1])
    }

    pub fn velocity(&self) -> Position {
        Position::new(self.mean[2], self.mean[3])
    }
}

fn condition(p: Matrix4<f64>) -> Matrix4<f64> {
    let mut p = (p + p.transpose()) * 0.5;
    for i in 0..4 {
        p[(i, i)] = p[(i, i)].max(DIAG_FLOOR);
    }
    p
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// White-acceleration process noise with spectral density `q`.
fn process_noise(dt: f64, q: f64) -> Matrix4<f64> {
    let (a, b, c) = (dt.powi(3) / 3.0 * q, dt.powi(2) / 2.0 * q, dt * q);
    Matrix4::new(
        a, 0.0, b, 0.0, //
        0.0, a, 0.0, b, //
        b, 0.0, c, 0.0, //
        0.0, b, 0.0, c,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfParams {
    /// Acceleration spectral density, m²/s³.
    pub accel_psd: f64,
    pub sigma_o: f64,
}

impl EkfParams {
    /// Process noise chosen so that one step of position noise has standard
    /// deviation `σ_x · T_s`.
    pub fn from_hmm(params: &HmmParams) -> Self {
        EkfParams {
            accel_psd: 3.0 * params.sigma_x * params.sigma_x / params.ts,
            sigma_o: params.sigma_o,
        }
    }
}

/// Predicted and filtered moments at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfStep {
    pub time: f64,
    /// Time since the previous frame (0 for the first one).
    pub dt: f64,
    pub predicted: KinematicState,
    pub filtered: KinematicState,
    /// Range residuals `z − h(x̂⁻)` of the update, empty if predict-only.
    pub innovation: Vec<f64>,
}

fn update(
    state: &KinematicState,
    model: &ObservationModel,
    sigma_o: f64,
) -> (KinematicState, Vec<f64>) {
    let used = model.used_ranges(state.position());
    let m = used.len();
    let mut h = DMatrix::zeros(m, 4);
    let mut resid = DVector::zeros(m);
    for (row, (_, anchor, range)) in used.iter().enumerate() {
        let diff = state.position() - anchor;
        let d = diff.norm().max(1e-9);
        h[(row, 0)] = diff.x / d;
        h[(row, 1)] = diff.y / d;
        resid[row] = range - diff.norm();
    }
    let p = DMatrix::from_column_slice(4, 4, state.covariance.as_slice());
    let s = &h * &p * h.transpose() + DMatrix::identity(m, m) * (sigma_o * sigma_o);
    let Some(s_inv) = s.try_inverse() else {
        return (*state, resid.iter().copied().collect());
    };
    let k = &p * h.transpose() * s_inv;
    let dx = &k * &resid;
    let new_p = (DMatrix::identity(4, 4) - &k * &h) * &p;
    let mean = state.mean + Vector4::from_column_slice(dx.as_slice());
    let covariance = condition(Matrix4::from_column_slice(new_p.as_slice()));
    (
        KinematicState { mean, covariance },
        resid.iter().copied().collect(),
    )
}

/// Extended Kalman filter over range frames. Frames without ranges only
/// predict; more than three ranges use the same best-three selection as the
/// grid observation model, evaluated at the predicted position.
pub fn ekf_track(
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
    init: KinematicState,
    params: &EkfParams,
) -> Result<Vec<EkfStep>> {
    let mut out: Vec<EkfStep> = Vec::with_capacity(frames.len());
    let mut state = init;
    let mut last_time = None;
    for frame in frames {
        let dt = last_time.map_or(0.0, |t| frame.time - t);
        last_time = Some(frame.time);
        let predicted = if dt > 0.0 {
            let f = transition(dt);
            KinematicState {
                mean: f * state.mean,
                covariance: condition(
                    f * state.covariance * f.transpose() + process_noise(dt, params.accel_psd),
                ),
            }
        } else {
            state
        };
        let (filtered, innovation) = if frame.ranges.is_empty() {
            (predicted, Vec::new())
        } else {
            let model = ObservationModel::new(frame, anchors, params.sigma_o)?;
            update(&predicted, &model, params.sigma_o)
        };
        state = filtered;
        out.push(EkfStep {
            time: frame.time,
            dt,
            predicted,
            filtered,
            innovation,
        });
    }
    Ok(out)
}

/// Backward Rauch–Tung–Striebel pass over a filtered trajectory.
pub fn rts_smooth(steps: &[EkfStep]) -> Vec<KinematicState> {
    let Some(last) = steps.last() else {
        return Vec::new();
    };
    let mut smoothed = vec![last.filtered; steps.len()];
    for k in (0..steps.len() - 1).rev() {
        let next = &steps[k + 1];
        let filt = &steps[k].filtered;
        let f = transition(next.dt);
        let pred_inv = next
            .predicted
            .covariance
            .try_inverse()
            .unwrap_or_else(|| next.predicted.covariance.pseudo_inverse(1e-15).unwrap());
        let gain = filt.covariance * f.transpose() * pred_inv;
        let s = smoothed[k + 1];
        let mean = filt.mean + gain * (s.mean - next.predicted.mean);
        let covariance = condition(
            filt.covariance + gain * (s.covariance - next.predicted.covariance) * gain.transpose(),
        );
        smoothed[k] = KinematicState { mean, covariance };
    }
    smoothed
}
