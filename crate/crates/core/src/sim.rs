//! Synthetic scenarios: waypoint trajectories, noisy ranges, scheduled
//! dropouts and positive range bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid::Workspace;
use crate::models::{Anchor, MeasurementFrame};
use crate::{Error, Position, Result};

/// Default range bias injected by a bias window, m.
pub const DEFAULT_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub time: f64,
    pub position: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// The anchor reports nothing.
    Dropout,
    /// The anchor's ranges are offset by `bias` meters.
    Bias { bias: f64 },
}

/// An anchor event active over the closed interval `[start, end]` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventWindow {
    pub anchor_id: u32,
    pub start: f64,
    pub end: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl EventWindow {
    pub fn dropout(anchor_id: u32, start: f64, end: f64) -> Self {
        EventWindow {
            anchor_id,
            start,
            end,
            kind: EventKind::Dropout,
        }
    }

    pub fn bias(anchor_id: u32, start: f64, end: f64, bias: f64) -> Self {
        EventWindow {
            anchor_id,
            start,
            end,
            kind: EventKind::Bias { bias },
        }
    }

    pub fn covers(&self, anchor_id: u32, time: f64) -> bool {
        self.anchor_id == anchor_id && time >= self.start && time <= self.end
    }
}

/// Piecewise-linear constant-speed walk through `waypoints`, sampled every
/// `ts` seconds. The final sample sits exactly on the last waypoint.
pub fn gen_trajectory(waypoints: &[Position], speed: f64, ts: f64) -> Result<Vec<TruthSample>> {
    if waypoints.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: waypoints.len(),
        });
    }
    if speed.is_nan() || speed <= 0.0 {
        return Err(Error::param("speed", format!("must be > 0, got {speed}")));
    }
    if ts.is_nan() || ts <= 0.0 {
        return Err(Error::param("ts", format!("must be > 0, got {ts}")));
    }
    let seg_len: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = seg_len.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroLengthPath);
    }
    let duration = total / speed;
    let steps = (duration / ts - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..=steps {
        let time = k as f64 * ts;
        if k == steps {
            out.push(TruthSample {
                time,
                position: *waypoints.last().unwrap(),
            });
            break;
        }
        let s = (time * speed).min(total);
        while seg + 1 < seg_len.len() && s > seg_start + seg_len[seg] {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let frac = if seg_len[seg] > 0.0 {
            ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let position = waypoints[seg] + (waypoints[seg + 1] - waypoints[seg]) * frac;
        out.push(TruthSample { time, position });
    }
    Ok(out)
}

/// Noisy ranges from every anchor at every truth sample.
///
/// One standard-normal draw is consumed per (sample, anchor) pair whether
/// or not the sample is dropped, so adding events never changes the noise of
/// the remaining samples.
pub fn simulate_ranges(
    truth: &[TruthSample],
    anchors: &[Anchor],
    sigma_o: f64,
    events: &[EventWindow],
    seed: u64,
) -> Vec<MeasurementFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sorted: Vec<&Anchor> = anchors.iter().collect();
    sorted.sort_by_key(|a| a.id);
    truth
        .iter()
        .map(|s| {
            let mut frame = MeasurementFrame::new(s.time);
            for a in &sorted {
                let noise: f64 = rng.sample(StandardNormal);
                let mut dropped = false;
                let mut bias = 0.0;
                for e in events.iter().filter(|e| e.covers(a.id, s.time)) {
                    match e.kind {
                        EventKind::Dropout => dropped = true,
                        EventKind::Bias { bias: b } => bias += b,
                    }
                }
                if dropped {
                    continue;
                }
                let range = (s.position - a.position).norm() + bias + sigma_o * noise;
                frame.ranges.insert(a.id, range.max(0.0));
            }
            frame
        })
        .collect()
}

/// A complete synthetic (or recorded) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub workspace: Workspace,
    pub ts: f64,
    pub anchors: Vec<Anchor>,
    pub truth: Vec<TruthSample>,
    pub frames: Vec<MeasurementFrame>,
    pub events: Vec<EventWindow>,
}

/// Inputs for [`Scenario::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub workspace: Workspace,
    pub anchors: Vec<Anchor>,
    pub waypoints: Vec<Position>,
    pub speed: f64,
    pub ts: f64,
    pub sigma_o: f64,
    pub events: Vec<EventWindow>,
}

impl Scenario {
    pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<Self> {
        if spec.sigma_o.is_nan() || spec.sigma_o < 0.0 {
            return Err(Error::param("sigma_o", "must be >= 0"));
        }
        let truth = gen_trajectory(&spec.waypoints, spec.speed, spec.ts)?;
        if let Some(s) = truth.iter().find(|s| !spec.workspace.contains(s.position)) {
            return Err(Error::OutOfBounds {
                x: s.position.x,
                y: s.position.y,
            });
        }
        let frames = simulate_ranges(&truth, &spec.anchors, spec.sigma_o, &spec.events, seed);
        Ok(Scenario {
            workspace: spec.workspace,
            ts: spec.ts,
            anchors: spec.anchors.clone(),
            truth,
            frames,
            events: spec.events.clone(),
        })
    }

    pub fn truth_positions(&self) -> Vec<Position> {
        self.truth.iter().map(|s| s.position).collect()
    }
}

/// Anchors at three corners of the workspace: (min, min), (max, min),
/// (min, max), with ids 1, 2, 3.
pub fn corner_anchors(ws: &Workspace) -> Vec<Anchor> {
    let (x0, y0) = (ws.origin.x, ws.origin.y);
    let (x1, y1) = (x0 + ws.extent.0, y0 + ws.extent.1);
    vec![
        Anchor::new(1, x0, y0),
        Anchor::new(2, x1, y0),
        Anchor::new(3, x0, y1),
    ]
}

/// A closed rectangular loop inset by `margin` from the workspace edges.
pub fn loop_waypoints(ws: &Workspace, margin: f64) -> Vec<Position> {
    let (x0, y0) = (ws.origin.x + margin, ws.origin.y + margin);
    let (x1, y1) = (
        ws.origin.x + ws.extent.0 - margin,
        ws.origin.y + ws.extent.1 - margin,
    );
    vec![
        Position::new(x0, y0),
        Position::new(x1, y0),
        Position::new(x1, y1),
        Position::new(x0, y1),
        Position::new(x0, y0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_segment_sampling() {
        let t = gen_trajectory(
            &[Position::new(0.0, 0.0), Position::new(1.0, 0.0)],
            0.5,
            0.1,
        )
        .unwrap();
        assert_eq!(t.len(), 21);
        for (k, s) in t.iter().enumerate() {
            assert!((s.position.x - 0.05 * k as f64).abs() < 1e-12);
        }
        assert_eq!(t.last().unwrap().position, Position::new(1.0, 0.0));
        assert!((t.last().unwrap().time - 2.0).abs() < 1e-12);
    }

    #[test]
    fn loop_closes() {
        let ws = Workspace::new(Position::zeros(), (8.0, 8.0));
        let t = gen_trajectory(&loop_waypoints(&ws, 1.0), 0.5, 0.1).unwrap();
        assert_eq!(t.first().unwrap().position, t.last().unwrap().position);
        assert!((t.last().unwrap().time - 24.0 / 0.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_paths() {
        let p = Position::new(1.0, 1.0);
        assert_eq!(
            gen_trajectory(&[p, p], 0.5, 0.1),
            Err(Error::ZeroLengthPath)
        );
        assert!(gen_trajectory(&[p], 0.5, 0.1).is_err());
        assert!(gen_trajectory(&[p, Position::zeros()], 0.0, 0.1).is_err());
    }

    #[test]
    fn noiseless_and_dropout() {
        let ws = Workspace::new(Position::zeros(), (8.0, 8.0));
        let anchors = corner_anchors(&ws);
        let truth = gen_trajectory(&loop_waypoints(&ws, 1.0), 0.5, 0.1).unwrap();
        let frames = simulate_ranges(&truth, &anchors, 0.0, &[], 1);
        for (f, s) in frames.iter().zip(&truth) {
            for a in &anchors {
                assert_eq!(f.ranges[&a.id], (s.position - a.position).norm());
            }
        }
        let events = [EventWindow::dropout(1, 27.0, 29.5)];
        let frames = simulate_ranges(&truth, &anchors, 0.5, &events, 1);
        for f in &frames {
            let inside = f.time >= 27.0 && f.time <= 29.5;
            assert_eq!(f.anchor_count(), if inside { 2 } else { 3 });
        }
        assert_eq!(frames, simulate_ranges(&truth, &anchors, 0.5, &events, 1));
    }

    #[test]
    fn bias_shifts_ranges() {
        let truth = [TruthSample {
            time: 0.0,
            position: Position::new(3.0, 4.0),
        }];
        let anchors = [Anchor::new(1, 0.0, 0.0)];
        let frames = simulate_ranges(
            &truth,
            &anchors,
            0.0,
            &[EventWindow::bias(1, 0.0, 1.0, 1.0)],
            0,
        );
        assert_eq!(frames[0].ranges[&1], 6.0);
    }

    #[test]
    fn empirical_noise_level() {
        let truth: Vec<TruthSample> = (0..10_000)
            .map(|k| TruthSample {
                time: k as f64 * 0.1,
                position: Position::new(3.0, 4.0),
            })
            .collect();
        let anchors = [Anchor::new(1, 0.0, 0.0)];
        let frames = simulate_ranges(&truth, &anchors, 0.5, &[], 42);
        let errs: Vec<f64> = frames.iter().map(|f| f.ranges[&1] - 5.0).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.025, "std {}", var.sqrt());
    }
}
