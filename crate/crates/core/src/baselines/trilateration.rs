use nalgebra::{Matrix2, Vector2};

use crate::models::{Anchor, MeasurementFrame};
use crate::{Error, Position, Result};

/// Least-squares position fix from all ranges of a frame.
///
/// Subtracting the first anchor's circle equation from the others gives a
/// linear system `2 (P_k − P_0)ᵀ p = |P_k|² − |P_0|² − o_k² + o_0²`, solved
/// through its normal equations.
pub fn trilaterate(frame: &MeasurementFrame, anchors: &[Anchor]) -> Result<Position> {
    if frame.ranges.len() < 3 {
        return Err(Error::NotEnoughAnchors {
            needed: 2,
            available: frame.ranges.len(),
        });
    }
    let mut rows = Vec::with_capacity(frame.ranges.len());
    for (&id, &r) in &frame.ranges {
        let a = anchors
            .iter()
            .find(|a| a.id == id)
            .ok_or(Error::UnknownAnchor(id))?;
        rows.push((a.position, r));
    }
    let (p0, r0) = rows[0];
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for &(pk, rk) in &rows[1..] {
        let a = 2.0 * (pk - p0);
        let b = pk.norm_squared() - p0.norm_squared() - rk * rk + r0 * r0;
        ata += a * a.transpose();
        atb += a * b;
    }
    let scale = ata.trace();
    if ata.determinant().abs() <= 1e-10 * scale * scale {
        return Err(Error::DegenerateGeometry);
    }
    let inv = ata.try_inverse().ok_or(Error::DegenerateGeometry)?;
    Ok(inv * atb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrilaterationTrack {
    pub positions: Vec<Position>,
    /// `true` where no fix was possible and the position was interpolated
    /// (or held at the nearest fix at the ends).
    pub interpolated: Vec<bool>,
}

/// Trilaterate every frame; frames with fewer than three ranges (or
/// degenerate geometry) are filled by linear interpolation in time between
/// the surrounding fixes.
pub fn trilaterate_track(
    frames: &[MeasurementFrame],
    anchors: &[Anchor],
) -> Result<TrilaterationTrack> {
    let mut fixes: Vec<Option<Position>> = Vec::with_capacity(frames.len());
    for f in frames {
        match trilaterate(f, anchors) {
            Ok(p) => fixes.push(Some(p)),
            Err(Error::NotEnoughAnchors { .. }) | Err(Error::DegenerateGeometry) => {
                fixes.push(None)
            }
            Err(e) => return Err(e),
        }
    }
    let known: Vec<usize> = (0..fixes.len()).filter(|&i| fixes[i].is_some()).collect();
    if known.is_empty() {
        return Err(Error::NotEnoughAnchors {
            needed: 2,
            available: frames.iter().map(|f| f.ranges.len()).max().unwrap_or(0),
        });
    }
    let mut positions = Vec::with_capacity(frames.len());
    let mut interpolated = Vec::with_capacity(frames.len());
    let mut next: usize = 0;
    for i in 0..frames.len() {
        if let Some(p) = fixes[i] {
            positions.push(p);
            interpolated.push(false);
            next += 1;
            continue;
        }
        let before = next.checked_sub(1).map(|k| known[k]);
        let after = known.get(next).copied();
        let p = match (before, after) {
            (Some(a), Some(b)) => {
                let (ta, tb) = (frames[a].time, frames[b].time);
                let w = if tb > ta {
                    (frames[i].time - ta) / (tb - ta)
                } else {
                    0.0
                };
                fixes[a].unwrap() * (1.0 - w) + fixes[b].unwrap() * w
            }
            (Some(a), None) => fixes[a].unwrap(),
            (None, Some(b)) => fixes[b].unwrap(),
            (None, None) => unreachable!("at least one fix exists"),
        };
        positions.push(p);
        interpolated.push(true);
    }
    Ok(TrilaterationTrack {
        positions,
        interpolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors() -> Vec<Anchor> {
        vec![
            Anchor::new(1, 0.0, 0.0),
            Anchor::new(2, 8.0, 0.0),
            Anchor::new(3, 0.0, 8.0),
        ]
    }

    fn exact(p: Position, anchors: &[Anchor], t: f64) -> MeasurementFrame {
        MeasurementFrame::with_ranges(t, anchors.iter().map(|a| (a.id, (p - a.position).norm())))
    }

    #[test]
    fn recovers_target() {
        let a = anchors();
        let f = exact(Position::new(3.0, 4.0), &a, 0.0);
        assert_eq!(f.ranges[&1], 5.0);
        let p = trilaterate(&f, &a).unwrap();
        assert!((p - Position::new(3.0, 4.0)).norm() < 1e-9);
    }

    #[test]
    fn target_at_anchor() {
        let a = anchors();
        let p = trilaterate(&exact(Position::new(8.0, 0.0), &a, 0.0), &a).unwrap();
        assert!((p - Position::new(8.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn collinear_and_short_frames() {
        let a = vec![
            Anchor::new(1, 0.0, 0.0),
            Anchor::new(2, 4.0, 0.0),
            Anchor::new(3, 8.0, 0.0),
        ];
        let f = exact(Position::new(3.0, 4.0), &a, 0.0);
        assert_eq!(trilaterate(&f, &a), Err(Error::DegenerateGeometry));
        let mut f = exact(Position::new(3.0, 4.0), &anchors(), 0.0);
        f.ranges.remove(&3);
        assert!(matches!(
            trilaterate(&f, &anchors()),
            Err(Error::NotEnoughAnchors { .. })
        ));
    }

    #[test]
    fn gaps_are_interpolated() {
        let a = anchors();
        let mut frames: Vec<MeasurementFrame> = (0..5)
            .map(|t| exact(Position::new(1.0 + t as f64, 2.0), &a, t as f64 * 0.1))
            .collect();
        frames[2].ranges.remove(&1);
        frames[3].ranges.remove(&1);
        let track = trilaterate_track(&frames, &a).unwrap();
        assert_eq!(track.interpolated, [false, false, true, true, false]);
        assert!((track.positions[2] - Position::new(3.0, 2.0)).norm() < 1e-9);
        assert!((track.positions[3] - Position::new(4.0, 2.0)).norm() < 1e-9);
    }
}
