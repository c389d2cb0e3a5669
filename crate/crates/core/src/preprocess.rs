//! Per-anchor range conditioning: outlier rejection on consecutive
//! differences, then causal moving-average smoothing.

use std::collections::BTreeMap;

use crate::models::MeasurementFrame;

/// Default bound on `|o_t − o_last_valid|`, m.
pub const DEFAULT_THRESHOLD: f64 = 1.0;
/// Default smoothing window, samples.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSample {
    pub time: f64,
    pub range: f64,
    pub valid: bool,
}

/// Time-ordered range stream of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSeries {
    pub anchor_id: u32,
    pub samples: Vec<RangeSample>,
}

impl RangeSeries {
    pub fn new(anchor_id: u32, samples: impl IntoIterator<Item = (f64, f64)>) -> Self {
        RangeSeries {
            anchor_id,
            samples: samples
                .into_iter()
                .map(|(time, range)| RangeSample {
                    time,
                    range,
                    valid: true,
                })
                .collect(),
        }
    }

    pub fn valid(&self) -> impl Iterator<Item = &RangeSample> {
        self.samples.iter().filter(|s| s.valid)
    }
}

/// Flag samples that jump more than `threshold` from the last valid sample.
/// The first valid sample is always kept; already-invalid samples stay
/// invalid, which makes the operation idempotent.
pub fn reject_outliers(series: &RangeSeries, threshold: f64) -> RangeSeries {
    let mut last: Option<f64> = None;
    let samples = series
        .samples
        .iter()
        .map(|s| {
            let mut s = *s;
            if s.valid {
                match last {
                    Some(prev) if (s.range - prev).abs() > threshold => s.valid = false,
                    _ => last = Some(s.range),
                }
            }
            s
        })
        .collect();
    RangeSeries {
        anchor_id: series.anchor_id,
        samples,
    }
}

/// Replace every valid sample by the mean of the last `window` valid samples
/// up to and including it. Invalid samples pass through untouched and do not
/// enter the window, which carries on across gaps.
pub fn smooth(series: &RangeSeries, window: usize) -> RangeSeries {
    let window = window.max(1);
    let mut recent: std::collections::VecDeque<f64> =
        std::collections::VecDeque::with_capacity(window);
    let samples = series
        .samples
        .iter()
        .map(|s| {
            let mut s = *s;
            if s.valid {
                if recent.len() == window {
                    recent.pop_front();
                }
                recent.push_back(s.range);
                s.range = recent.iter().sum::<f64>() / recent.len() as f64;
            }
            s
        })
        .collect();
    RangeSeries {
        anchor_id: series.anchor_id,
        samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub threshold: f64,
    pub window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            threshold: DEFAULT_THRESHOLD,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Split frames into per-anchor series.
pub fn split_series(frames: &[MeasurementFrame]) -> Vec<RangeSeries> {
    let mut by_anchor: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for f in frames {
        for (&id, &r) in &f.ranges {
            by_anchor.entry(id).or_default().push((f.time, r));
        }
    }
    by_anchor
        .into_iter()
        .map(|(id, s)| RangeSeries::new(id, s))
        .collect()
}

/// Run rejection and smoothing on every anchor and regroup into frames.
/// Rejected samples disappear from their frame; the frame list itself keeps
/// its length and time stamps.
pub fn preprocess_frames(
    frames: &[MeasurementFrame],
    config: &PreprocessConfig,
) -> Vec<MeasurementFrame> {
    let mut out: Vec<MeasurementFrame> = frames
        .iter()
        .map(|f| MeasurementFrame::new(f.time))
        .collect();
    for series in split_series(frames) {
        let cleaned = smooth(&reject_outliers(&series, config.threshold), config.window);
        // Samples were collected in frame order, so walk the frames in step.
        let mut samples = cleaned.samples.iter();
        for (frame, dst) in frames.iter().zip(out.iter_mut()) {
            if frame.ranges.contains_key(&series.anchor_id) {
                let s = samples
                    .next()
                    .expect("one sample per frame with this anchor");
                if s.valid {
                    dst.ranges.insert(series.anchor_id, s.range);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(vals: &[f64]) -> RangeSeries {
        RangeSeries::new(
            1,
            vals.iter().enumerate().map(|(i, &v)| (i as f64 * 0.1, v)),
        )
    }

    fn ranges(s: &RangeSeries) -> Vec<f64> {
        s.valid().map(|s| s.range).collect()
    }

    #[test]
    fn constant_series_kept() {
        let s = reject_outliers(&series(&[3.0; 6]), 1.0);
        assert!(s.samples.iter().all(|s| s.valid));
        assert_eq!(ranges(&smooth(&s, 4)), vec![3.0; 6]);
    }

    #[test]
    fn last_valid_rule() {
        let s = reject_outliers(&series(&[5.0, 5.1, 9.0, 5.2]), 1.0);
        let flags: Vec<bool> = s.samples.iter().map(|s| s.valid).collect();
        assert_eq!(flags, [true, true, false, true]);
    }

    #[test]
    fn infinite_threshold_is_identity() {
        let input = series(&[1.0, 50.0, 2.0, 80.0]);
        assert_eq!(reject_outliers(&input, f64::INFINITY), input);
    }

    #[test]
    fn smoothing_examples() {
        let input = series(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ranges(&smooth(&input, 10)), vec![1.0, 1.5, 2.0, 2.5]);
        assert_eq!(smooth(&input, 1), input);
    }

    #[test]
    fn window_continues_over_gaps() {
        let mut input = series(&[1.0, 2.0, 100.0, 3.0]);
        input = reject_outliers(&input, 1.5);
        assert_eq!(ranges(&smooth(&input, 2)), vec![1.0, 1.5, 2.5]);
    }

    #[test]
    fn frames_drop_rejected_samples() {
        let frames: Vec<MeasurementFrame> = [4.0, 4.1, 8.0, 4.2]
            .iter()
            .enumerate()
            .map(|(t, &r)| MeasurementFrame::with_ranges(t as f64 * 0.1, [(1, r), (2, 2.0)]))
            .collect();
        let out = preprocess_frames(
            &frames,
            &PreprocessConfig {
                threshold: 1.0,
                window: 1,
            },
        );
        assert_eq!(out.len(), 4);
        assert_eq!(out[2].ranges.get(&1), None);
        assert_eq!(out[2].ranges.get(&2), Some(&2.0));
        assert_eq!(out[3].ranges.get(&1), Some(&4.2));
    }

    proptest! {
        #[test]
        fn causal(vals in prop::collection::vec(0.0f64..20.0, 1..60), cut in 0usize..60) {
            let full = series(&vals);
            let cut = cut.min(vals.len());
            let prefix = series(&vals[..cut]);
            let run = |s: &RangeSeries| smooth(&reject_outliers(s, 1.0), 10);
            let a = run(&full);
            let b = run(&prefix);
            prop_assert_eq!(&a.samples[..cut], &b.samples[..]);
        }

        #[test]
        fn idempotent_rejection(vals in prop::collection::vec(0.0f64..20.0, 1..60)) {
            let once = reject_outliers(&series(&vals), 1.0);
            prop_assert_eq!(reject_outliers(&once, 1.0), once.clone());
        }

        #[test]
        fn smoothing_within_window_bounds(vals in prop::collection::vec(0.0f64..20.0, 1..60), w in 1usize..12) {
            let out = smooth(&series(&vals), w);
            for (i, s) in out.samples.iter().enumerate() {
                let lo = i.saturating_sub(w - 1);
                let win = &vals[lo..=i];
                let min = win.iter().copied().fold(f64::INFINITY, f64::min);
                let max = win.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(s.range >= min - 1e-12 && s.range <= max + 1e-12);
            }
        }
    }
}
