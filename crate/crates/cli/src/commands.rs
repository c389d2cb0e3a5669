//! The four subcommands as library functions.

use std::path::Path;
use std::time::Instant;

use quadhmm::adaptive::{decode_adaptive_with, AdaptiveOptions};
use quadhmm::baselines::{
    ekf_track, pf_track, rts_smooth, trilaterate, trilaterate_track, EkfParams, KinematicState,
    PfParams,
};
use quadhmm::grid::{ResolutionLadder, Workspace};
use quadhmm::metrics::{
    align_truth, cost_report, loop_closure_error, per_step_errors, Alignment, CostReport,
    DecodeShape,
};
use quadhmm::models::MeasurementFrame;
use quadhmm::par::Parallelism;
use quadhmm::preprocess::preprocess_frames;
use quadhmm::sim::{corner_anchors, loop_waypoints, Scenario, ScenarioSpec};
use quadhmm::viterbi::{decode_with, MapTrajectory};
use quadhmm::Position;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BenchCase, Estimator, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, LoadedScenario, TrajectoryRow};

/// Generate the configured scenario and write it to `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult<Scenario> {
    let scenario = simulate(cfg)?;
    io::write_scenario(out, &scenario, Some(cfg.seed))?;
    Ok(scenario)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Scenario> {
    let mut scenario = Scenario::generate(&cfg.scenario_spec(), cfg.seed)?;
    if let Some(n) = cfg.scenario.frames {
        scenario.truth.truncate(n);
        scenario.frames.truncate(n);
    }
    Ok(scenario)
}

/// Output of one estimator run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub rows: Vec<TrajectoryRow>,
    pub wall_time_s: f64,
    pub cost: Option<CostReport>,
    /// Trilateration only: frames filled by interpolation.
    pub interpolated: Option<Vec<bool>>,
    /// Particle filter only.
    pub degeneracy_events: Option<usize>,
    /// EKF / ERTS only: where the initial state came from.
    pub init_source: Option<&'static str>,
}

impl Estimate {
    pub fn positions(&self) -> Vec<Position> {
        self.rows.iter().map(|r| r.position).collect()
    }
}

fn grid_rows(frames: &[MeasurementFrame], traj: &MapTrajectory) -> Vec<TrajectoryRow> {
    frames
        .iter()
        .zip(traj.cells.iter().zip(&traj.positions))
        .map(|(f, (c, p))| TrajectoryRow {
            time: f.time,
            position: *p,
            cell: Some(c.get()),
            level: Some(traj.level.unwrap_or(0)),
        })
        .collect()
}

fn plain_rows(frames: &[MeasurementFrame], positions: &[Position]) -> Vec<TrajectoryRow> {
    frames
        .iter()
        .zip(positions)
        .map(|(f, p)| TrajectoryRow {
            time: f.time,
            position: *p,
            cell: None,
            level: None,
        })
        .collect()
}

fn require_ranges(frames: &[MeasurementFrame], estimator: Estimator) -> CliResult<()> {
    if let Some(f) = frames.iter().find(|f| f.ranges.is_empty()) {
        return Err(CliError::Validation(format!(
            "estimator {estimator} needs at least one range per frame; the frame at t={} has none",
            f.time
        )));
    }
    Ok(())
}

fn ekf_init(
    cfg: &RunConfig,
    scenario: &Scenario,
    frames: &[MeasurementFrame],
) -> (KinematicState, &'static str) {
    let scale = 1.0 + cfg.ekf.init_bias;
    let (position, source) = if let Some(first) = scenario.truth.first() {
        (first.position * scale, "truth")
    } else if let Some(p) = frames
        .iter()
        .find_map(|f| trilaterate(f, &scenario.anchors).ok())
    {
        (p, "trilateration")
    } else {
        let ws = scenario.workspace;
        (
            ws.origin + Position::new(ws.extent.0, ws.extent.1) * 0.5,
            "workspace_center",
        )
    };
    let state = KinematicState::new(
        position,
        Position::zeros(),
        cfg.ekf.position_std,
        cfg.ekf.velocity_std,
    );
    (state, source)
}

/// Run the configured estimator over `frames` (already preprocessed).
pub fn run_estimator(
    cfg: &RunConfig,
    scenario: &Scenario,
    ladder: &ResolutionLadder,
    frames: &[MeasurementFrame],
) -> CliResult<Estimate> {
    let anchors = &scenario.anchors;
    let params = &cfg.params;
    let horizon = frames.len() as u64;
    let mut out = Estimate {
        rows: Vec::new(),
        wall_time_s: 0.0,
        cost: None,
        interpolated: None,
        degeneracy_events: None,
        init_source: None,
    };
    let start = Instant::now();
    match cfg.estimator {
        Estimator::Viterbi => {
            require_ranges(frames, cfg.estimator)?;
            let grid = ladder.finest();
            let (traj, counters) =
                decode_with(grid, frames, anchors, params, Parallelism::default())?;
            out.wall_time_s = start.elapsed().as_secs_f64();
            out.rows = grid_rows(frames, &traj);
            out.cost = Some(cost_report(
                &counters,
                horizon,
                DecodeShape::Conventional {
                    cells: grid.cell_count() as u64,
                },
            ));
        }
        Estimator::Adaptive => {
            require_ranges(frames, cfg.estimator)?;
            let options = AdaptiveOptions {
                low_memory: true,
                ..AdaptiveOptions::default()
            };
            let result = decode_adaptive_with(ladder, frames, anchors, params, options)?;
            out.wall_time_s = start.elapsed().as_secs_f64();
            out.rows = grid_rows(frames, &result.final_trajectory);
            out.cost = Some(cost_report(
                &result.counters,
                horizon,
                DecodeShape::Adaptive {
                    coarse_cells: ladder.coarsest().cell_count() as u64,
                    levels: ladder.len() as u64,
                },
            ));
        }
        Estimator::Trilateration => {
            let track = trilaterate_track(frames, anchors)?;
            out.wall_time_s = start.elapsed().as_secs_f64();
            out.rows = plain_rows(frames, &track.positions);
            out.interpolated = Some(track.interpolated);
        }
        Estimator::Ekf | Estimator::Erts => {
            let (init, source) = ekf_init(cfg, scenario, frames);
            let steps = ekf_track(frames, anchors, init, &EkfParams::from_hmm(params))?;
            let positions: Vec<Position> = if cfg.estimator == Estimator::Erts {
                rts_smooth(&steps).iter().map(|s| s.position()).collect()
            } else {
                steps.iter().map(|s| s.filtered.position()).collect()
            };
            out.wall_time_s = start.elapsed().as_secs_f64();
            out.rows = plain_rows(frames, &positions);
            out.init_source = Some(source);
        }
        Estimator::Pf => {
            let track = pf_track(
                frames,
                anchors,
                &scenario.workspace,
                cfg.pf.particles,
                &PfParams::from_hmm(params),
                cfg.seed,
            )?;
            out.wall_time_s = start.elapsed().as_secs_f64();
            out.rows = plain_rows(frames, &track.positions);
            out.degeneracy_events = Some(track.degeneracy_events);
        }
    }
    Ok(out)
}

/// Maximal runs of `true`, as `[first, last]` time pairs.
fn flagged_segments(frames: &[MeasurementFrame], flags: &[bool]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    for (i, (&flag, f)) in flags.iter().zip(frames).enumerate() {
        match (flag, open) {
            (true, None) => open = Some(f.time),
            (false, Some(t0)) => {
                out.push([t0, frames[i - 1].time]);
                open = None;
            }
            _ => {}
        }
    }
    if let (Some(t0), Some(last)) = (open, frames.last()) {
        out.push([t0, last.time]);
    }
    out
}

/// Decode a scenario directory and write `trajectory.csv` and
/// `report.json` into `out`. Returns the report.
pub fn cmd_decode(cfg: &RunConfig, scenario_dir: &Path, out: &Path) -> CliResult<Value> {
    let scenario = LoadedScenario::read(scenario_dir)?.into_scenario(&cfg.workspace, cfg.params.ts);
    let (estimate, report) = decode_scenario(cfg, &scenario)?;
    io::ensure_dir(out)?;
    io::write_trajectory(&out.join(io::TRAJECTORY_FILE), &estimate.rows)?;
    io::write_json(&out.join(io::REPORT_FILE), &report)?;
    Ok(report)
}

/// Estimate plus its report, without touching the file system.
pub fn decode_scenario(cfg: &RunConfig, scenario: &Scenario) -> CliResult<(Estimate, Value)> {
    let ladder = cfg.ladder_for(&scenario.workspace)?;
    let frames = if cfg.preprocess.enabled {
        preprocess_frames(&scenario.frames, &cfg.preprocess.to_config())
    } else {
        scenario.frames.clone()
    };
    if frames.is_empty() {
        return Err(CliError::Validation("scenario has no frames".into()));
    }
    let estimate = run_estimator(cfg, scenario, &ladder, &frames)?;
    let positions = estimate.positions();

    let rmse = if scenario.truth.is_empty() {
        None
    } else {
        let times: Vec<f64> = frames.iter().map(|f| f.time).collect();
        let truth = align_truth(&scenario.truth, &times, Alignment::Linear)?;
        let errs = per_step_errors(&positions, &truth)?;
        Some((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
    };
    let lce = loop_closure_error(&positions).ok();

    let mut params = cfg.flat_params();
    params.insert("estimator".into(), cfg.estimator.name().into());
    let mut report = json!({
        "estimator": cfg.estimator.name(),
        "frames": frames.len(),
        "rmse_m": rmse,
        "lce_m": lce,
        "wall_time_s": estimate.wall_time_s,
        "transitions": estimate.cost.map(|c| c.transitions),
        "observations": estimate.cost.map(|c| c.observations),
        "backpointer_cells": estimate.cost.map(|c| c.backpointer_cells),
        "memory_cells": estimate.cost.map(|c| c.memory_cells),
        "counters_match": estimate.cost.map(|c| c.counters_match),
        "params": params,
    });
    let obj = report.as_object_mut().unwrap();
    if let Some(flags) = &estimate.interpolated {
        obj.insert(
            "interpolated_frames".into(),
            flags.iter().filter(|&&f| f).count().into(),
        );
        obj.insert(
            "interpolated_segments".into(),
            json!(flagged_segments(&frames, flags)),
        );
    }
    if let Some(n) = estimate.degeneracy_events {
        obj.insert("degeneracy_events".into(), n.into());
    }
    if let Some(src) = estimate.init_source {
        obj.insert("ekf_init".into(), src.into());
    }
    Ok((estimate, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub rmse_m: f64,
    pub lce_m: Option<f64>,
    pub frames: usize,
    pub per_step_errors: Vec<f64>,
}

/// Accuracy of an estimate file against a truth file, truth interpolated
/// to the estimate's time stamps.
pub fn cmd_evaluate(estimate_path: &Path, truth_path: &Path) -> CliResult<Evaluation> {
    let estimate = io::read_positions(estimate_path)?;
    let truth = io::read_truth(truth_path)?;
    if estimate.is_empty() {
        return Err(CliError::parse(estimate_path, 1, "no rows"));
    }
    let times: Vec<f64> = estimate.iter().map(|s| s.time).collect();
    let positions: Vec<Position> = estimate.iter().map(|s| s.position).collect();
    let aligned = align_truth(&truth, &times, Alignment::Linear)?;
    let errs = per_step_errors(&positions, &aligned)?;
    Ok(Evaluation {
        rmse_m: (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt(),
        lce_m: loop_closure_error(&positions).ok(),
        frames: errs.len(),
        per_step_errors: errs,
    })
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub estimator: Estimator,
    /// Cells of the finest grid.
    pub n: u64,
    /// Cells of the coarsest grid (equal to `n` for a single grid).
    pub n1: u64,
    pub r: u64,
    pub t: u64,
    pub repetitions: usize,
    /// Mean over the repetitions, s.
    pub wall_time_s: f64,
    pub transitions: Option<u64>,
    pub observations: Option<u64>,
    pub backpointer_cells: Option<u64>,
    pub memory_cells: Option<u64>,
}

/// Synthetic walk for a bench case: the default loop repeated until it
/// covers `frames` samples.
pub fn bench_scenario(case: &BenchCase, cfg: &RunConfig, seed: u64) -> CliResult<Scenario> {
    let ws = Workspace::new(Position::zeros(), case.extent);
    let margin = case.extent.0.min(case.extent.1) / 8.0;
    let lap = loop_waypoints(&ws, margin);
    let perimeter: f64 = lap.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let needed = case.frames as f64 * cfg.params.ts * cfg.scenario.speed;
    let laps = (needed / perimeter).ceil().max(1.0) as usize;
    let mut waypoints = lap.clone();
    for _ in 1..laps {
        waypoints.extend(lap.iter().skip(1).copied());
    }
    let spec = ScenarioSpec {
        workspace: ws,
        anchors: corner_anchors(&ws),
        waypoints,
        speed: cfg.scenario.speed,
        ts: cfg.params.ts,
        sigma_o: cfg.params.sigma_o,
        events: Vec::new(),
    };
    let mut scenario = Scenario::generate(&spec, seed)?;
    scenario.truth.truncate(case.frames);
    scenario.frames.truncate(case.frames);
    if scenario.frames.len() < case.frames {
        return Err(CliError::Validation(format!(
            "bench case produced {} frames, wanted {}",
            scenario.frames.len(),
            case.frames
        )));
    }
    Ok(scenario)
}

/// Time every configured estimator on every case; repetition `k` uses seed
/// `cfg.seed + k`.
pub fn cmd_bench(cfg: &RunConfig) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for case in &cfg.bench.cases {
        let ladder = ResolutionLadder::new(
            Position::zeros(),
            case.extent,
            case.finest_resolution,
            case.levels,
        )?;
        for &estimator in &cfg.bench.estimators {
            let mut run_cfg = cfg.clone();
            run_cfg.estimator = estimator;
            run_cfg.workspace = Workspace::new(Position::zeros(), case.extent);
            let ladder = if estimator == Estimator::Viterbi {
                ResolutionLadder::new(Position::zeros(), case.extent, case.finest_resolution, 1)?
            } else {
                ladder.clone()
            };
            let mut total = 0.0;
            let mut cost = None;
            for rep in 0..cfg.bench.repetitions {
                let scenario = bench_scenario(case, &run_cfg, cfg.seed + rep as u64)?;
                run_cfg.seed = cfg.seed + rep as u64;
                let est = run_estimator(&run_cfg, &scenario, &ladder, &scenario.frames)?;
                total += est.wall_time_s;
                cost = est.cost;
            }
            rows.push(BenchRow {
                estimator,
                n: ladder.finest().cell_count() as u64,
                n1: ladder.coarsest().cell_count() as u64,
                r: ladder.len() as u64,
                t: case.frames as u64,
                repetitions: cfg.bench.repetitions,
                wall_time_s: total / cfg.bench.repetitions as f64,
                transitions: cost.map(|c| c.transitions),
                observations: cost.map(|c| c.observations),
                backpointer_cells: cost.map(|c| c.backpointer_cells),
                memory_cells: cost.map(|c| c.memory_cells),
            });
        }
    }
    Ok(rows)
}

pub fn write_bench(path: &Path, rows: &[BenchRow]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_bench_to(file, rows).map_err(|e| CliError::io(path, e))
}

pub fn write_bench_to<W: std::io::Write>(w: W, rows: &[BenchRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
    w.write_record([
        "estimator",
        "n",
        "n1",
        "r",
        "t",
        "repetitions",
        "wall_time_s",
        "transitions",
        "observations",
        "backpointer_cells",
        "memory_cells",
    ])?;
    for r in rows {
        w.write_record([
            r.estimator.name().to_string(),
            r.n.to_string(),
            r.n1.to_string(),
            r.r.to_string(),
            r.t.to_string(),
            r.repetitions.to_string(),
            io::num(r.wall_time_s),
            opt(r.transitions),
            opt(r.observations),
            opt(r.backpointer_cells),
            opt(r.memory_cells),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_of_flags() {
        let frames: Vec<MeasurementFrame> =
            (0..6).map(|k| MeasurementFrame::new(k as f64)).collect();
        let flags = [false, true, true, false, true, true];
        assert_eq!(
            flagged_segments(&frames, &flags),
            vec![[1.0, 2.0], [4.0, 5.0]]
        );
        assert!(flagged_segments(&frames, &[false; 6]).is_empty());
    }
}
