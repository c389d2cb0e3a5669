//! Scenario and result files.
//!
//! A scenario directory holds `anchors.csv` (`id,x,y`), `ranges.csv`
//! (`t,anchor_id,range`, dropped samples absent), an optional `truth.csv`
//! (`t,x,y`) and an optional `scenario.json` (workspace, sampling interval,
//! event windows, seed). Floats are written in their shortest round-trip
//! decimal form, so reading a file back reproduces the exact values.

use std::fs::File;
use std::path::{Path, PathBuf};

use quadhmm::grid::Workspace;
use quadhmm::models::{Anchor, MeasurementFrame};
use quadhmm::sim::{EventWindow, Scenario, TruthSample};
use quadhmm::Position;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Time stamps closer than this belong to the same frame, s.
pub const FRAME_TOLERANCE: f64 = 1e-6;

pub const ANCHORS_FILE: &str = "anchors.csv";
pub const RANGES_FILE: &str = "ranges.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const META_FILE: &str = "scenario.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.json";

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn open(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn create(path: &Path) -> CliResult<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::parse(path, line, format!("{kind:?}")),
    }
}

fn write_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        kind => CliError::parse(path, 0, format!("{kind:?}")),
    }
}

/// Rows of a CSV file as named float/integer columns, with line numbers.
struct Table {
    path: PathBuf,
    columns: Vec<usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, required: &[&str]) -> CliResult<Table> {
        let mut rdr = open(path)?;
        let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
        let mut columns = Vec::with_capacity(required.len());
        for name in required {
            let idx = headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| CliError::parse(path, 1, format!("missing column `{name}`")))?;
            columns.push(idx);
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn field<T: std::str::FromStr>(&self, row: usize, col: usize) -> CliResult<T> {
        let (line, rec) = &self.rows[row];
        let raw = rec.get(self.columns[col]).unwrap_or("");
        raw.parse().map_err(|_| {
            CliError::parse(
                &self.path,
                *line,
                format!("cannot parse `{raw}` in column {}", col + 1),
            )
        })
    }

    fn finite(&self, row: usize, col: usize) -> CliResult<f64> {
        let v: f64 = self.field(row, col)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CliError::parse(
                &self.path,
                self.rows[row].0,
                format!("non-finite value {v}"),
            ))
        }
    }

    fn line(&self, row: usize) -> u64 {
        self.rows[row].0
    }
}

pub fn read_anchors(path: &Path) -> CliResult<Vec<Anchor>> {
    let t = Table::read(path, &["id", "x", "y"])?;
    let mut out: Vec<Anchor> = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        let a = Anchor::new(t.field(i, 0)?, t.finite(i, 1)?, t.finite(i, 2)?);
        if out.iter().any(|b| b.id == a.id) {
            return Err(CliError::parse(
                path,
                t.line(i),
                format!("duplicate anchor id {}", a.id),
            ));
        }
        out.push(a);
    }
    if out.is_empty() {
        return Err(CliError::parse(path, 1, "no anchors"));
    }
    Ok(out)
}

pub fn write_anchors(path: &Path, anchors: &[Anchor]) -> CliResult<()> {
    let mut w = create(path)?;
    let e = |e| write_err(path, e);
    w.write_record(["id", "x", "y"]).map_err(e)?;
    for a in anchors {
        w.write_record([a.id.to_string(), num(a.position.x), num(a.position.y)])
            .map_err(e)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_truth(path: &Path) -> CliResult<Vec<TruthSample>> {
    let t = Table::read(path, &["t", "x", "y"])?;
    (0..t.rows.len())
        .map(|i| {
            Ok(TruthSample {
                time: t.finite(i, 0)?,
                position: Position::new(t.finite(i, 1)?, t.finite(i, 2)?),
            })
        })
        .collect()
}

pub fn write_truth(path: &Path, truth: &[TruthSample]) -> CliResult<()> {
    let mut w = create(path)?;
    let e = |e| write_err(path, e);
    w.write_record(["t", "x", "y"]).map_err(e)?;
    for s in truth {
        w.write_record([num(s.time), num(s.position.x), num(s.position.y)])
            .map_err(e)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One range row: `(t, anchor_id, range, line)`.
pub type RangeRow = (f64, u32, f64, u64);

pub fn read_range_rows(path: &Path) -> CliResult<Vec<RangeRow>> {
    let t = Table::read(path, &["t", "anchor_id", "range"])?;
    (0..t.rows.len())
        .map(|i| Ok((t.finite(i, 0)?, t.field(i, 1)?, t.finite(i, 2)?, t.line(i))))
        .collect()
}

pub fn write_ranges(path: &Path, frames: &[MeasurementFrame]) -> CliResult<()> {
    let mut w = create(path)?;
    let e = |e| write_err(path, e);
    w.write_record(["t", "anchor_id", "range"]).map_err(e)?;
    for f in frames {
        for (id, r) in &f.ranges {
            w.write_record([num(f.time), id.to_string(), num(*r)])
                .map_err(e)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Group range rows into frames. Time stamps within [`FRAME_TOLERANCE`] of
/// a group's first stamp share a frame. `extra_times` (e.g. truth stamps)
/// add frames even when no range was logged at that instant.
pub fn group_frames(
    path: &Path,
    rows: &[RangeRow],
    extra_times: &[f64],
) -> CliResult<Vec<MeasurementFrame>> {
    let mut stamps: Vec<(f64, Option<usize>)> = extra_times.iter().map(|&t| (t, None)).collect();
    stamps.extend(rows.iter().enumerate().map(|(i, r)| (r.0, Some(i))));
    stamps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut frames: Vec<MeasurementFrame> = Vec::new();
    for (t, row) in stamps {
        let same = frames.last().is_some_and(|f| t - f.time <= FRAME_TOLERANCE);
        if !same {
            frames.push(MeasurementFrame::new(t));
        }
        if let Some(i) = row {
            let (_, id, range, line) = rows[i];
            let frame = frames.last_mut().unwrap();
            if frame.ranges.insert(id, range).is_some() {
                return Err(CliError::parse(
                    path,
                    line,
                    format!(
                        "second range for anchor {id} in the frame at t={}",
                        frame.time
                    ),
                ));
            }
        }
    }
    Ok(frames)
}

/// `scenario.json`: what the CSV files do not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub workspace: Workspace,
    pub ts: f64,
    #[serde(default)]
    pub events: Vec<EventWindow>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line() as u64, e.to_string()))
}

pub fn write_scenario(dir: &Path, scenario: &Scenario, seed: Option<u64>) -> CliResult<()> {
    ensure_dir(dir)?;
    write_anchors(&dir.join(ANCHORS_FILE), &scenario.anchors)?;
    write_ranges(&dir.join(RANGES_FILE), &scenario.frames)?;
    write_truth(&dir.join(TRUTH_FILE), &scenario.truth)?;
    let meta = ScenarioMeta {
        workspace: scenario.workspace,
        ts: scenario.ts,
        events: scenario.events.clone(),
        seed,
    };
    write_json(&dir.join(META_FILE), &meta)
}

/// A scenario read from disk. `truth` is empty when `truth.csv` is absent;
/// `meta` is `None` when `scenario.json` is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub anchors: Vec<Anchor>,
    pub frames: Vec<MeasurementFrame>,
    pub truth: Vec<TruthSample>,
    pub meta: Option<ScenarioMeta>,
}

impl LoadedScenario {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let anchors = read_anchors(&dir.join(ANCHORS_FILE))?;
        let truth_path = dir.join(TRUTH_FILE);
        let truth = if truth_path.exists() {
            read_truth(&truth_path)?
        } else {
            Vec::new()
        };
        let ranges_path = dir.join(RANGES_FILE);
        let rows = read_range_rows(&ranges_path)?;
        for &(_, id, _, line) in &rows {
            if !anchors.iter().any(|a| a.id == id) {
                return Err(CliError::parse(
                    &ranges_path,
                    line,
                    format!("unknown anchor id {id}"),
                ));
            }
        }
        let times: Vec<f64> = truth.iter().map(|s| s.time).collect();
        let frames = group_frames(&ranges_path, &rows, &times)?;
        if frames.is_empty() {
            return Err(CliError::parse(&ranges_path, 1, "no ranges"));
        }
        let meta_path = dir.join(META_FILE);
        let meta = if meta_path.exists() {
            Some(read_json(&meta_path)?)
        } else {
            None
        };
        Ok(LoadedScenario {
            anchors,
            frames,
            truth,
            meta,
        })
    }

    /// Full scenario, using `fallback` for the workspace and sampling
    /// interval when `scenario.json` is absent.
    pub fn into_scenario(self, fallback: &Workspace, fallback_ts: f64) -> Scenario {
        let (workspace, ts, events) = match self.meta {
            Some(m) => (m.workspace, m.ts, m.events),
            None => (*fallback, fallback_ts, Vec::new()),
        };
        Scenario {
            workspace,
            ts,
            anchors: self.anchors,
            truth: self.truth,
            frames: self.frames,
            events,
        }
    }
}

/// One output row: grid estimators fill `cell` and `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    pub position: Position,
    pub cell: Option<usize>,
    pub level: Option<usize>,
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> CliResult<()> {
    let mut w = create(path)?;
    let e = |e| write_err(path, e);
    w.write_record(["t", "x", "y", "cell_index", "level"])
        .map_err(e)?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            num(r.time),
            num(r.position.x),
            num(r.position.y),
            opt(r.cell),
            opt(r.level),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Time-stamped positions from any CSV with `t,x,y` columns (trajectory or
/// truth files).
pub fn read_positions(path: &Path) -> CliResult<Vec<TruthSample>> {
    read_truth(path)
}

/// Frames with no ranges, by time.
pub fn empty_frame_times(frames: &[MeasurementFrame]) -> Vec<f64> {
    frames
        .iter()
        .filter(|f| f.ranges.is_empty())
        .map(|f| f.time)
        .collect()
}
