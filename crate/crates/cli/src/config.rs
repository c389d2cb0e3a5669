//! JSON run configuration. Every field has a default, so `{}` is a valid
//! config: an 8 m × 8 m workspace, a 0.1 m finest grid with 4 levels, three
//! corner anchors and one lap of a rectangular walk.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use quadhmm::grid::{ResolutionLadder, Workspace};
use quadhmm::models::{Anchor, HmmParams};
use quadhmm::preprocess::PreprocessConfig;
use quadhmm::sim::{corner_anchors, loop_waypoints, EventWindow, ScenarioSpec};
use quadhmm::Position;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Conventional Viterbi on a single grid.
    Viterbi,
    /// Coarse-to-fine Viterbi over the resolution ladder.
    #[default]
    Adaptive,
    Trilateration,
    Ekf,
    /// EKF followed by a Rauch-Tung-Striebel smoother.
    Erts,
    /// Bootstrap particle filter.
    Pf,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Viterbi => "viterbi",
            Estimator::Adaptive => "adaptive",
            Estimator::Trilateration => "trilateration",
            Estimator::Ekf => "ekf",
            Estimator::Erts => "erts",
            Estimator::Pf => "pf",
        }
    }

    pub fn is_grid(self) -> bool {
        matches!(self, Estimator::Viterbi | Estimator::Adaptive)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        <Estimator as clap::ValueEnum>::from_str(s, true)
            .map_err(|_| CliError::invalid("estimator", format!("unknown estimator `{s}`")))
    }
}

/// Grid geometry. `levels == 1` is a single grid at `finest_resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub finest_resolution: f64,
    pub levels: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            finest_resolution: 0.1,
            levels: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub enabled: bool,
    pub threshold: f64,
    pub window: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        PreprocessSection {
            enabled: false,
            threshold: d.threshold,
            window: d.window,
        }
    }
}

impl PreprocessSection {
    pub fn to_config(self) -> PreprocessConfig {
        PreprocessConfig {
            threshold: self.threshold,
            window: self.window,
        }
    }
}

/// Synthetic scenario used by `simulate` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Defaults to three anchors at the workspace corners.
    pub anchors: Option<Vec<Anchor>>,
    /// Defaults to a rectangle inset by `margin`.
    pub waypoints: Option<Vec<[f64; 2]>>,
    pub margin: f64,
    /// Number of times the waypoint path is walked.
    pub laps: usize,
    pub speed: f64,
    /// Keep only the first `frames` samples.
    pub frames: Option<usize>,
    pub events: Vec<EventWindow>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            anchors: None,
            waypoints: None,
            margin: 1.0,
            laps: 1,
            speed: 0.5,
            frames: None,
            events: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfSection {
    /// Relative error of the initial position: `init = (1 + bias) · truth(0)`.
    pub init_bias: f64,
    pub position_std: f64,
    pub velocity_std: f64,
}

impl Default for EkfSection {
    fn default() -> Self {
        EkfSection {
            init_bias: 0.1,
            position_std: 0.5,
            velocity_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfSection {
    pub particles: usize,
}

impl Default for PfSection {
    fn default() -> Self {
        PfSection { particles: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCase {
    pub extent: (f64, f64),
    pub finest_resolution: f64,
    pub levels: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repetitions: usize,
    pub estimators: Vec<Estimator>,
    pub cases: Vec<BenchCase>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            repetitions: 10,
            estimators: vec![Estimator::Viterbi, Estimator::Adaptive],
            cases: vec![BenchCase {
                extent: (8.0, 8.0),
                finest_resolution: 0.1,
                levels: 4,
                frames: 1215,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workspace: Workspace,
    pub grid: GridConfig,
    pub params: HmmParams,
    pub estimator: Estimator,
    pub preprocess: PreprocessSection,
    pub seed: u64,
    pub scenario: ScenarioSection,
    pub ekf: EkfSection,
    pub pf: PfSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workspace: Workspace::new(Position::zeros(), (8.0, 8.0)),
            grid: GridConfig::default(),
            params: HmmParams::default(),
            estimator: Estimator::default(),
            preprocess: PreprocessSection::default(),
            seed: 0,
            scenario: ScenarioSection::default(),
            ekf: EkfSection::default(),
            pf: PfSection::default(),
            bench: BenchSection::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::invalid(field, format!("must be > 0, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    /// Read and validate a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::parse(p, e.line() as u64, e.to_string()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.params.validate().map_err(|e| match e {
            quadhmm::Error::InvalidParameter { name, reason } => {
                CliError::invalid(&format!("params.{name}"), reason)
            }
            other => CliError::Core(other),
        })?;
        positive("workspace.extent[0]", self.workspace.extent.0)?;
        positive("workspace.extent[1]", self.workspace.extent.1)?;
        positive("grid.finest_resolution", self.grid.finest_resolution)?;
        if self.grid.levels == 0 {
            return Err(CliError::invalid("grid.levels", "must be at least 1"));
        }
        if self.estimator == Estimator::Viterbi && self.grid.levels > 1 {
            return Err(CliError::invalid(
                "grid.levels",
                format!("the viterbi estimator decodes a single grid; got {} levels (set 1 or use adaptive)", self.grid.levels),
            ));
        }
        self.ladder()?;
        if self.preprocess.enabled {
            positive("preprocess.threshold", self.preprocess.threshold)?;
            if self.preprocess.window == 0 {
                return Err(CliError::invalid("preprocess.window", "must be at least 1"));
            }
        }
        positive("scenario.speed", self.scenario.speed)?;
        if self.scenario.laps == 0 {
            return Err(CliError::invalid("scenario.laps", "must be at least 1"));
        }
        if self.scenario.margin.is_nan() || self.scenario.margin < 0.0 {
            return Err(CliError::invalid("scenario.margin", "must be >= 0"));
        }
        for (i, e) in self.scenario.events.iter().enumerate() {
            if e.start.is_nan() || e.end.is_nan() || e.end < e.start {
                return Err(CliError::invalid(
                    &format!("scenario.events[{i}]"),
                    "end must be >= start",
                ));
            }
        }
        if let Some(anchors) = &self.scenario.anchors {
            let mut ids: Vec<u32> = anchors.iter().map(|a| a.id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(CliError::invalid("scenario.anchors", "duplicate anchor id"));
            }
            if anchors.is_empty() {
                return Err(CliError::invalid("scenario.anchors", "must not be empty"));
            }
        }
        if self.pf.particles == 0 {
            return Err(CliError::invalid("pf.particles", "must be at least 1"));
        }
        positive("ekf.position_std", self.ekf.position_std)?;
        positive("ekf.velocity_std", self.ekf.velocity_std)?;
        if self.bench.repetitions == 0 {
            return Err(CliError::invalid("bench.repetitions", "must be at least 1"));
        }
        for (i, case) in self.bench.cases.iter().enumerate() {
            if case.frames == 0 {
                return Err(CliError::invalid(
                    &format!("bench.cases[{i}].frames"),
                    "must be at least 1",
                ));
            }
            ResolutionLadder::new(
                Position::zeros(),
                case.extent,
                case.finest_resolution,
                case.levels,
            )
            .map_err(|e| CliError::invalid(&format!("bench.cases[{i}]"), e))?;
        }
        Ok(())
    }

    pub fn ladder(&self) -> CliResult<ResolutionLadder> {
        self.ladder_for(&self.workspace)
    }

    pub fn ladder_for(&self, ws: &Workspace) -> CliResult<ResolutionLadder> {
        ResolutionLadder::new(
            ws.origin,
            ws.extent,
            self.grid.finest_resolution,
            self.grid.levels,
        )
        .map_err(|e| CliError::invalid("grid", e))
    }

    pub fn anchors(&self) -> Vec<Anchor> {
        self.scenario
            .anchors
            .clone()
            .unwrap_or_else(|| corner_anchors(&self.workspace))
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let base: Vec<Position> = match &self.scenario.waypoints {
            Some(w) => w.iter().map(|p| Position::new(p[0], p[1])).collect(),
            None => loop_waypoints(&self.workspace, self.scenario.margin),
        };
        let mut waypoints = base.clone();
        for _ in 1..self.scenario.laps {
            let skip = usize::from(base.first() == base.last());
            waypoints.extend(base.iter().skip(skip).copied());
        }
        ScenarioSpec {
            workspace: self.workspace,
            anchors: self.anchors(),
            waypoints,
            speed: self.scenario.speed,
            ts: self.params.ts,
            sigma_o: self.params.sigma_o,
            events: self.scenario.events.clone(),
        }
    }

    /// Flat key-value view of the parameters, for reports.
    pub fn flat_params(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        let mut put = |k: &str, v: serde_json::Value| {
            m.insert(k.to_string(), v);
        };
        put("sigma_x", self.params.sigma_x.into());
        put("sigma_o", self.params.sigma_o.into());
        put("ts", self.params.ts.into());
        put("vc", self.params.vc.into());
        put("finest_resolution", self.grid.finest_resolution.into());
        put("levels", self.grid.levels.into());
        put("seed", self.seed.into());
        put("preprocess", self.preprocess.enabled.into());
        put("threshold", self.preprocess.threshold.into());
        put("window", self.preprocess.window.into());
        put("particles", self.pf.particles.into());
        put("ekf_init_bias", self.ekf.init_bias.into());
        m
    }
}
