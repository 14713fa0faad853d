use std::collections::HashMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use eglass_core::bench::{prepare, ExperimentConfig, Prepared};
use eglass_core::exploration::{
    build_direction, eta_scale, evaluate_step, line_search_eta, BaseSolution, DirectionSummary, ExplorationParams,
    SolutionRecord,
};
use eglass_core::metrics::SpectraReport;
use eglass_core::{LatentMetricPair, Problem, Result, SignalTensor};
use serde::{Deserialize, Serialize};

/// Sliders may move up to this multiple of `eta_max`.
pub const ETA_CAP_FACTOR: f64 = 4.0;

/// Row-major grid with its shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<&SignalTensor> for Grid {
    fn from(x: &SignalTensor) -> Self {
        Self {
            shape: x.shape().to_vec(),
            values: x.values().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseView {
    pub z: Vec<f64>,
    pub x: Grid,
    pub measurement_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub latent_dim: usize,
    pub x_true: Grid,
    pub y: Grid,
    pub base_solution: BaseView,
    pub created_unix_s: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionRequest {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub k_top: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionView {
    pub direction_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub k_top: usize,
    pub removed_set: Vec<usize>,
    pub residual_correlations: Vec<f64>,
    pub rayleigh_y: f64,
    pub rayleigh_x: f64,
    pub eta_scale: f64,
    pub eta_max: f64,
    pub eta_cap: f64,
}

impl From<&DirectionSummary> for DirectionView {
    fn from(s: &DirectionSummary) -> Self {
        Self {
            direction_id: s.direction.id.clone(),
            k: s.direction.source_index,
            k_top: s.direction.k_top,
            removed_set: s.direction.removed_set.clone(),
            residual_correlations: s.direction.residual_correlations.clone(),
            rayleigh_y: s.direction.rayleigh_y,
            rayleigh_x: s.direction.rayleigh_x,
            eta_scale: s.eta_scale,
            eta_max: s.eta_max,
            eta_cap: ETA_CAP_FACTOR * s.eta_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub direction_id: String,
    pub eta: f64,
    pub x: Grid,
    pub measurement_residual: f64,
    pub perceptual_from_base: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub base: SolutionRecord,
    pub pinned: Vec<SolutionRecord>,
}

/// Why a step request was refused.
#[derive(Clone, Debug, PartialEq)]
pub enum StepRefusal {
    UnknownDirection(String),
    OutOfRange { eta: f64, cap: f64 },
}

pub struct Session {
    pub id: String,
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub x_true: SignalTensor,
    pub base: BaseSolution,
    pub metrics: LatentMetricPair,
    pub created_unix_s: u64,
    directions: HashMap<String, DirectionSummary>,
    pinned: Vec<SolutionRecord>,
}

impl Session {
    /// Inverts the configured problem and builds both metrics at the solution.
    pub fn create(id: String, config: ExperimentConfig) -> Result<Self> {
        let prepared = prepare(&config)?;
        Ok(Self::from_prepared(id, config, prepared))
    }

    pub fn from_prepared(id: String, config: ExperimentConfig, prepared: Prepared) -> Self {
        let created_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            id,
            config,
            problem: prepared.instance.problem,
            x_true: prepared.instance.x_true,
            base: prepared.base,
            metrics: prepared.metrics,
            created_unix_s,
            directions: HashMap::new(),
            pinned: Vec::new(),
        }
    }

    pub fn created(&self) -> SessionCreated {
        SessionCreated {
            session_id: self.id.clone(),
            latent_dim: self.problem.latent_dim(),
            x_true: Grid::from(&self.x_true),
            y: Grid {
                shape: self.problem.operator.measurement_shape(),
                values: self.problem.y.clone(),
            },
            base_solution: BaseView {
                z: self.base.z0.to_vec(),
                x: Grid::from(&self.base.x0),
                measurement_residual: self.base.residual,
            },
            created_unix_s: self.created_unix_s,
        }
    }

    pub fn spectra(&self) -> SpectraReport {
        SpectraReport::new(&self.metrics)
    }

    /// Params for a direction request layered over the session config.
    pub fn params(&self, req: &DirectionRequest) -> ExplorationParams {
        let base = &self.config.exploration;
        ExplorationParams {
            k: Some(req.k),
            k_top: req.k_top.or(base.k_top),
            tau: req.tau.unwrap_or(base.tau),
            ..base.clone()
        }
    }

    /// Builds, line-searches and caches a direction.
    pub fn add_direction(&mut self, req: &DirectionRequest) -> Result<DirectionView> {
        let params = self.params(req);
        let mut dir = build_direction(&self.metrics, &params)?;
        dir.id = format!("d{}", self.directions.len());
        let scale = eta_scale(self.metrics.eig_x.values()[dir.source_index - 1]);
        let eta_max = line_search_eta(
            &self.problem,
            &self.base.z0,
            &dir.d,
            params.feasibility_threshold,
            params.eta_upper * scale,
        )?;
        let summary = DirectionSummary {
            direction: dir,
            eta_scale: scale,
            eta_max,
        };
        let view = DirectionView::from(&summary);
        self.directions.insert(view.direction_id.clone(), summary);
        Ok(view)
    }

    pub fn direction(&self, id: &str) -> Option<&DirectionSummary> {
        self.directions.get(id)
    }

    fn checked(&self, direction_id: &str, eta: f64) -> std::result::Result<&DirectionSummary, StepRefusal> {
        let s = self
            .directions
            .get(direction_id)
            .ok_or_else(|| StepRefusal::UnknownDirection(direction_id.to_string()))?;
        let cap = ETA_CAP_FACTOR * s.eta_max;
        if !eta.is_finite() || eta.abs() > cap {
            return Err(StepRefusal::OutOfRange { eta, cap });
        }
        Ok(s)
    }

    fn record(&self, s: &DirectionSummary, eta: f64) -> Result<SolutionRecord> {
        let start = Instant::now();
        let step = evaluate_step(&self.problem, &self.base, &self.base.z0, &s.direction.d, eta)?;
        Ok(SolutionRecord::from_step(
            step,
            eta,
            &s.direction.id,
            self.config.exploration.feasibility_threshold,
            start.elapsed().as_secs_f64(),
        ))
    }

    /// Pure evaluation of `G(z0 + η d)`.
    pub fn step(&self, direction_id: &str, eta: f64) -> std::result::Result<Result<StepView>, StepRefusal> {
        let s = self.checked(direction_id, eta)?;
        Ok(self.record(s, eta).map(|r| StepView {
            direction_id: r.direction_id,
            eta,
            x: Grid::from(&r.x),
            measurement_residual: r.measurement_residual,
            perceptual_from_base: r.perceptual_from_base,
            feasible: r.feasible,
        }))
    }

    pub fn pin(&mut self, direction_id: &str, eta: f64) -> std::result::Result<Result<SolutionRecord>, StepRefusal> {
        let s = self.checked(direction_id, eta)?;
        let rec = match self.record(s, eta) {
            Ok(r) => r,
            Err(e) => return Ok(Err(e)),
        };
        self.pinned.push(rec.clone());
        Ok(Ok(rec))
    }

    pub fn base_record(&self) -> SolutionRecord {
        SolutionRecord {
            z: self.base.z0.clone(),
            x: self.base.x0.clone(),
            measurement_residual: self.base.residual,
            perceptual_from_base: 0.0,
            eta: 0.0,
            direction_id: "base".into(),
            feasible: self.base.residual <= self.config.exploration.feasibility_threshold,
            elapsed_s: 0.0,
        }
    }

    pub fn gallery(&self) -> Gallery {
        Gallery {
            base: self.base_record(),
            pinned: self.pinned.clone(),
        }
    }

    /// Base record followed by the pinned records, one JSON object per line.
    pub fn export_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in std::iter::once(&self.base_record()).chain(&self.pinned) {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}
