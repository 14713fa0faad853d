//! Construction of measurement-null, perceptually active latent directions
//! and enumeration of alternative solutions along them.
//!
//! Eigen-indices in the public types are 1-based (`K = 1` is the top
//! perceptual eigenvector); vector positions are 0-based.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{LatentVector, SignalTensor};
use crate::linalg::{dot, project_out, rayleigh, Vector};
use crate::metrics::{csv_err, CouplingMatrix, LatentMetricPair};
use crate::problem::Problem;

pub const DEFAULT_FEASIBILITY: f64 = 1e-2;

/// Spectral floor, relative to `λ_1`, below which measurement eigenvectors
/// are not re-examined by the correlation loop.
pub const SPECTRAL_FLOOR: f64 = 1e-9;

const LINE_SEARCH_START: f64 = 1e-6;
const LINE_SEARCH_RTOL: f64 = 1e-3;

fn default_tau() -> f64 {
    0.1
}
fn default_energy_cap() -> f64 {
    0.99
}
fn default_eta_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}
fn default_eta_upper() -> f64 {
    8.0
}
fn default_feasibility() -> f64 {
    DEFAULT_FEASIBILITY
}
fn default_outer() -> usize {
    10
}

/// Step sizes in `eta_grid` and `eta_upper` are multiples of `1/√ω_K`,
/// the natural perceptual length along `v^K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationParams {
    /// Source perceptual eigenvector; chosen from the coupling matrix when absent.
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Initial removal block; chosen by the energy rule when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_top: Option<usize>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_energy_cap")]
    pub energy_cap: f64,
    #[serde(default = "default_eta_grid")]
    pub eta_grid: Vec<f64>,
    #[serde(default = "default_eta_upper")]
    pub eta_upper: f64,
    #[serde(default = "default_feasibility")]
    pub feasibility_threshold: f64,
    #[serde(default = "default_outer")]
    pub max_outer_iters: usize,
    /// Rebuild the metrics at the latest solution before each new direction.
    #[serde(default)]
    pub recenter: bool,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        Self {
            k: None,
            k_top: None,
            tau: default_tau(),
            energy_cap: default_energy_cap(),
            eta_grid: default_eta_grid(),
            eta_upper: default_eta_upper(),
            feasibility_threshold: default_feasibility(),
            max_outer_iters: default_outer(),
            recenter: false,
        }
    }
}

impl ExplorationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidSpec(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(self.energy_cap > 0.0 && self.energy_cap <= 1.0) {
            return Err(Error::InvalidSpec(format!("energy_cap {} outside (0, 1]", self.energy_cap)));
        }
        if self.eta_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::InvalidSpec("eta_grid entries must be finite and nonnegative".into()));
        }
        if !(self.eta_upper > 0.0) || !self.eta_upper.is_finite() {
            return Err(Error::InvalidSpec("eta_upper must be positive".into()));
        }
        if !(self.feasibility_threshold >= 0.0) {
            return Err(Error::InvalidSpec("feasibility_threshold must be nonnegative".into()));
        }
        if self.k == Some(0) {
            return Err(Error::InvalidSpec("K is 1-based".into()));
        }
        Ok(())
    }
}

/// Smallest `k` whose cumulative energy reaches `rho`, capped at `n/2`.
pub fn energy_k_top(eigenvalues: &[f64], rho: f64) -> usize {
    let n = eigenvalues.len();
    let cap = n / 2;
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= rho * total {
            return (i + 1).min(cap);
        }
    }
    cap
}

/// Smallest 1-based `K` with `max_{j ≤ k_top} |C[j][K]| ≤ tau`, else `k_top + 1`.
pub fn select_k(coupling: &CouplingMatrix, k_top: usize, tau: f64) -> usize {
    let n = coupling.dim();
    (0..n)
        .find(|&k| (0..k_top.min(n)).all(|j| coupling.get(j, k).abs() <= tau))
        .map_or(k_top + 1, |k| k + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationDirection {
    pub id: String,
    pub d: Vector,
    /// `K`, 1-based.
    pub source_index: usize,
    pub k_top: usize,
    /// Removed measurement eigenvectors, 1-based.
    pub removed_set: Vec<usize>,
    /// `|d · u^j|` for every `j` (position `j - 1`).
    pub residual_correlations: Vec<f64>,
    pub rayleigh_y: f64,
    pub rayleigh_x: f64,
}

impl ExplorationDirection {
    pub fn max_removed_correlation(&self) -> f64 {
        self.removed_set
            .iter()
            .map(|&j| self.residual_correlations[j - 1])
            .fold(0.0, f64::max)
    }
}

pub fn resolved_k_top(metrics: &LatentMetricPair, params: &ExplorationParams) -> Result<usize> {
    let n = metrics.dim();
    let k_top = params
        .k_top
        .unwrap_or_else(|| energy_k_top(metrics.eig_y.values(), params.energy_cap));
    if k_top >= n {
        return Err(Error::InvalidSpec(format!("k_top {k_top} must be below latent dimension {n}")));
    }
    Ok(k_top)
}

pub fn resolved_k(metrics: &LatentMetricPair, params: &ExplorationParams) -> Result<usize> {
    let k_top = resolved_k_top(metrics, params)?;
    let k = match params.k {
        Some(k) => k,
        None => select_k(&metrics.coupling(), k_top, params.tau),
    };
    if k == 0 || k > metrics.dim() {
        return Err(Error::InvalidSpec(format!("K = {k} outside 1..={}", metrics.dim())));
    }
    Ok(k)
}

/// Projects `v^K` off the top `k_top` measurement eigenvectors, then keeps
/// enlarging the removed top block while any examined correlation exceeds
/// `tau`.
pub fn build_direction(metrics: &LatentMetricPair, params: &ExplorationParams) -> Result<ExplorationDirection> {
    params.validate()?;
    let n = metrics.dim();
    let k_top = resolved_k_top(metrics, params)?;
    let k = resolved_k(metrics, params)?;
    let source = metrics.eig_x.vector(k - 1);
    let lambda = metrics.eig_y.values();
    let floor = SPECTRAL_FLOOR * lambda.first().copied().unwrap_or(0.0);
    let examined = k_top.max(n / 2);
    let mut block = k_top;
    let mut d = project_out(&source, &metrics.eig_y, &(0..block).collect::<Vec<_>>())?;
    for _ in 0..params.max_outer_iters {
        let worst = (block..examined)
            .filter(|&j| lambda[j] > floor)
            .filter(|&j| dot(&d, &metrics.eig_y.vectors().column(j)).abs() > params.tau)
            .max();
        match worst {
            None => break,
            Some(j) => {
                block = j + 1;
                d = project_out(&source, &metrics.eig_y, &(0..block).collect::<Vec<_>>())?;
            }
        }
    }
    let u = metrics.eig_y.vectors();
    let residual_correlations = (0..n).map(|j| dot(&d, &u.column(j)).abs()).collect();
    Ok(ExplorationDirection {
        id: String::new(),
        rayleigh_y: rayleigh(&metrics.h_y, &d)?,
        rayleigh_x: rayleigh(&metrics.h_x, &d)?,
        d,
        source_index: k,
        k_top,
        removed_set: (1..=block).collect(),
        residual_correlations,
    })
}

/// Largest `η ∈ (0, eta_upper]` with `MSE(y, A G(z0 + η d)) ≤ threshold`,
/// found by doubling from `1e-6` and bisecting to relative precision `1e-3`.
pub fn line_search_eta(problem: &Problem, z0: &[f64], d: &[f64], threshold: f64, eta_upper: f64) -> Result<f64> {
    let r = |eta: f64| -> Result<f64> {
        let z: Vec<f64> = z0.iter().zip(d).map(|(a, b)| a + eta * b).collect();
        problem.residual(&z)
    };
    let mut lo = LINE_SEARCH_START.min(eta_upper);
    if r(lo)? > threshold {
        return Ok(0.0);
    }
    let mut hi;
    loop {
        let next = (2.0 * lo).min(eta_upper);
        if next <= lo {
            return Ok(lo);
        }
        if r(next)? > threshold {
            hi = next;
            break;
        }
        lo = next;
    }
    while hi - lo > LINE_SEARCH_RTOL * lo {
        let mid = 0.5 * (lo + hi);
        if r(mid)? <= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Base solution with its cached signal and features.
#[derive(Clone, Debug)]
pub struct BaseSolution {
    pub z0: LatentVector,
    pub x0: SignalTensor,
    pub features: Vec<f64>,
    pub residual: f64,
}

impl BaseSolution {
    pub fn new(problem: &Problem, z0: LatentVector) -> Result<Self> {
        let x0 = problem.generator.generate(&z0)?;
        let features = problem.features.features(&x0)?;
        let residual = problem.residual_of_signal(x0.values())?;
        Ok(Self {
            z0,
            x0,
            features,
            residual,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepEvaluation {
    pub z: LatentVector,
    pub x: SignalTensor,
    pub measurement_residual: f64,
    pub perceptual_from_base: f64,
}

/// `x̂ = G(origin + η d)` with residual against `y` and perceptual distance
/// from the base signal.
pub fn evaluate_step(problem: &Problem, base: &BaseSolution, origin: &[f64], d: &[f64], eta: f64) -> Result<StepEvaluation> {
    let z = Vector::new(origin.to_vec())?.offset(eta, d)?;
    let x = problem.generator.generate(&z)?;
    let measurement_residual = problem.residual_of_signal(x.values())?;
    let perceptual_from_base = problem.perceptual_to_features(x.values(), &base.features)?;
    Ok(StepEvaluation {
        z,
        x,
        measurement_residual,
        perceptual_from_base,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub z: LatentVector,
    pub x: SignalTensor,
    pub measurement_residual: f64,
    pub perceptual_from_base: f64,
    pub eta: f64,
    pub direction_id: String,
    pub feasible: bool,
    pub elapsed_s: f64,
}

impl SolutionRecord {
    pub fn from_step(step: StepEvaluation, eta: f64, direction_id: &str, threshold: f64, elapsed_s: f64) -> Self {
        Self {
            feasible: step.measurement_residual <= threshold,
            z: step.z,
            x: step.x,
            measurement_residual: step.measurement_residual,
            perceptual_from_base: step.perceptual_from_base,
            eta,
            direction_id: direction_id.to_string(),
            elapsed_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub direction: ExplorationDirection,
    /// `1/√ω_K`.
    pub eta_scale: f64,
    pub eta_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedDirection {
    pub source_index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreOutcome {
    pub records: Vec<SolutionRecord>,
    pub directions: Vec<DirectionSummary>,
    pub skipped: Vec<SkippedDirection>,
    pub infeasible_candidates: usize,
    /// Set when fewer feasible records than requested were found.
    pub diagnostic: Option<String>,
    pub metrics_seconds: f64,
    pub total_seconds: f64,
}

impl ExploreOutcome {
    pub fn is_complete(&self, requested: usize) -> bool {
        self.records.len() >= requested
    }

    pub fn write_solutions_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Columns: `direction_id, K, eta, residual, perceptual, feasible, elapsed_s`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["direction_id", "K", "eta", "residual", "perceptual", "feasible", "elapsed_s"])
            .map_err(csv_err)?;
        for rec in &self.records {
            let k = self
                .directions
                .iter()
                .find(|s| s.direction.id == rec.direction_id)
                .map_or(0, |s| s.direction.source_index);
            out.write_record([
                rec.direction_id.clone(),
                k.to_string(),
                rec.eta.to_string(),
                rec.measurement_residual.to_string(),
                rec.perceptual_from_base.to_string(),
                rec.feasible.to_string(),
                rec.elapsed_s.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Natural step length `1/√ω` for perceptual eigenvalue `ω` (1 when `ω ≤ 0`).
pub fn eta_scale(omega: f64) -> f64 {
    if omega > 0.0 {
        1.0 / omega.sqrt()
    } else {
        1.0
    }
}

/// Directions tried from source `K`: `K, K−1, …, 1, K+1, …, n`.
pub fn direction_order(k: usize, n: usize) -> Vec<usize> {
    (1..=k).rev().chain(k + 1..=n).collect()
}

/// Computes the metrics once at `z0` and enumerates feasible records.
pub fn explore(problem: &Problem, z0: &LatentVector, params: &ExplorationParams, n_solutions: usize) -> Result<ExploreOutcome> {
    let start = Instant::now();
    let base = BaseSolution::new(problem, z0.clone())?;
    if n_solutions == 0 {
        params.validate()?;
        return Ok(empty_outcome(start));
    }
    let metrics = problem.metrics(z0)?;
    explore_with_metrics(problem, &base, metrics, params, n_solutions, start)
}

fn empty_outcome(start: Instant) -> ExploreOutcome {
    ExploreOutcome {
        records: vec![],
        directions: vec![],
        skipped: vec![],
        infeasible_candidates: 0,
        diagnostic: None,
        metrics_seconds: 0.0,
        total_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Enumeration with precomputed metrics. Elapsed times are measured from
/// `start`; each record carries the time since the previous record.
pub fn explore_with_metrics(
    problem: &Problem,
    base: &BaseSolution,
    mut metrics: LatentMetricPair,
    params: &ExplorationParams,
    n_solutions: usize,
    start: Instant,
) -> Result<ExploreOutcome> {
    params.validate()?;
    let mut out = empty_outcome(start);
    out.metrics_seconds = start.elapsed().as_secs_f64();
    if n_solutions == 0 {
        return Ok(out);
    }
    let n = metrics.dim();
    let k = resolved_k(&metrics, params)?;
    let mut origin = base.z0.clone();
    let mut last = start;
    'dirs: for kk in direction_order(k, n) {
        let p = ExplorationParams {
            k: Some(kk),
            ..params.clone()
        };
        let mut dir = match build_direction(&metrics, &p) {
            Ok(d) => d,
            Err(e @ Error::Collapse { .. }) => {
                out.skipped.push(SkippedDirection {
                    source_index: kk,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        dir.id = format!("d{}", out.directions.len());
        let scale = eta_scale(metrics.eig_x.values()[kk - 1]);
        let eta_max = line_search_eta(problem, &origin, &dir.d, params.feasibility_threshold, params.eta_upper * scale)?;
        let mut signed = Vec::new();
        for g in &params.eta_grid {
            let e = g * scale;
            if e > eta_max {
                continue;
            }
            signed.push(e);
            if e > 0.0 {
                signed.push(-e);
            }
        }
        let mut emitted = false;
        for eta in signed {
            let step = evaluate_step(problem, base, &origin, &dir.d, eta)?;
            if step.measurement_residual > params.feasibility_threshold {
                out.infeasible_candidates += 1;
                continue;
            }
            let now = Instant::now();
            let rec = SolutionRecord::from_step(step, eta, &dir.id, params.feasibility_threshold, (now - last).as_secs_f64());
            last = now;
            out.records.push(rec);
            emitted = true;
            if out.records.len() == n_solutions {
                out.directions.push(DirectionSummary {
                    direction: dir,
                    eta_scale: scale,
                    eta_max,
                });
                break 'dirs;
            }
        }
        out.directions.push(DirectionSummary {
            direction: dir,
            eta_scale: scale,
            eta_max,
        });
        if params.recenter && emitted {
            origin = out.records.last().expect("emitted").z.clone();
            metrics = problem.metrics(&origin)?;
        }
    }
    if out.records.len() < n_solutions {
        out.diagnostic = Some(format!(
            "found {} of {} feasible solutions ({} directions collapsed, {} infeasible candidates)",
            out.records.len(),
            n_solutions,
            out.skipped.len(),
            out.infeasible_candidates
        ));
    }
    out.total_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}
