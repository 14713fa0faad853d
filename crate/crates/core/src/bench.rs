//! Desk-scale experiment harness: presets, timing against the multi-restart
//! baseline, correlation tables and the raw-versus-projected residual
//! contrast.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::{
    build_direction, eta_scale, evaluate_step, explore_with_metrics, resolved_k, BaseSolution,
    ExplorationDirection, ExplorationParams, ExploreOutcome,
};
use crate::generator::{Activation, Generator, GeneratorKind, GeneratorSpec, LatentVector, SignalTensor, StructureSpec};
use crate::inversion::{invert, multi_restart_invert, InversionConfig, InversionTrace};
use crate::linalg::dot;
use crate::metrics::{csv_err, LatentMetricPair};
use crate::operator::{MeasurementVector, OperatorSpec};
use crate::perceptual::{feature_distance, FeatureExtractor, FeatureExtractorSpec, Nonlinearity};
use crate::problem::Problem;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sr,
    Ip,
    Cs,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Sr, Preset::Ip, Preset::Cs];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Sr => "sr",
            Preset::Ip => "ip",
            Preset::Cs => "cs",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Preset::Sr),
            "ip" => Ok(Preset::Ip),
            "cs" => Ok(Preset::Cs),
            other => Err(Error::InvalidSpec(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// Seed of the ground-truth latent `z* ~ N(0, I)`.
    pub truth_seed: u64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub preset: Preset,
    pub generator: GeneratorSpec,
    pub operator: OperatorSpec,
    pub features: FeatureExtractorSpec,
    pub problem: ProblemSpec,
    pub inversion: InversionConfig,
    pub exploration: ExplorationParams,
    pub n_solutions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn preset_generator() -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::Mlp,
        latent_dim: 16,
        signal_shape: [32, 32],
        hidden_widths: vec![64, 256],
        activation: Some(Activation::Tanh),
        weight_seed: 6,
        weight_scale: 1.0,
        structure: Some(StructureSpec {
            radius: 0.15,
            cross_band: 0.1,
            smooth_width: 0.06,
        }),
    }
}

fn preset_features() -> FeatureExtractorSpec {
    FeatureExtractorSpec {
        n_scales: 3,
        filters_per_scale: 8,
        filter_size: 5,
        filter_seed: 3,
        nonlinearity: Nonlinearity::Tanh,
        calibration_signals: 8,
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (operator, k, init_seed) = match preset {
            Preset::Sr => (OperatorSpec::Downsample { factor: 4 }, 6, 200),
            Preset::Ip => (OperatorSpec::rect_mask([32, 32], [0, 0], [16, 16]), 3, 200),
            Preset::Cs => (OperatorSpec::RandomProjection { m: 64, proj_seed: 7 }, 5, 201),
        };
        Self {
            version: CONFIG_VERSION,
            preset,
            generator: preset_generator(),
            operator,
            features: preset_features(),
            problem: ProblemSpec {
                truth_seed: 100,
                noise_sigma: 0.0,
                noise_seed: 101,
            },
            inversion: InversionConfig {
                max_iters: 2000,
                step_size: 50.0,
                step_decay: 1.0,
                init_seed,
                init_scale: 1.0,
                stop_residual: 1e-8,
                stop_grad_norm: 1e-12,
            },
            exploration: ExplorationParams {
                k: Some(k),
                ..ExplorationParams::default()
            },
            n_solutions: 10,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidSpec(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.generator.validate()?;
        self.inversion.validate()?;
        self.exploration.validate()?;
        if !(self.problem.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Replaces every seed with `seed` plus a fixed per-role offset.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.problem.truth_seed = seed;
        self.problem.noise_seed = seed.wrapping_add(1);
        self.inversion.init_seed = seed.wrapping_add(1000);
        self.generator.weight_seed = seed.wrapping_add(2);
        self.features.filter_seed = seed.wrapping_add(3);
        if let OperatorSpec::RandomProjection { proj_seed, .. } = &mut self.operator {
            *proj_seed = seed.wrapping_add(4);
        }
        self
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            weight_seed: self.generator.weight_seed,
            filter_seed: self.features.filter_seed,
            truth_seed: self.problem.truth_seed,
            noise_seed: self.problem.noise_seed,
            init_seed: self.inversion.init_seed,
            proj_seed: match self.operator {
                OperatorSpec::RandomProjection { proj_seed, .. } => Some(proj_seed),
                _ => None,
            },
        }
    }

    pub fn build(&self) -> Result<Instance> {
        self.validate()?;
        let generator = Generator::new(self.generator.clone())?;
        let shape = generator.signal_shape();
        let operator = self.operator.bind(shape)?;
        let features = FeatureExtractor::new(self.features.clone(), shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.problem.truth_seed);
        let z_true: Vec<f64> = (0..generator.latent_dim())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let z_true = LatentVector::new(z_true)?;
        let x_true = generator.generate(&z_true)?;
        let measurement = operator.measure(&x_true, self.problem.noise_sigma, self.problem.noise_seed)?;
        let problem = Problem::new(generator, operator, features, measurement.values.clone())?;
        Ok(Instance {
            problem,
            z_true,
            x_true,
            measurement,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub weight_seed: u64,
    pub filter_seed: u64,
    pub truth_seed: u64,
    pub noise_seed: u64,
    pub init_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proj_seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub problem: Problem,
    pub z_true: LatentVector,
    pub x_true: SignalTensor,
    pub measurement: MeasurementVector,
}

/// An instance after inversion, with its base solution and metrics.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub instance: Instance,
    pub trace: InversionTrace,
    pub base: BaseSolution,
    pub metrics: LatentMetricPair,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let instance = config.build()?;
    let p = &instance.problem;
    let (z0, trace) = invert(&p.y, &p.operator, &p.generator, &config.inversion)?;
    let base = BaseSolution::new(p, z0)?;
    let metrics = p.metrics(&base.z0)?;
    Ok(Prepared {
        instance,
        trace,
        base,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: String,
    pub per_solution_s: Vec<f64>,
    /// Time after the last solution that is not attributed to any of them.
    pub unattributed_s: f64,
    pub total_s: f64,
    pub attempts: usize,
    pub feasible_count: usize,
    /// Mean pairwise perceptual distance among feasible solutions.
    pub diversity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub preset: Preset,
    pub n_solutions: usize,
    pub eglass: BenchReport,
    pub baseline: BenchReport,
    /// `baseline.total_s / eglass.total_s`; absent when the baseline found nothing.
    pub speedup: Option<f64>,
}

/// Mean pairwise perceptual distance among signals (0 for fewer than two).
pub fn diversity(features: &FeatureExtractor, signals: &[SignalTensor]) -> Result<f64> {
    let feats = signals
        .iter()
        .map(|x| features.features(x))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            sum += feature_distance(&feats[i], &feats[j]);
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

fn range(values: impl Iterator<Item = f64>) -> Option<[f64; 2]> {
    values.fold(None, |acc, v| match acc {
        None => Some([v, v]),
        Some([lo, hi]) => Some([lo.min(v), hi.max(v)]),
    })
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// e-GLASS (inversion, metrics and exploration) against independent
/// restarts, both single-threaded and on the same instance.
pub fn run_timing(config: &ExperimentConfig) -> Result<(TimingReport, ExploreOutcome)> {
    let instance = config.build()?;
    let p = &instance.problem;
    let n = config.n_solutions;
    let threshold = config.exploration.feasibility_threshold;

    let (outcome, eglass_total) = single_thread(|| -> Result<(ExploreOutcome, f64)> {
        let start = Instant::now();
        let (z0, _) = invert(&p.y, &p.operator, &p.generator, &config.inversion)?;
        let base = BaseSolution::new(p, z0)?;
        let metrics = p.metrics(&base.z0)?;
        let outcome = explore_with_metrics(p, &base, metrics, &config.exploration, n, start)?;
        Ok((outcome, start.elapsed().as_secs_f64()))
    })??;

    let (runs, baseline_total) = single_thread(|| -> Result<_> {
        let start = Instant::now();
        let runs = multi_restart_invert(&p.y, &p.operator, &p.generator, &config.inversion, n.max(1))?;
        Ok((runs, start.elapsed().as_secs_f64()))
    })??;

    let per: Vec<f64> = outcome.records.iter().map(|r| r.elapsed_s).collect();
    let eglass = BenchReport {
        method: "eglass".into(),
        unattributed_s: (eglass_total - per.iter().sum::<f64>()).max(0.0),
        per_solution_s: per,
        total_s: eglass_total,
        attempts: n,
        feasible_count: outcome.records.iter().filter(|r| r.feasible).count(),
        diversity: diversity(&p.features, &outcome.records.iter().map(|r| r.x.clone()).collect::<Vec<_>>())?,
        residual_range: range(outcome.records.iter().map(|r| r.measurement_residual)),
        flag: outcome.diagnostic.clone(),
    };

    let mut feasible_x = Vec::new();
    let mut residuals = Vec::new();
    let mut per = Vec::new();
    let mut diverged = 0;
    for run in &runs {
        match run {
            Ok((z, trace)) => {
                per.push(trace.wall_seconds);
                let r = trace.final_residual();
                if r <= threshold {
                    feasible_x.push(p.generator.generate(z)?);
                    residuals.push(r);
                }
            }
            Err(Error::Divergence { trace, .. }) => {
                per.push(trace.wall_seconds);
                diverged += 1;
            }
            Err(e) => return Err(Error::InvalidSpec(e.to_string())),
        }
    }
    let flag = if feasible_x.is_empty() {
        Some("baseline produced no feasible solution".to_string())
    } else if diverged > 0 {
        Some(format!("{diverged} restarts diverged"))
    } else {
        None
    };
    let baseline = BenchReport {
        method: "multi_restart".into(),
        unattributed_s: (baseline_total - per.iter().sum::<f64>()).max(0.0),
        per_solution_s: per,
        total_s: baseline_total,
        attempts: runs.len(),
        feasible_count: feasible_x.len(),
        diversity: diversity(&p.features, &feasible_x)?,
        residual_range: range(residuals.into_iter()),
        flag,
    };
    let speedup = (baseline.feasible_count > 0 && eglass.total_s > 0.0).then(|| baseline.total_s / eglass.total_s);
    Ok((
        TimingReport {
            preset: config.preset,
            n_solutions: n,
            eglass,
            baseline,
            speedup,
        },
        outcome,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// 1-based eigen-index.
    pub j: usize,
    pub vk_u: f64,
    pub d_u: f64,
    pub vk_v: f64,
    pub d_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub k: usize,
    pub k_top: usize,
    pub tau: f64,
    pub removed_set: Vec<usize>,
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["j", "vk_u", "d_u", "vk_v", "d_v"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.j.to_string(), r.vk_u.to_string(), r.d_u.to_string(), r.vk_v.to_string(), r.d_v.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Largest `|d · u^j|` over the top `k_top` block.
    pub fn max_top_block_d_u(&self) -> f64 {
        self.rows.iter().take(self.k_top).map(|r| r.d_u).fold(0.0, f64::max)
    }
}

/// `|v^K·u^j|`, `|d·u^j|`, `|v^K·v^j|`, `|d·v^j|` for every `j`.
pub fn correlation_report(metrics: &LatentMetricPair, params: &ExplorationParams) -> Result<(CorrelationReport, ExplorationDirection)> {
    let dir = build_direction(metrics, params)?;
    let k = dir.source_index;
    let vk = metrics.eig_x.vector(k - 1);
    let u = metrics.eig_y.vectors();
    let v = metrics.eig_x.vectors();
    let rows = (0..metrics.dim())
        .map(|j| {
            let uj = u.column(j);
            let vj = v.column(j);
            CorrelationRow {
                j: j + 1,
                vk_u: dot(&vk, &uj).abs(),
                d_u: dot(&dir.d, &uj).abs(),
                vk_v: dot(&vk, &vj).abs(),
                d_v: dot(&dir.d, &vj).abs(),
            }
        })
        .collect();
    Ok((
        CorrelationReport {
            k,
            k_top: dir.k_top,
            tau: params.tau,
            removed_set: dir.removed_set.clone(),
            rows,
        },
        dir,
    ))
}

pub fn run_correlation_report(config: &ExperimentConfig) -> Result<CorrelationReport> {
    let prepared = prepare(config)?;
    Ok(correlation_report(&prepared.metrics, &config.exploration)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub eta: f64,
    pub raw_residual: f64,
    pub projected_residual: f64,
    pub raw_perceptual: f64,
    pub projected_perceptual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub k: usize,
    pub base_residual: f64,
    pub rows: Vec<ContrastRow>,
    pub raw_range: [f64; 2],
    pub projected_range: [f64; 2],
}

impl ContrastReport {
    /// Worst-case `projected / raw` residual ratio over the grid.
    pub fn max_residual_ratio(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.projected_residual / r.raw_residual)
            .fold(0.0, f64::max)
    }

    /// Worst-case `projected / raw` perceptual ratio over the grid.
    pub fn min_perceptual_ratio(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.projected_perceptual / r.raw_perceptual)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["eta", "raw_residual", "projected_residual", "raw_perceptual", "projected_perceptual"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.eta.to_string(),
                r.raw_residual.to_string(),
                r.projected_residual.to_string(),
                r.raw_perceptual.to_string(),
                r.projected_perceptual.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Matched-η residuals along raw `v^K` and the projected direction, over
/// `±eta_grid · 1/√ω_K`.
pub fn residual_contrast(problem: &Problem, base: &BaseSolution, metrics: &LatentMetricPair, params: &ExplorationParams) -> Result<ContrastReport> {
    let k = resolved_k(metrics, params)?;
    let dir = build_direction(metrics, params)?;
    let vk = metrics.eig_x.vector(k - 1);
    let s = eta_scale(metrics.eig_x.values()[k - 1]);
    let mut rows = Vec::new();
    for g in params.eta_grid.iter().filter(|g| **g > 0.0) {
        for sign in [1.0, -1.0] {
            let eta = sign * g * s;
            let raw = evaluate_step(problem, base, &base.z0, &vk, eta)?;
            let proj = evaluate_step(problem, base, &base.z0, &dir.d, eta)?;
            rows.push(ContrastRow {
                eta,
                raw_residual: raw.measurement_residual,
                projected_residual: proj.measurement_residual,
                raw_perceptual: raw.perceptual_from_base,
                projected_perceptual: proj.perceptual_from_base,
            });
        }
    }
    let raw_range = range(rows.iter().map(|r| r.raw_residual)).unwrap_or([0.0, 0.0]);
    let projected_range = range(rows.iter().map(|r| r.projected_residual)).unwrap_or([0.0, 0.0]);
    Ok(ContrastReport {
        k,
        base_residual: base.residual,
        rows,
        raw_range,
        projected_range,
    })
}

pub fn run_residual_contrast(config: &ExperimentConfig) -> Result<ContrastReport> {
    let prepared = prepare(config)?;
    residual_contrast(&prepared.instance.problem, &prepared.base, &prepared.metrics, &config.exploration)
}
