//! Latent-only inversion: gradient descent on `MSE(y, A G(z))` with
//! backtracking, and the multi-restart baseline built on it.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generator::{Generator, LatentVector};
use crate::operator::{mse, ForwardOperator};

/// Residual above which a run is declared divergent.
pub const DIVERGENCE_RESIDUAL: f64 = 1e6;

/// Halvings attempted per step before the run is declared stalled.
pub const MAX_BACKTRACKS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub step_decay: f64,
    pub init_seed: u64,
    pub init_scale: f64,
    pub stop_residual: f64,
    pub stop_grad_norm: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: 50.0,
            step_decay: 1.0,
            init_seed: 1,
            init_scale: 1.0,
            stop_residual: 1e-8,
            stop_grad_norm: 1e-10,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidSpec("max_iters must be at least 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidSpec("step_size must be positive".into()));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return Err(Error::InvalidSpec("step_decay must lie in (0, 1]".into()));
        }
        if !(self.init_scale >= 0.0) || !(self.stop_residual >= 0.0) || !(self.stop_grad_norm >= 0.0) {
            return Err(Error::InvalidSpec("init_scale and stop tolerances must be nonnegative".into()));
        }
        Ok(())
    }

    /// Initial latent `init_scale · N(0, I)` drawn from `seed`.
    pub fn initial_latent(&self, latent_dim: usize, seed: u64) -> LatentVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..latent_dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                self.init_scale * v
            })
            .collect();
        LatentVector::new(z).expect("normal draws are finite")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ResidualTolerance,
    GradientTolerance,
    MaxIters,
    /// No backtracked step decreased the residual.
    Stalled,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual: f64,
    pub grad_norm: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionTrace {
    pub iterations: Vec<IterationRecord>,
    pub final_z: Vec<f64>,
    pub wall_seconds: f64,
    pub converged: bool,
    pub restart_index: usize,
    pub stop_reason: StopReason,
}

impl InversionTrace {
    pub fn final_residual(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.residual)
    }

    pub fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.iterations.iter().map(|r| r.residual)
    }

    /// One JSON object per iteration: `iter, residual, grad_norm, elapsed_s`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.iterations {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `MSE(y, A G(z))` and its gradient `(2/m)·Jᵀ Aᵀ (A G(z) − y)`.
pub fn objective(y: &[f64], op: &ForwardOperator, g: &Generator, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let x = g.generate_raw(z)?;
    let ax = op.apply_raw(&x)?;
    check_len("inversion measurements", ax.len(), y.len())?;
    let r: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = y.len().max(1) as f64;
    let f = r.iter().map(|v| v * v).sum::<f64>() / m;
    let mut grad = g.vjp(z, &op.adjoint_raw(&r)?)?;
    grad.iter_mut().for_each(|v| *v *= 2.0 / m);
    Ok((f, grad))
}

fn residual_only(y: &[f64], op: &ForwardOperator, g: &Generator, z: &[f64]) -> Result<f64> {
    Ok(mse(y, &op.apply_raw(&g.generate_raw(z)?)?))
}

/// Inverts from the configured random initialization.
pub fn invert(y: &[f64], op: &ForwardOperator, g: &Generator, cfg: &InversionConfig) -> Result<(LatentVector, InversionTrace)> {
    let z = cfg.initial_latent(g.latent_dim(), cfg.init_seed);
    invert_from(y, op, g, cfg, z.as_slice(), 0)
}

pub fn invert_from(
    y: &[f64],
    op: &ForwardOperator,
    g: &Generator,
    cfg: &InversionConfig,
    init: &[f64],
    restart_index: usize,
) -> Result<(LatentVector, InversionTrace)> {
    cfg.validate()?;
    check_len("inversion init", g.latent_dim(), init.len())?;
    check_len("inversion measurements", op.output_len(), y.len())?;
    let start = Instant::now();
    let mut z = init.to_vec();
    let (mut f, mut grad) = objective(y, op, g, &z)?;
    let mut iterations = Vec::new();
    let mut reason = StopReason::MaxIters;
    let mut alpha = cfg.step_size;
    for t in 0..=cfg.max_iters {
        let gn = crate::linalg::norm(&grad);
        iterations.push(IterationRecord {
            iter: t,
            residual: f,
            grad_norm: gn,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        if !f.is_finite() || f > DIVERGENCE_RESIDUAL {
            let trace = InversionTrace {
                iterations,
                final_z: z,
                wall_seconds: start.elapsed().as_secs_f64(),
                converged: false,
                restart_index,
                stop_reason: StopReason::Diverged,
            };
            return Err(Error::Divergence {
                residual: f,
                iteration: t,
                trace: Box::new(trace),
            });
        }
        if f <= cfg.stop_residual {
            reason = StopReason::ResidualTolerance;
            break;
        }
        if gn <= cfg.stop_grad_norm {
            reason = StopReason::GradientTolerance;
            break;
        }
        if t == cfg.max_iters {
            break;
        }
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
            let ft = residual_only(y, op, g, &trial)?;
            if ft < f {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(next) => {
                z = next;
                (f, grad) = objective(y, op, g, &z)?;
            }
            None => {
                reason = StopReason::Stalled;
                break;
            }
        }
        alpha *= cfg.step_decay;
    }
    let converged = matches!(reason, StopReason::ResidualTolerance | StopReason::GradientTolerance);
    let trace = InversionTrace {
        iterations,
        final_z: z.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
        converged,
        restart_index,
        stop_reason: reason,
    };
    Ok((LatentVector::new(z)?, trace))
}

/// Independent inversions from seeds `init_seed + i`. Divergent runs are
/// returned as errors in their slot.
pub fn multi_restart_invert(
    y: &[f64],
    op: &ForwardOperator,
    g: &Generator,
    cfg: &InversionConfig,
    n_solutions: usize,
) -> Result<Vec<Result<(LatentVector, InversionTrace)>>> {
    if n_solutions == 0 {
        return Err(Error::InvalidSpec("n_solutions must be at least 1".into()));
    }
    cfg.validate()?;
    Ok((0..n_solutions)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.init_seed.wrapping_add(i as u64);
            let z = cfg.initial_latent(g.latent_dim(), seed);
            invert_from(y, op, g, cfg, z.as_slice(), i)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{GeneratorKind, GeneratorSpec};
    use crate::operator::OperatorSpec;

    fn linear() -> Generator {
        Generator::new(GeneratorSpec {
            kind: GeneratorKind::Linear,
            latent_dim: 3,
            signal_shape: [4, 2],
            hidden_widths: vec![],
            activation: None,
            weight_seed: 11,
            weight_scale: 1.0,
            structure: None,
        })
        .unwrap()
    }

    fn identity(shape: [usize; 2]) -> ForwardOperator {
        OperatorSpec::Mask {
            shape,
            mask: vec![1; shape[0] * shape[1]],
        }
        .bind(shape)
        .unwrap()
    }

    #[test]
    fn starting_at_optimum_stops_immediately() {
        let g = linear();
        let op = identity([4, 2]);
        let zs = [0.5, -1.0, 0.25];
        let y = g.generate_raw(&zs).unwrap();
        let (z, trace) = invert_from(&y, &op, &g, &InversionConfig::default(), &zs, 0).unwrap();
        assert_eq!(z.as_slice(), &zs);
        assert_eq!(trace.iterations.len(), 1);
        assert!(trace.converged);
    }

    #[test]
    fn residuals_never_increase() {
        let g = linear();
        let op = identity([4, 2]);
        let y = vec![0.3, -0.2, 0.1, 0.9, -0.5, 0.4, 0.0, 0.2];
        let cfg = InversionConfig {
            max_iters: 200,
            step_size: 10.0,
            ..InversionConfig::default()
        };
        let (_, trace) = invert(&y, &op, &g, &cfg).unwrap();
        let r: Vec<f64> = trace.residuals().collect();
        assert!(r.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn single_restart_matches_invert() {
        let g = linear();
        let op = identity([4, 2]);
        let y = vec![1.0; 8];
        let cfg = InversionConfig {
            max_iters: 50,
            ..InversionConfig::default()
        };
        let (z1, t1) = invert(&y, &op, &g, &cfg).unwrap();
        let runs = multi_restart_invert(&y, &op, &g, &cfg, 1).unwrap();
        let (z2, t2) = runs[0].as_ref().unwrap();
        assert_eq!(&z1, z2);
        assert_eq!(t1.final_residual(), t2.final_residual());
    }

    #[test]
    fn rejects_invalid_config() {
        let g = linear();
        let op = identity([4, 2]);
        let bad = InversionConfig {
            step_size: 0.0,
            ..InversionConfig::default()
        };
        assert!(invert(&[0.0; 8], &op, &g, &bad).is_err());
        assert!(serde_json::from_str::<InversionConfig>(r#"{"max_iters":1}"#).is_err());
    }

    #[test]
    fn trace_jsonl_has_one_line_per_iteration() {
        let g = linear();
        let op = identity([4, 2]);
        let cfg = InversionConfig {
            max_iters: 5,
            stop_residual: 0.0,
            stop_grad_norm: 0.0,
            ..InversionConfig::default()
        };
        let (_, trace) = invert(&[0.7; 8], &op, &g, &cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), trace.iterations.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["iter", "residual", "grad_norm", "elapsed_s"] {
            assert!(first.get(key).is_some());
        }
    }
}
