#![allow(dead_code)]

use eglass_core::bench::{ExperimentConfig, Preset};
use eglass_core::generator::{Activation, GeneratorKind, StructureSpec};
use eglass_core::perceptual::Nonlinearity;
use eglass_core::{FeatureExtractor, FeatureExtractorSpec, ForwardOperator, Generator, GeneratorSpec, OperatorSpec, Problem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(len: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            scale * v
        })
        .collect()
}

pub fn unit(len: usize, seed: u64) -> Vec<f64> {
    let v = gaussian(len, seed, 1.0);
    let n = eglass_core::linalg::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

pub fn mlp(latent_dim: usize, shape: [usize; 2], widths: Vec<usize>, activation: Activation, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::Mlp,
        latent_dim,
        signal_shape: shape,
        hidden_widths: widths,
        activation: Some(activation),
        weight_seed: seed,
        weight_scale: 1.0,
        structure: None,
    }
}

pub fn linear(latent_dim: usize, shape: [usize; 2], seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::Linear,
        latent_dim,
        signal_shape: shape,
        hidden_widths: vec![],
        activation: None,
        weight_seed: seed,
        weight_scale: 1.0,
        structure: None,
    }
}

pub fn structured(latent_dim: usize, shape: [usize; 2], seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        structure: Some(StructureSpec {
            radius: 0.2,
            cross_band: 0.1,
            smooth_width: 0.1,
        }),
        ..mlp(latent_dim, shape, vec![16, 32], Activation::Tanh, seed)
    }
}

pub fn features(shape: [usize; 2], seed: u64) -> FeatureExtractor {
    FeatureExtractor::new(
        FeatureExtractorSpec {
            n_scales: 2,
            filters_per_scale: 4,
            filter_size: 3,
            filter_seed: seed,
            nonlinearity: Nonlinearity::Tanh,
            calibration_signals: 4,
        },
        shape,
    )
    .unwrap()
}

pub fn blur() -> OperatorSpec {
    OperatorSpec::Blur {
        kernel: vec![0.25, 0.5, 0.25],
    }
}

/// Ten seeded (generator, operator, base point) triples with `n_z ≤ 16`.
pub fn triples() -> Vec<(Generator, ForwardOperator, Vec<f64>)> {
    let s8 = [8, 8];
    let cases: Vec<(GeneratorSpec, OperatorSpec)> = vec![
        (mlp(6, s8, vec![12], Activation::Tanh, 1), OperatorSpec::Downsample { factor: 2 }),
        (mlp(8, s8, vec![16, 24], Activation::Tanh, 2), OperatorSpec::rect_mask(s8, [2, 2], [4, 4])),
        (mlp(10, s8, vec![20], Activation::Softplus, 3), blur()),
        (mlp(12, s8, vec![16], Activation::Tanh, 4), OperatorSpec::RandomProjection { m: 20, proj_seed: 5 }),
        (linear(5, s8, 5), OperatorSpec::Downsample { factor: 4 }),
        (linear(16, s8, 6), OperatorSpec::RandomProjection { m: 12, proj_seed: 6 }),
        (structured(16, s8, 7), OperatorSpec::Downsample { factor: 2 }),
        (structured(9, [12, 12], 8), OperatorSpec::rect_mask([12, 12], [0, 0], [6, 6])),
        (mlp(4, [6, 6], vec![8, 8], Activation::Softplus, 9), blur()),
        (mlp(16, s8, vec![32], Activation::Tanh, 10), OperatorSpec::rect_mask(s8, [0, 4], [8, 4])),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (gs, os))| {
            let g = Generator::new(gs).unwrap();
            let op = os.bind(g.signal_shape()).unwrap();
            let z0 = gaussian(g.latent_dim(), 500 + i as u64, 0.7);
            (g, op, z0)
        })
        .collect()
}

/// Problem whose measurements are exactly `A G(z_true)`.
pub fn problem(g: Generator, op: ForwardOperator, z_true: &[f64], feature_seed: u64) -> Problem {
    let y = op.apply_raw(&g.generate_raw(z_true).unwrap()).unwrap();
    let fe = features(g.signal_shape(), feature_seed);
    Problem::new(g, op, fe, y).unwrap()
}

pub fn preset(p: Preset) -> ExperimentConfig {
    ExperimentConfig::preset(p)
}

/// Worst violations of the direction invariants: unit norm, removed-block
/// correlation and the two Rayleigh bounds (positive means violated).
pub struct DirectionCheck {
    pub norm_gap: f64,
    pub removed_corr: f64,
    pub bound_kplus1: f64,
    pub bound_source: f64,
}

pub fn check_direction(
    metrics: &eglass_core::LatentMetricPair,
    dir: &eglass_core::exploration::ExplorationDirection,
) -> DirectionCheck {
    use eglass_core::linalg::{dot, norm, rayleigh};
    let u = metrics.eig_y.vectors();
    let lambda = metrics.eig_y.values();
    let removed_corr = dir
        .removed_set
        .iter()
        .map(|&j| dot(&dir.d, &u.column(j - 1)).abs())
        .fold(0.0, f64::max);
    let ry = rayleigh(&metrics.h_y, &dir.d).unwrap();
    let source = metrics.eig_x.vector(dir.source_index - 1);
    let slack = 1e-12 * lambda[0];
    DirectionCheck {
        norm_gap: (norm(&dir.d) - 1.0).abs(),
        removed_corr,
        bound_kplus1: ry - lambda[dir.k_top] - slack,
        bound_source: ry - rayleigh(&metrics.h_y, &source).unwrap() - slack,
    }
}
