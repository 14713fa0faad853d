use crate::error::{check_len, Result};
use crate::generator::{Generator, SignalTensor};
use crate::metrics::LatentMetricPair;
use crate::operator::{mse, ForwardOperator};
use crate::perceptual::{feature_distance, FeatureExtractor};

/// A bound inverse problem: prior, operator, perceptual features and the
/// observed measurements.
#[derive(Clone, Debug)]
pub struct Problem {
    pub generator: Generator,
    pub operator: ForwardOperator,
    pub features: FeatureExtractor,
    pub y: Vec<f64>,
}

impl Problem {
    pub fn new(generator: Generator, operator: ForwardOperator, features: FeatureExtractor, y: Vec<f64>) -> Result<Self> {
        check_len("problem signal", generator.signal_len(), operator.input_len())?;
        check_len("problem measurements", operator.output_len(), y.len())?;
        if generator.signal_shape() != features.signal_shape() {
            return Err(crate::Error::InvalidSpec(
                "feature extractor shape differs from generator output".into(),
            ));
        }
        Ok(Self {
            generator,
            operator,
            features,
            y,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    /// `MSE(y, A x)`.
    pub fn residual_of_signal(&self, x: &[f64]) -> Result<f64> {
        Ok(mse(&self.y, &self.operator.apply_raw(x)?))
    }

    /// `MSE(y, A G(z))`.
    pub fn residual(&self, z: &[f64]) -> Result<f64> {
        self.residual_of_signal(&self.generator.generate_raw(z)?)
    }

    /// Residual and its gradient `(2/m)·Jᵀ Aᵀ (A G(z) − y)`.
    pub fn residual_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        crate::inversion::objective(&self.y, &self.operator, &self.generator, z)
    }

    pub fn metrics(&self, z0: &[f64]) -> Result<LatentMetricPair> {
        LatentMetricPair::compute(&self.generator, &self.operator, &self.features, z0)
    }

    /// Perceptual distance between two generated signals.
    pub fn perceptual(&self, a: &SignalTensor, b: &SignalTensor) -> Result<f64> {
        self.features.perceptual_distance(a, b)
    }

    pub fn perceptual_to_features(&self, x: &[f64], base_features: &[f64]) -> Result<f64> {
        Ok(feature_distance(&self.features.features_raw(x)?, base_features))
    }
}
