//! Perceptual-distance surrogate: fixed random zero-mean filters applied to
//! a dyadic average-pool pyramid, followed by `tanh` and per-channel
//! normalization. The distance is the squared ℓ2 norm in feature space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generator::SignalTensor;
use crate::linalg::Matrix;

// Calibration stream is derived from the filter seed.
const CALIBRATION_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

fn default_calibration_signals() -> usize {
    8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorSpec {
    pub n_scales: usize,
    pub filters_per_scale: usize,
    pub filter_size: usize,
    pub filter_seed: u64,
    pub nonlinearity: Nonlinearity,
    /// Number of white-noise signals used to fix the channel normalization.
    #[serde(default = "default_calibration_signals")]
    pub calibration_signals: usize,
}

pub type FeatureVector = Vec<f64>;

/// Extractor bound to a signal shape, with filters and normalization fixed.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    spec: FeatureExtractorSpec,
    shape: [usize; 2],
    /// `filters[scale][filter]`, each `filter_size²` row-major.
    filters: Vec<Vec<Vec<f64>>>,
    /// Per-channel divisor, `norms[scale][filter]`.
    norms: Vec<Vec<f64>>,
}

impl FeatureExtractor {
    pub fn new(spec: FeatureExtractorSpec, shape: [usize; 2]) -> Result<Self> {
        if spec.n_scales == 0 || spec.filters_per_scale == 0 {
            return Err(Error::InvalidSpec("feature extractor needs scales and filters".into()));
        }
        if spec.filter_size % 2 == 0 {
            return Err(Error::InvalidSpec("filter_size must be odd".into()));
        }
        let div = 1usize << (spec.n_scales - 1);
        if shape[0] % div != 0 || shape[1] % div != 0 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::InvalidSpec(format!(
                "signal shape {shape:?} not divisible by 2^{}",
                spec.n_scales - 1
            )));
        }
        let taps = spec.filter_size * spec.filter_size;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.filter_seed);
        let filters: Vec<Vec<Vec<f64>>> = (0..spec.n_scales)
            .map(|_| {
                (0..spec.filters_per_scale)
                    .map(|_| {
                        let mut k: Vec<f64> =
                            (0..taps).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let mean = k.iter().sum::<f64>() / taps as f64;
                        let s = 1.0 / spec.filter_size as f64;
                        k.iter_mut().for_each(|v| *v = (*v - mean) * s);
                        k
                    })
                    .collect()
            })
            .collect();
        let mut fe = Self {
            norms: vec![vec![1.0; spec.filters_per_scale]; spec.n_scales],
            spec,
            shape,
            filters,
        };
        fe.calibrate()?;
        Ok(fe)
    }

    fn calibrate(&mut self) -> Result<()> {
        let count = self.spec.calibration_signals.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.filter_seed ^ CALIBRATION_SALT);
        let n = self.shape[0] * self.shape[1];
        let (ns, nf) = (self.spec.n_scales, self.spec.filters_per_scale);
        let mut sum = vec![vec![0.0; nf]; ns];
        let mut sum2 = vec![vec![0.0; nf]; ns];
        let mut cnt = vec![0usize; ns];
        for _ in 0..count {
            let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            for (s, (p, [h, w])) in self.pyramid(&x).into_iter().enumerate() {
                cnt[s] += h * w;
                for f in 0..nf {
                    for a in correlate_same(&p, h, w, &self.filters[s][f], self.spec.filter_size) {
                        let t = a.tanh();
                        sum[s][f] += t;
                        sum2[s][f] += t * t;
                    }
                }
            }
        }
        for s in 0..ns {
            for f in 0..nf {
                let c = cnt[s] as f64;
                let mean = sum[s][f] / c;
                let var = (sum2[s][f] / c - mean * mean).max(0.0);
                if !(var > 0.0) {
                    return Err(Error::InvalidSpec("degenerate calibration variance".into()));
                }
                self.norms[s][f] = var.sqrt();
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &FeatureExtractorSpec {
        &self.spec
    }

    pub fn signal_shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn feature_len(&self) -> usize {
        (0..self.spec.n_scales)
            .map(|s| self.spec.filters_per_scale * (self.shape[0] >> s) * (self.shape[1] >> s))
            .sum()
    }

    pub fn channel_norms(&self) -> &[Vec<f64>] {
        &self.norms
    }

    fn pyramid(&self, x: &[f64]) -> Vec<(Vec<f64>, [usize; 2])> {
        let mut out = Vec::with_capacity(self.spec.n_scales);
        let mut cur = x.to_vec();
        let [mut h, mut w] = self.shape;
        out.push((cur.clone(), [h, w]));
        for _ in 1..self.spec.n_scales {
            let (h2, w2) = (h / 2, w / 2);
            let mut next = vec![0.0; h2 * w2];
            for r in 0..h {
                for c in 0..w {
                    next[(r / 2) * w2 + c / 2] += 0.25 * cur[r * w + c];
                }
            }
            cur = next;
            h = h2;
            w = w2;
            out.push((cur.clone(), [h, w]));
        }
        out
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        check_len("feature extractor input", self.shape[0] * self.shape[1], x.len())
    }

    pub fn features(&self, x: &SignalTensor) -> Result<FeatureVector> {
        if x.shape() != self.shape {
            return Err(Error::InvalidSpec(format!(
                "signal shape {:?} does not match extractor shape {:?}",
                x.shape(),
                self.shape
            )));
        }
        self.features_raw(x.values())
    }

    pub fn features_raw(&self, x: &[f64]) -> Result<FeatureVector> {
        self.check(x)?;
        let mut out = Vec::with_capacity(self.feature_len());
        for (s, (p, [h, w])) in self.pyramid(x).into_iter().enumerate() {
            for (f, k) in self.filters[s].iter().enumerate() {
                let inv = 1.0 / self.norms[s][f];
                out.extend(
                    correlate_same(&p, h, w, k, self.spec.filter_size)
                        .into_iter()
                        .map(|a| a.tanh() * inv),
                );
            }
        }
        Ok(out)
    }

    /// Directional derivative of the features at `x` along `dx`.
    pub fn jvp(&self, x: &[f64], dx: &[f64]) -> Result<FeatureVector> {
        self.check(x)?;
        self.check(dx)?;
        let px = self.pyramid(x);
        let pd = self.pyramid(dx);
        let mut out = Vec::with_capacity(self.feature_len());
        for (s, ((p, [h, w]), (dp, _))) in px.into_iter().zip(pd).enumerate() {
            for (f, k) in self.filters[s].iter().enumerate() {
                let inv = 1.0 / self.norms[s][f];
                let a = correlate_same(&p, h, w, k, self.spec.filter_size);
                let da = correlate_same(&dp, h, w, k, self.spec.filter_size);
                out.extend(a.into_iter().zip(da).map(|(ai, di)| {
                    let t = ai.tanh();
                    (1.0 - t * t) * di * inv
                }));
            }
        }
        Ok(out)
    }

    /// Dense `feature_len × n` Jacobian at `x`, one JVP per pixel.
    pub fn feature_jacobian(&self, x: &SignalTensor) -> Result<Matrix> {
        let n = x.len();
        let mut cols = Vec::with_capacity(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            cols.push(self.jvp(x.values(), &e)?);
            e[j] = 0.0;
        }
        Matrix::from_columns(self.feature_len(), &cols)
    }

    pub fn perceptual_distance(&self, x1: &SignalTensor, x2: &SignalTensor) -> Result<f64> {
        let f1 = self.features(x1)?;
        let f2 = self.features(x2)?;
        Ok(feature_distance(&f1, &f2))
    }
}

pub fn feature_distance(f1: &[f64], f2: &[f64]) -> f64 {
    f1.iter().zip(f2).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Same-size zero-padded 2-D correlation.
fn correlate_same(x: &[f64], h: usize, w: usize, k: &[f64], size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for a in 0..size as isize {
                let ii = i + a - r;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let row = &x[ii as usize * w..(ii as usize + 1) * w];
                let krow = &k[a as usize * size..(a as usize + 1) * size];
                for (b, kv) in krow.iter().enumerate() {
                    let jj = j + b as isize - r;
                    if jj >= 0 && jj < w as isize {
                        acc += kv * row[jj as usize];
                    }
                }
            }
            out[i as usize * w + j as usize] = acc;
        }
    }
    out
}
