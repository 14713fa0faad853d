//! Linear measurement operators `y = A x + n` with matrix-free apply and
//! adjoint, plus dense materialization for oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generator::SignalTensor;
use crate::linalg::Matrix;

/// Cap on `m · n` for [`ForwardOperator::materialize`].
pub const MATERIALIZE_CAP: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    /// Box average over `factor × factor` blocks.
    Downsample { factor: usize },
    /// Keeps the entries where `mask` is 1; row-major over `shape`.
    Mask { shape: [usize; 2], mask: Vec<u8> },
    /// Separable same-size convolution with `kernel` along both axes, zero padded.
    Blur { kernel: Vec<f64> },
    /// Dense Gaussian projection to `m` outputs, entries scaled by `1/√n`.
    RandomProjection { m: usize, proj_seed: u64 },
}

impl OperatorSpec {
    /// Mask that hides the rectangle `rows × cols` with top-left corner `origin`.
    pub fn rect_mask(shape: [usize; 2], origin: [usize; 2], size: [usize; 2]) -> Self {
        let mut mask = vec![1u8; shape[0] * shape[1]];
        for r in origin[0]..(origin[0] + size[0]).min(shape[0]) {
            for c in origin[1]..(origin[1] + size[1]).min(shape[1]) {
                mask[r * shape[1] + c] = 0;
            }
        }
        OperatorSpec::Mask { shape, mask }
    }

    /// Validates against a signal shape and precomputes what `apply` needs.
    pub fn bind(&self, shape: [usize; 2]) -> Result<ForwardOperator> {
        let [h, w] = shape;
        let n = h * w;
        let kind = match self {
            OperatorSpec::Downsample { factor } => {
                let f = *factor;
                if f == 0 || h % f != 0 || w % f != 0 {
                    return Err(Error::InvalidSpec(format!(
                        "downsample factor {f} does not divide signal shape {h}x{w}"
                    )));
                }
                Bound::Downsample { factor: f }
            }
            OperatorSpec::Mask { shape: ms, mask } => {
                if *ms != shape {
                    return Err(Error::InvalidSpec(format!(
                        "mask shape {ms:?} does not match signal shape {shape:?}"
                    )));
                }
                check_len("mask length", n, mask.len())?;
                if mask.iter().any(|&b| b > 1) {
                    return Err(Error::InvalidSpec("mask entries must be 0 or 1".into()));
                }
                let kept: Vec<usize> = (0..n).filter(|&i| mask[i] == 1).collect();
                if kept.is_empty() {
                    return Err(Error::InvalidSpec("mask keeps no entries".into()));
                }
                Bound::Mask { kept }
            }
            OperatorSpec::Blur { kernel } => {
                if kernel.is_empty() || kernel.len() % 2 == 0 {
                    return Err(Error::InvalidSpec("blur kernel must have odd length".into()));
                }
                if kernel.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("blur kernel"));
                }
                Bound::Blur {
                    kernel: kernel.clone(),
                }
            }
            OperatorSpec::RandomProjection { m, proj_seed } => {
                if *m == 0 || *m > n {
                    return Err(Error::InvalidSpec(format!(
                        "random projection output {m} must be in 1..={n}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*proj_seed);
                let s = 1.0 / (n as f64).sqrt();
                let mat = Matrix::from_fn(*m, n, |_, _| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    s * x
                });
                Bound::Projection { matrix: mat }
            }
        };
        Ok(ForwardOperator {
            spec: self.clone(),
            shape,
            kind,
        })
    }
}

#[derive(Clone, Debug)]
enum Bound {
    Downsample { factor: usize },
    Mask { kept: Vec<usize> },
    Blur { kernel: Vec<f64> },
    Projection { matrix: Matrix },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub noise_sigma: f64,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean squared error over the entries.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// An [`OperatorSpec`] bound to a signal shape.
#[derive(Clone, Debug)]
pub struct ForwardOperator {
    spec: OperatorSpec,
    shape: [usize; 2],
    kind: Bound,
}

impl ForwardOperator {
    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn signal_shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn input_len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn output_len(&self) -> usize {
        match &self.kind {
            Bound::Downsample { factor } => self.input_len() / (factor * factor),
            Bound::Mask { kept } => kept.len(),
            Bound::Blur { .. } => self.input_len(),
            Bound::Projection { matrix } => matrix.rows(),
        }
    }

    /// Grid shape used to display measurements; 1-D operators report `[m]`.
    pub fn measurement_shape(&self) -> Vec<usize> {
        match &self.kind {
            Bound::Downsample { factor } => vec![self.shape[0] / factor, self.shape[1] / factor],
            Bound::Blur { .. } => self.shape.to_vec(),
            _ => vec![self.output_len()],
        }
    }

    pub fn apply(&self, x: &SignalTensor) -> Result<MeasurementVector> {
        if x.shape() != self.shape {
            return Err(Error::InvalidSpec(format!(
                "signal shape {:?} does not match operator shape {:?}",
                x.shape(),
                self.shape
            )));
        }
        Ok(MeasurementVector {
            values: self.apply_raw(x.values())?,
            noise_sigma: 0.0,
        })
    }

    /// Noiseless `A x` on a flat row-major signal.
    pub fn apply_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator input", self.input_len(), x.len())?;
        let [h, w] = self.shape;
        Ok(match &self.kind {
            Bound::Downsample { factor } => {
                let f = *factor;
                let (hh, ww) = (h / f, w / f);
                let inv = 1.0 / (f * f) as f64;
                let mut y = vec![0.0; hh * ww];
                for r in 0..h {
                    for c in 0..w {
                        y[(r / f) * ww + c / f] += x[r * w + c];
                    }
                }
                y.iter_mut().for_each(|v| *v *= inv);
                y
            }
            Bound::Mask { kept } => kept.iter().map(|&i| x[i]).collect(),
            Bound::Blur { kernel } => {
                let tmp = conv_axis(x, h, w, kernel, Axis::Cols, false);
                conv_axis(&tmp, h, w, kernel, Axis::Rows, false)
            }
            Bound::Projection { matrix } => matrix.matvec(x)?,
        })
    }

    pub fn adjoint(&self, y: &MeasurementVector) -> Result<SignalTensor> {
        SignalTensor::new(self.adjoint_raw(&y.values)?, self.shape)
    }

    /// `Aᵀ y` as a flat row-major signal.
    pub fn adjoint_raw(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("operator adjoint input", self.output_len(), y.len())?;
        let [h, w] = self.shape;
        let n = h * w;
        Ok(match &self.kind {
            Bound::Downsample { factor } => {
                let f = *factor;
                let ww = w / f;
                let inv = 1.0 / (f * f) as f64;
                (0..n)
                    .map(|i| y[((i / w) / f) * ww + (i % w) / f] * inv)
                    .collect()
            }
            Bound::Mask { kept } => {
                let mut x = vec![0.0; n];
                for (v, &i) in y.iter().zip(kept) {
                    x[i] = *v;
                }
                x
            }
            Bound::Blur { kernel } => {
                let tmp = conv_axis(y, h, w, kernel, Axis::Rows, true);
                conv_axis(&tmp, h, w, kernel, Axis::Cols, true)
            }
            Bound::Projection { matrix } => matrix.t_matvec(y)?,
        })
    }

    /// `A x + n` with i.i.d. Gaussian noise of std `sigma` from a seeded stream.
    pub fn measure(&self, x: &SignalTensor, sigma: f64, noise_seed: u64) -> Result<MeasurementVector> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise sigma {sigma} must be >= 0")));
        }
        let mut y = self.apply(x)?;
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            for v in &mut y.values {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * e;
            }
        }
        y.noise_sigma = sigma;
        Ok(y)
    }

    /// Dense `m × n` matrix whose column `j` is `apply(e_j)`.
    pub fn materialize(&self) -> Result<Matrix> {
        let (m, n) = (self.output_len(), self.input_len());
        if m * n > MATERIALIZE_CAP {
            return Err(Error::SizeCap {
                what: "materialized operator entries",
                size: m * n,
                cap: MATERIALIZE_CAP,
            });
        }
        let mut a = Matrix::zeros(m, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            for (i, v) in self.apply_raw(&e)?.into_iter().enumerate() {
                a[(i, j)] = v;
            }
            e[j] = 0.0;
        }
        Ok(a)
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Rows,
    Cols,
}

/// 1-D zero-padded convolution along one axis of an `h × w` grid.
/// `transpose` selects the adjoint (correlation with the kernel).
fn conv_axis(x: &[f64], h: usize, w: usize, kernel: &[f64], axis: Axis, transpose: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (a, k) in kernel.iter().enumerate() {
                let off = if transpose { a as isize - r } else { r - a as isize };
                let (ii, jj) = match axis {
                    Axis::Rows => (i as isize + off, j as isize),
                    Axis::Cols => (i as isize, j as isize + off),
                };
                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                    acc += k * x[ii as usize * w + jj as usize];
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}
