//! Latent metric tensors at a base point: the measurement metric `H_Y`
//! (pull-back of the squared measurement distance) and the perceptual metric
//! `H_X` (pull-back of the squared feature distance), both in Gauss-Newton
//! form, plus their eigenbases and diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::generator::Generator;
use crate::linalg::{sym_eig, EigenBasis, Matrix, SymmetricMatrix, Vector};
use crate::operator::ForwardOperator;
use crate::perceptual::FeatureExtractor;

pub type MetricTensor = SymmetricMatrix;

/// Relative negativity tolerated before a tensor is declared non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// `Jᵀ J` with `J = A · ∂G/∂z`, one operator application per latent column.
pub fn measurement_metric(g: &Generator, op: &ForwardOperator, z0: &[f64]) -> Result<MetricTensor> {
    check_len("measurement_metric signal", g.signal_len(), op.input_len())?;
    let jg = g.jacobian(z0)?;
    let cols = (0..jg.cols())
        .into_par_iter()
        .map(|j| op.apply_raw(&jg.column(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_columns(op.output_len(), &cols)?.gram())
}

/// `Jψᵀ Jψ` with `ψ = features ∘ G`.
pub fn perceptual_metric(g: &Generator, fe: &FeatureExtractor, z0: &[f64]) -> Result<MetricTensor> {
    if g.signal_shape() != fe.signal_shape() {
        return Err(Error::InvalidSpec(format!(
            "generator shape {:?} does not match feature extractor shape {:?}",
            g.signal_shape(),
            fe.signal_shape()
        )));
    }
    let x0 = g.generate_raw(z0)?;
    let jg = g.jacobian(z0)?;
    let cols = (0..jg.cols())
        .into_par_iter()
        .map(|j| fe.jvp(&x0, &jg.column(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_columns(fe.feature_len(), &cols)?.gram())
}

/// Central second differences of `½·distance` around `z0`.
pub fn fd_hessian_oracle<F>(distance: F, z0: &[f64], step: f64) -> Result<SymmetricMatrix>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(1e-5..=1e-2).contains(&step) {
        return Err(Error::InvalidSpec(format!("fd step {step} outside [1e-5, 1e-2]")));
    }
    let n = z0.len();
    let h = |z: &[f64]| -> Result<f64> {
        let v = 0.5 * distance(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("fd_hessian_oracle distance"))
        }
    };
    let eval = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut z = z0.to_vec();
        for &(i, s) in offsets {
            z[i] += s;
        }
        h(&z)
    };
    let h0 = h(z0)?;
    let s2 = step * step;
    let entries = (0..n * n)
        .into_par_iter()
        .filter(|k| k / n <= k % n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let v = if i == j {
                (eval(&[(i, step)])? - 2.0 * h0 + eval(&[(i, -step)])?) / s2
            } else {
                (eval(&[(i, step), (j, step)])? - eval(&[(i, step), (j, -step)])?
                    - eval(&[(i, -step), (j, step)])?
                    + eval(&[(i, -step), (j, -step)])?)
                    / (4.0 * s2)
            };
            Ok((i, j, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = Matrix::zeros(n, n);
    for (i, j, v) in entries {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    SymmetricMatrix::new(m)
}

/// Oracle at `step` together with the relative Frobenius gap to the oracle
/// at `2·step`.
pub fn fd_hessian_with_check<F>(distance: F, z0: &[f64], step: f64) -> Result<(SymmetricMatrix, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let fine = fd_hessian_oracle(&distance, z0, step)?;
    let coarse = fd_hessian_oracle(&distance, z0, 2.0 * step)?;
    let gap = relative_frobenius(&fine, &coarse)?;
    Ok((fine, gap))
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn relative_frobenius(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(a.sub(b)?.frobenius() / b.frobenius().max(f64::MIN_POSITIVE))
}

fn checked_basis(m: &SymmetricMatrix, which: &'static str) -> Result<EigenBasis> {
    let e = sym_eig(m)?;
    let top = e.values().first().copied().unwrap_or(0.0).max(0.0);
    let bottom = e.values().last().copied().unwrap_or(0.0);
    if bottom < -PSD_TOLERANCE * top.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidSpec(format!(
            "{which} is not positive semi-definite (min eigenvalue {bottom:e}, max {top:e})"
        )));
    }
    Ok(e.clamp_nonnegative())
}

/// Both metrics at one base point with their eigenbases (`U, Λ` and `V, Ω`).
#[derive(Clone, Debug)]
pub struct LatentMetricPair {
    pub h_y: MetricTensor,
    pub h_x: MetricTensor,
    pub z0: Vector,
    pub eig_y: EigenBasis,
    pub eig_x: EigenBasis,
}

impl LatentMetricPair {
    pub fn compute(g: &Generator, op: &ForwardOperator, fe: &FeatureExtractor, z0: &[f64]) -> Result<Self> {
        let h_y = measurement_metric(g, op, z0)?;
        let h_x = perceptual_metric(g, fe, z0)?;
        Self::from_tensors(h_y, h_x, Vector::new(z0.to_vec())?)
    }

    pub fn from_tensors(h_y: MetricTensor, h_x: MetricTensor, z0: Vector) -> Result<Self> {
        check_len("metric pair", h_y.dim(), h_x.dim())?;
        check_len("metric base point", h_y.dim(), z0.len())?;
        let eig_y = checked_basis(&h_y, "H_Y")?;
        let eig_x = checked_basis(&h_x, "H_X")?;
        Ok(Self { h_y, h_x, z0, eig_y, eig_x })
    }

    pub fn dim(&self) -> usize {
        self.h_y.dim()
    }

    pub fn coupling(&self) -> CouplingMatrix {
        coupling(&self.eig_y, &self.eig_x).expect("pair dimensions agree")
    }
}

/// `C = Uᵀ V`; entry `(i, j)` is `u^i · v^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    pub entries: Matrix,
}

impl CouplingMatrix {
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `‖CᵀC − I‖_∞` (max-abs entry).
    pub fn orthogonality_error(&self) -> f64 {
        let ctc = self.entries.transpose().matmul(&self.entries).expect("square");
        ctc.sub(&Matrix::identity(self.dim())).expect("square").max_abs()
    }
}

pub fn coupling(eig_y: &EigenBasis, eig_x: &EigenBasis) -> Result<CouplingMatrix> {
    check_len("coupling", eig_y.dim(), eig_x.dim())?;
    let entries = eig_y.vectors().transpose().matmul(eig_x.vectors())?;
    Ok(CouplingMatrix { entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyReport {
    pub spectrum: Vec<f64>,
    pub cumulative_fraction: Vec<f64>,
    pub participation_ratio: f64,
}

/// Spectrum sorted descending (negatives clamped to 0), cumulative energy
/// fractions and participation ratio `(Σλ)²/Σλ²`.
pub fn anisotropy_profile(eigenvalues: &[f64]) -> AnisotropyReport {
    let mut spectrum: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    spectrum.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = spectrum.iter().sum();
    let sq: f64 = spectrum.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    let cumulative_fraction = spectrum
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    let participation_ratio = if sq > 0.0 { total * total / sq } else { 0.0 };
    AnisotropyReport {
        spectrum,
        cumulative_fraction,
        participation_ratio,
    }
}

impl AnisotropyReport {
    /// CSV with columns `index,eigenvalue,cumulative_fraction` (1-based index).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "eigenvalue", "cumulative_fraction"]).map_err(csv_err)?;
        for (i, (v, c)) in self.spectrum.iter().zip(&self.cumulative_fraction).enumerate() {
            w.write_record([(i + 1).to_string(), v.to_string(), c.to_string()]).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Spectra of one metric pair in a JSON-friendly layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraReport {
    pub lambda: Vec<f64>,
    pub omega: Vec<f64>,
    pub coupling: Vec<Vec<f64>>,
    pub coupling_orthogonality_error: f64,
    pub anisotropy_y: AnisotropyReport,
    pub anisotropy_x: AnisotropyReport,
}

impl SpectraReport {
    pub fn new(pair: &LatentMetricPair) -> Self {
        let c = pair.coupling();
        Self {
            lambda: pair.eig_y.values().to_vec(),
            omega: pair.eig_x.values().to_vec(),
            coupling_orthogonality_error: c.orthogonality_error(),
            coupling: c.entries.to_rows(),
            anisotropy_y: anisotropy_profile(pair.eig_y.values()),
            anisotropy_x: anisotropy_profile(pair.eig_x.values()),
        }
    }
}

/// Participation ratios of `H_X` across several base points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub participation_ratios: Vec<f64>,
    /// max / min over the probed points.
    pub spread: f64,
}

pub fn homogeneity_probe(g: &Generator, fe: &FeatureExtractor, points: &[Vec<f64>]) -> Result<HomogeneityReport> {
    let participation_ratios = points
        .iter()
        .map(|z| {
            let h = perceptual_metric(g, fe, z)?;
            Ok(anisotropy_profile(sym_eig(&h)?.values()).participation_ratio)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = participation_ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = participation_ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(HomogeneityReport {
        spread: if min > 0.0 { max / min } else { f64::INFINITY },
        participation_ratios,
    })
}
