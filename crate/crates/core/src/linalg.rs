//! Dense kernels shared by every other module: vectors, row-major matrices,
//! a cyclic Jacobi eigensolver for symmetric matrices, and orthogonal
//! projection against a subset of an eigenbasis.
//!
//! Indices into an [`EigenBasis`] are 0-based here (`0` = top eigenpair).

use std::ops::{Deref, Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Largest matrix accepted by [`sym_eig`].
pub const MAX_EIG_DIM: usize = 4096;

/// Pre-normalization norm below which [`project_out`] reports a collapse.
pub const COLLAPSE_NORM: f64 = 1e-6;

const MAX_SWEEPS: usize = 100;

/// A finite real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Vector::new"));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Unit vector `e_i` of length `len`.
    pub fn basis(len: usize, i: usize) -> Self {
        let mut v = vec![0.0; len];
        v[i] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// `self + alpha * dir`.
    pub fn offset(&self, alpha: f64, dir: &[f64]) -> Result<Self> {
        check_len("Vector::offset", self.len(), dir.len())?;
        Self::new(
            self.0
                .iter()
                .zip(dir)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        )
    }

    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| Self(self.0.iter().map(|v| v / n).collect()))
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose `j`-th column is `columns[j]`.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            check_len("Matrix::from_columns", rows, c.len())?;
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Matrix::matvec", self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Matrix::t_matvec", self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len("Matrix::matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, a) in self.row(i).iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `selfᵀ self`, symmetric by construction.
    pub fn gram(&self) -> SymmetricMatrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..n {
                    g.data[i * n + j] += ri * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g.data[i * n + j] = g.data[j * n + i];
            }
        }
        SymmetricMatrix(g)
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        check_len("Matrix::sub rows", self.rows, other.rows)?;
        check_len("Matrix::sub cols", self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square matrix symmetrized at construction as `(M + Mᵀ) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        check_len("SymmetricMatrix::new", m.rows, m.cols)?;
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SymmetricMatrix::new"));
        }
        let n = m.rows;
        let mut s = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        Ok(Self(s))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Deref for SymmetricMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

/// Eigenpairs sorted by descending eigenvalue; column `j` of `vectors`
/// pairs with `values[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBasis {
    values: Vec<f64>,
    vectors: Matrix,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> Vector {
        Vector(self.vectors.column(j))
    }

    /// Eigenvalues with negative round-off clamped to zero.
    pub fn clamp_nonnegative(mut self) -> Self {
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self
    }

    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| self.vectors[(i, k)] * self.values[k] * self.vectors[(j, k)])
                .sum()
        })
    }

    /// `max |VᵀV − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let vtv = self.vectors.gram();
        vtv.sub(&Matrix::identity(self.dim()))
            .map(|m| m.max_abs())
            .unwrap_or(f64::INFINITY)
    }
}

/// Full eigendecomposition by cyclic Jacobi sweeps.
///
/// Sweep order is fixed (row-cyclic over `p < q`), so the result is a
/// deterministic function of the input. Each eigenvector is signed so that
/// its largest-magnitude entry is positive.
pub fn sym_eig(m: &SymmetricMatrix) -> Result<EigenBasis> {
    let n = m.dim();
    if n > MAX_EIG_DIM {
        return Err(Error::SizeCap {
            what: "eigensolver dimension",
            size: n,
            cap: MAX_EIG_DIM,
        });
    }
    let mut a = m.matrix().clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();
    let tol = 1e-15 * scale;

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Negligible relative to both diagonal entries: drop it.
                if sweeps > 4
                    && (app.abs() + 100.0 * apq.abs()) == app.abs()
                    && (aqq.abs() + 100.0 * apq.abs()) == aqq.abs()
                {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        let off = off_norm(&a);
        converged = off <= tol || !rotated;
    }
    let off = off_norm(&a);
    if !converged && off > 1e-10 * scale {
        return Err(Error::NonConvergence {
            sweeps,
            off_diagonal: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        let lead = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        if col[lead] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in col.into_iter().enumerate() {
            vectors[(i, dst)] = x;
        }
    }
    Ok(EigenBasis { values, vectors })
}

/// Removes the components of `d` along the eigenvectors listed in `indices`,
/// renormalizing after each removal. Returns a unit vector.
pub fn project_out(d: &[f64], basis: &EigenBasis, indices: &[usize]) -> Result<Vector> {
    check_len("project_out", basis.dim(), d.len())?;
    let n0 = norm(d);
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(Error::Collapse {
            index: indices.first().copied().unwrap_or(0),
            norm: n0,
        });
    }
    let mut out: Vec<f64> = d.iter().map(|v| v / n0).collect();
    for &j in indices {
        if j >= basis.dim() {
            return Err(Error::InvalidSpec(format!(
                "eigenvector index {j} out of range for dimension {}",
                basis.dim()
            )));
        }
        let u = basis.vectors.column(j);
        let c = dot(&out, &u);
        for (o, uj) in out.iter_mut().zip(&u) {
            *o -= c * uj;
        }
        let n = norm(&out);
        if n < COLLAPSE_NORM {
            return Err(Error::Collapse { index: j, norm: n });
        }
        out.iter_mut().for_each(|o| *o /= n);
    }
    Vector::new(out)
}

/// `vᵀ M v`.
pub fn rayleigh(m: &SymmetricMatrix, v: &[f64]) -> Result<f64> {
    Ok(dot(v, &m.matvec(v)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> SymmetricMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymmetricMatrix::new(m).unwrap()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eig(&SymmetricMatrix::new(Matrix::identity(3)).unwrap()).unwrap();
        assert_eq!(e.values(), &[1.0, 1.0, 1.0]);
        assert!(e.orthonormality_error() < 1e-12);
    }

    #[test]
    fn diagonal_is_sorted_and_axis_aligned() {
        let e = sym_eig(&SymmetricMatrix::new(Matrix::diagonal(&[3.0, 1.0, 2.0])).unwrap())
            .unwrap();
        assert_eq!(e.values(), &[3.0, 2.0, 1.0]);
        assert_eq!(e.vector(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(e.vector(1).as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(e.vector(2).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn random_16_reconstructs() {
        let m = random_symmetric(16, 42);
        let e = sym_eig(&m).unwrap();
        let err = e.reconstruct().sub(m.matrix()).unwrap().frobenius();
        assert!(err <= 1e-9, "reconstruction error {err:e}");
        assert!(e.orthonormality_error() <= 1e-8);
        for w in e.values().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for j in 0..16 {
            let v = e.vector(j);
            let mv = m.matvec(&v).unwrap();
            let r: f64 = mv
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - e.values()[j] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r <= 1e-8 * e.values()[j].abs().max(1.0));
        }
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let e = sym_eig(&random_symmetric(9, 3)).unwrap();
        for j in 0..9 {
            let v = e.vector(j);
            let lead = v.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn sym_eig_is_deterministic() {
        let m = random_symmetric(12, 8);
        assert_eq!(sym_eig(&m).unwrap(), sym_eig(&m).unwrap());
    }

    #[test]
    fn oversize_matrix_rejected() {
        let m = SymmetricMatrix(Matrix::zeros(MAX_EIG_DIM + 1, MAX_EIG_DIM + 1));
        assert!(matches!(sym_eig(&m), Err(Error::SizeCap { .. })));
    }

    fn diag3() -> EigenBasis {
        sym_eig(&SymmetricMatrix::new(Matrix::diagonal(&[3.0, 2.0, 1.0])).unwrap()).unwrap()
    }

    #[test]
    fn project_out_noop_when_orthogonal() {
        let basis = diag3();
        let d = project_out(&[0.0, 2.0, 0.0], &basis, &[0]).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn project_out_span_collapses() {
        let basis = diag3();
        let u1 = basis.vector(0);
        assert!(matches!(
            project_out(&u1, &basis, &[0]),
            Err(Error::Collapse { index: 0, .. })
        ));
    }

    #[test]
    fn project_out_hand_case() {
        let basis = diag3();
        let s = 1.0 / 2f64.sqrt();
        // (u1 + u3)/√2 with u1 = e0, u3 = e2.
        let d = project_out(&[s, 0.0, s], &basis, &[0]).unwrap();
        let u3 = basis.vector(2);
        for (a, b) in d.iter().zip(u3.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rayleigh_cases() {
        let id = SymmetricMatrix::new(Matrix::identity(2)).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((rayleigh(&id, &[s, s]).unwrap() - 1.0).abs() < 1e-15);
        let m = SymmetricMatrix::new(Matrix::diagonal(&[3.0, 1.0])).unwrap();
        assert_eq!(rayleigh(&m, &[1.0, 0.0]).unwrap(), 3.0);

        let m = random_symmetric(10, 5);
        let e = sym_eig(&m).unwrap();
        let r = rayleigh(&m, &e.vector(0)).unwrap();
        assert!((r - e.values()[0]).abs() < 1e-9);
        assert!(matches!(
            rayleigh(&m, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn symmetrization_at_construction() {
        let m = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 4.0, 1.0]).unwrap();
        let s = SymmetricMatrix::new(m).unwrap();
        assert_eq!(s[(0, 1)], 3.0);
        assert_eq!(s[(1, 0)], 3.0);
    }

    #[test]
    fn vector_rejects_nan() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
    }
}
