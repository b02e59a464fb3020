//! Dense linear-algebra helpers shared by every module.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dim_mismatch, Error, Result};

/// Relative threshold below which a symmetric matrix is not treated as
/// positive definite: `λ_min > PD_REL_TOL · λ_max`.
pub const PD_REL_TOL: f64 = 1e-10;

/// Real symmetric matrix with a lazily cached eigendecomposition.
///
/// Eigenvalues are stored in decreasing order with matching eigenvector
/// columns.
#[derive(Clone, Debug)]
pub struct SymMatrix {
    mat: DMatrix<f64>,
    eig: OnceLock<(DVector<f64>, DMatrix<f64>)>,
}

impl SymMatrix {
    /// Accepts matrices symmetric to `1e-10` relative and symmetrizes them.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(dim_mismatch(
                "SymMatrix::new",
                "square matrix",
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ));
        }
        let scale = mat.amax().max(1.0);
        let asym = (&mat - mat.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidParameter(format!(
                "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
            )));
        }
        Ok(Self::from_unchecked(symmetrize(&mat)))
    }

    pub(crate) fn from_unchecked(mat: DMatrix<f64>) -> Self {
        SymMatrix {
            mat,
            eig: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_unchecked(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_unchecked(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_unchecked(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    fn decomposition(&self) -> &(DVector<f64>, DMatrix<f64>) {
        self.eig.get_or_init(|| sorted_eigen(&self.mat))
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.decomposition().0
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.decomposition().1
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_positive_definite(&self) -> bool {
        let ev = self.eigenvalues();
        if ev.is_empty() {
            return false;
        }
        let (max, min) = (ev[0], ev[ev.len() - 1]);
        max > 0.0 && min > PD_REL_TOL * max
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        let ev = self.eigenvalues();
        let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ev.iter().all(|&v| v >= -PD_REL_TOL * max.max(f64::MIN_POSITIVE))
    }

    pub fn require_pd(&self, what: &str) -> Result<()> {
        if self.is_positive_definite() {
            Ok(())
        } else {
            let ev = self.eigenvalues();
            Err(Error::NotPositiveDefinite(format!(
                "{what}: eigenvalues {:?}",
                ev.as_slice()
            )))
        }
    }

    /// Applies `f` to the spectrum: `V f(Λ) Vᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let (vals, vecs) = self.decomposition();
        let mapped = DVector::from_iterator(vals.len(), vals.iter().map(|&v| f(v)));
        let m = vecs * DMatrix::from_diagonal(&mapped) * vecs.transpose();
        SymMatrix::from_unchecked(symmetrize(&m))
    }

    /// Symmetric square root of a PSD matrix (negative rounding noise clamped).
    pub fn sqrt(&self) -> SymMatrix {
        self.map_spectrum(|v| v.max(0.0).sqrt())
    }

    pub fn inverse(&self) -> Result<SymMatrix> {
        if self.eigenvalues().iter().any(|&v| v == 0.0) {
            return Err(Error::Domain("singular matrix has no inverse".into()));
        }
        Ok(self.map_spectrum(|v| 1.0 / v))
    }

    pub fn inv_sqrt(&self) -> Result<SymMatrix> {
        self.require_pd("inverse square root")?;
        Ok(self.map_spectrum(|v| 1.0 / v.sqrt()))
    }

    /// `ln |det|`, via the eigenvalues.
    pub fn ln_abs_det(&self) -> f64 {
        self.eigenvalues().iter().map(|v| v.abs().ln()).sum()
    }

    pub fn det(&self) -> f64 {
        self.eigenvalues().iter().product()
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix::from_unchecked(&self.mat * c)
    }

    /// Congruence `Aᵀ self A` (result is symmetric by construction).
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::from_unchecked(symmetrize(&(a.transpose() * &self.mat * a)))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.mat)
    }
}

impl PartialEq for SymMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Eigenvalues of a symmetric matrix, largest first.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    sorted_eigen(&symmetrize(m)).0.iter().copied().collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `vec(Xᵀ)`: the rows of `X` stacked, so entry `(r, c)` lands at `r·k + c`.
pub fn vec_t(x: &DMatrix<f64>) -> DVector<f64> {
    let (n, k) = x.shape();
    DVector::from_fn(n * k, |idx, _| x[(idx / k, idx % k)])
}

/// Inverse of [`vec_t`].
pub fn unvec_t(v: &DVector<f64>, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |r, c| v[r * k + c])
}

/// Orthonormality defect `max |QᵀQ − I|`.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let k = q.ncols();
    (q.transpose() * q - DMatrix::<f64>::identity(k, k)).amax()
}

/// Serde helper for general matrices stored as row-major nested arrays.
pub mod serde_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
