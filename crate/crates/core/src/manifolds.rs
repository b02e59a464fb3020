//! Haar sampling on `O(n)` and the Stiefel manifold, polar decomposition,
//! and the Gindikin set.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{self, orthonormality_defect, SymMatrix};
use crate::rng::par_blocks;

/// `n × k` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StiefelRows", into = "StiefelRows")]
pub struct StiefelPoint {
    h: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct StiefelRows(#[serde(with = "linalg::serde_rows")] DMatrix<f64>);

impl TryFrom<StiefelRows> for StiefelPoint {
    type Error = Error;
    fn try_from(r: StiefelRows) -> Result<Self> {
        StiefelPoint::new(r.0)
    }
}

impl From<StiefelPoint> for StiefelRows {
    fn from(p: StiefelPoint) -> Self {
        StiefelRows(p.h)
    }
}

impl StiefelPoint {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.ncols() > h.nrows() {
            return Err(dim_mismatch("StiefelPoint", "n >= k", format!("{}x{}", h.nrows(), h.ncols())));
        }
        let defect = orthonormality_defect(&h);
        if defect > Self::TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "columns are not orthonormal (max |HᵀH − I| = {defect:e})"
            )));
        }
        Ok(StiefelPoint { h })
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn k(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }
}

/// One Haar draw from `O(n)`: QR of a Gaussian matrix with the signs fixed
/// so that `R` has a positive diagonal.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn sample_orthogonal(n: usize, count: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("orthogonal group needs n >= 1".into()));
    }
    let blocks = par_blocks(seed, count, |rng, len| (0..len).map(|_| haar_orthogonal(rng, n)).collect::<Vec<_>>());
    Ok(blocks.into_iter().flatten().collect())
}

/// First `k` columns of Haar orthogonal draws.
pub fn sample_stiefel(n: usize, k: usize, count: usize, seed: u64) -> Result<Vec<StiefelPoint>> {
    if k == 0 || n < k {
        return Err(dim_mismatch("sample_stiefel", "1 <= k <= n", format!("n={n}, k={k}")));
    }
    let blocks = par_blocks(seed, count, |rng, len| {
        (0..len)
            .map(|_| StiefelPoint {
                h: haar_orthogonal(rng, n).columns(0, k).into_owned(),
            })
            .collect::<Vec<_>>()
    });
    Ok(blocks.into_iter().flatten().collect())
}

/// `Z = H R^{1/2}` with `H = Z (ZᵀZ)^{-1/2}` and `R^{1/2} = (ZᵀZ)^{1/2}`.
pub fn polar_decompose(z: &DMatrix<f64>) -> Result<(StiefelPoint, SymMatrix)> {
    let (n, k) = z.shape();
    if k == 0 || n < k {
        return Err(dim_mismatch("polar_decompose", "n >= k >= 1", format!("{n}x{k}")));
    }
    let gram = SymMatrix::from_unchecked(linalg::symmetrize(&(z.transpose() * z)));
    let ev = gram.eigenvalues();
    let ratio = (ev[k - 1].max(0.0) / ev[0]).sqrt();
    if !(ratio > 1e-10) {
        return Err(Error::RankDeficient { ratio });
    }
    let rhalf = gram.sqrt();
    let mut h = z * gram.inv_sqrt()?.matrix();
    // Newton–Schulz steps converge to the same polar factor and remove the
    // rounding left by ill-conditioned Z
    for _ in 0..8 {
        if orthonormality_defect(&h) <= StiefelPoint::TOLERANCE {
            break;
        }
        let hth = h.transpose() * &h;
        h = &h * (DMatrix::<f64>::identity(k, k) * 1.5 - hth * 0.5);
    }
    Ok((StiefelPoint::new(h)?, rhalf))
}

/// The Gindikin set `{0, ½, …, (k−1)/2} ∪ [(k−1)/2, ∞)` of admissible
/// shape parameters for a `k`-dimensional Wishart-type family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GindikinSet {
    pub k: usize,
}

impl GindikinSet {
    pub const HALF_INTEGER_TOL: f64 = 1e-12;

    pub fn discrete_points(&self) -> Vec<f64> {
        (0..self.k).map(|i| i as f64 / 2.0).collect()
    }

    pub fn continuous_start(&self) -> f64 {
        (self.k as f64 - 1.0) / 2.0
    }

    pub fn contains(&self, a: f64) -> bool {
        if a >= self.continuous_start() {
            return true;
        }
        self.discrete_points()
            .iter()
            .any(|&p| (a - p).abs() <= Self::HALF_INTEGER_TOL)
    }
}

pub fn gindikin_contains(k: usize, a: f64) -> bool {
    GindikinSet { k }.contains(a)
}
