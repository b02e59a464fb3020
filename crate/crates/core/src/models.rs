//! The four matrix-normal families T1 ⊃ T1½ ⊃ T2 ⊃ T3.
//!
//! A draw is an `n × k` matrix `X` (rows are samples, columns variables) with
//! `vec(Xᵀ) ~ N(vec(Mᵀ), Θ⁻¹)`, where `vec(Xᵀ)` stacks the rows of `X` and
//! `Θ` is assembled from sample-level (n×n) ⊗ variable-level (k×k) factors.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{kron, matrix_from_rows, matrix_to_rows, orthonormality_defect, symmetrize, unvec_t, vec_t, SymMatrix};
use crate::rng::{par_blocks, StreamRng};

/// Tolerance for the structural constraints (orthonormal frames, transposed
/// cross blocks, zero diagonals).
pub const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    T1,
    #[serde(rename = "T1_5")]
    T15,
    T2,
    T3,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 4] = [FamilyTag::T1, FamilyTag::T15, FamilyTag::T2, FamilyTag::T3];
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyTag::T1 => "T1",
            FamilyTag::T15 => "T1_5",
            FamilyTag::T2 => "T2",
            FamilyTag::T3 => "T3",
        })
    }
}

impl FromStr for FamilyTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T1" | "t1" => Ok(FamilyTag::T1),
            "T1_5" | "T15" | "T1.5" | "t1_5" | "t15" => Ok(FamilyTag::T15),
            "T2" | "t2" => Ok(FamilyTag::T2),
            "T3" | "t3" => Ok(FamilyTag::T3),
            _ => Err(Error::InvalidParameter(format!("unknown family `{s}`"))),
        }
    }
}

/// Degrees of freedom as tabulated for each family:
/// T1 `½n(n−1)k² + nk`, T1½ `½n(n+1)k`, T2 `nk`, T3 `n + k`.
///
/// These count the block (or eigenvalue) parameters and leave out the
/// orthonormal frames. For T1 that is `k·n(n+1)/2` for the diagonal blocks
/// plus `n(n−1)` for each of the `½k(k−1)` zero-diagonal cross blocks.
pub fn degrees_of_freedom(tag: FamilyTag, n: usize, k: usize) -> u64 {
    let (n, k) = (n as u64, k as u64);
    match tag {
        FamilyTag::T1 => n * (n - 1) * k * k / 2 + n * k,
        FamilyTag::T15 => n * (n + 1) * k / 2,
        FamilyTag::T2 => n * k,
        FamilyTag::T3 => n + k,
    }
}

fn check_frame(frame: &DMatrix<f64>, len: usize, what: &str) -> Result<()> {
    if frame.shape() != (len, len) {
        return Err(dim_mismatch("orthonormal frame", format!("{len} vectors of length {len}"), format!("{:?}", frame.shape())));
    }
    let d = orthonormality_defect(frame);
    if d > STRUCTURE_TOL {
        return Err(Error::InvalidModel(format!("{what} is not orthonormal (max |BᵀB − I| = {d:e})")));
    }
    Ok(())
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(dim_mismatch("model block", format!("{what} {n}x{n}"), format!("{}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Frame vectors stored as matrix columns, serialized as a list of vectors.
fn frame_to_vectors(f: &DMatrix<f64>) -> Vec<Vec<f64>> {
    f.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn frame_from_vectors(v: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    Ok(matrix_from_rows(v)?.transpose())
}

/// T1: `Θ₁ = Σ_{j,j'} A_{jj'} ⊗ b_j b_{j'}ᵀ` with `A_{jj'}ᵀ = A_{j'j}`, cross
/// blocks with zero diagonal, diagonal blocks with positive diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "T1Raw", into = "T1Raw")]
pub struct T1Spec {
    n: usize,
    k: usize,
    a: Vec<Vec<DMatrix<f64>>>,
    b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct T1Raw {
    n: usize,
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<Vec<f64>>>>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<T1Raw> for T1Spec {
    type Error = Error;
    fn try_from(r: T1Raw) -> Result<Self> {
        let a = r
            .a
            .iter()
            .map(|row| row.iter().map(|m| matrix_from_rows(m)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        T1Spec::new(r.n, r.k, a, frame_from_vectors(&r.b)?)
    }
}

impl From<T1Spec> for T1Raw {
    fn from(s: T1Spec) -> Self {
        T1Raw {
            n: s.n,
            k: s.k,
            a: s.a.iter().map(|row| row.iter().map(matrix_to_rows).collect()).collect(),
            b: frame_to_vectors(&s.b),
        }
    }
}

impl T1Spec {
    /// `a[j][j']` is `A_{jj'}`; `b` holds the frame vectors as columns.
    pub fn new(n: usize, k: usize, a: Vec<Vec<DMatrix<f64>>>, b: DMatrix<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidModel("n and k must be positive".into()));
        }
        if a.len() != k || a.iter().any(|r| r.len() != k) {
            return Err(dim_mismatch("T1 block grid", format!("{k}x{k}"), format!("{} rows", a.len())));
        }
        check_frame(&b, k, "b")?;
        let scale = a.iter().flatten().fold(1.0f64, |m, x| m.max(x.amax()));
        for i in 0..k {
            for j in 0..k {
                check_square(&a[i][j], n, "A_ij")?;
                let asym = (&a[i][j] - a[j][i].transpose()).amax();
                if asym > STRUCTURE_TOL * scale {
                    return Err(Error::InvalidModel(format!(
                        "A_{{{}{}}}ᵀ differs from A_{{{}{}}} by {asym:e}",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1
                    )));
                }
                for r in 0..n {
                    let d = a[i][j][(r, r)];
                    if i == j && !(d > 0.0) {
                        return Err(Error::InvalidModel(format!("A_{{{}{}}} has a non-positive diagonal entry", i + 1, i + 1)));
                    }
                    if i != j && d.abs() > STRUCTURE_TOL * scale {
                        return Err(Error::InvalidModel(format!("cross block A_{{{}{}}} has a nonzero diagonal", i + 1, j + 1)));
                    }
                }
            }
        }
        let spec = T1Spec { n, k, a, b };
        require_pd_precision(&spec.precision_matrix())?;
        Ok(spec)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block(&self, j: usize, jp: usize) -> &DMatrix<f64> {
        &self.a[j][jp]
    }

    pub fn blocks(&self) -> &[Vec<DMatrix<f64>>] {
        &self.a
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.b
    }

    fn precision_matrix(&self) -> DMatrix<f64> {
        let mut theta = DMatrix::zeros(self.n * self.k, self.n * self.k);
        for j in 0..self.k {
            for jp in 0..self.k {
                let bjj = self.b.column(j) * self.b.column(jp).transpose();
                theta += kron(&self.a[j][jp], &bjj);
            }
        }
        theta
    }
}

/// T1½: block-diagonal T1, `Θ = Σ_j A_jj ⊗ b_j b_jᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "T15Raw", into = "T15Raw")]
pub struct T15Spec {
    n: usize,
    k: usize,
    a: Vec<SymMatrix>,
    b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct T15Raw {
    n: usize,
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<T15Raw> for T15Spec {
    type Error = Error;
    fn try_from(r: T15Raw) -> Result<Self> {
        let a = r.a.iter().map(|m| matrix_from_rows(m)).collect::<Result<Vec<_>>>()?;
        T15Spec::new(r.n, r.k, a, frame_from_vectors(&r.b)?)
    }
}

impl From<T15Spec> for T15Raw {
    fn from(s: T15Spec) -> Self {
        T15Raw {
            n: s.n,
            k: s.k,
            a: s.a.iter().map(|m| m.to_rows()).collect(),
            b: frame_to_vectors(&s.b),
        }
    }
}

impl T15Spec {
    pub fn new(n: usize, k: usize, a: Vec<DMatrix<f64>>, b: DMatrix<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidModel("n and k must be positive".into()));
        }
        if a.len() != k {
            return Err(dim_mismatch("T1_5 blocks", k, a.len()));
        }
        check_frame(&b, k, "b")?;
        let a = a
            .into_iter()
            .enumerate()
            .map(|(j, m)| {
                check_square(&m, n, "A_jj")?;
                if (0..n).any(|r| !(m[(r, r)] > 0.0)) {
                    return Err(Error::InvalidModel(format!("A_{{{}{}}} has a non-positive diagonal entry", j + 1, j + 1)));
                }
                SymMatrix::new(m).map_err(|e| Error::InvalidModel(format!("A_{{{}{}}}: {e}", j + 1, j + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = T15Spec { n, k, a, b };
        for (j, m) in spec.a.iter().enumerate() {
            if !m.is_positive_definite() {
                return Err(Error::InvalidModel(format!("Θ is not positive definite: A_{{{}{}}} is not", j + 1, j + 1)));
            }
        }
        Ok(spec)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn blocks(&self) -> &[SymMatrix] {
        &self.a
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// The same model written as a T1 spec with zero cross blocks.
    pub fn to_t1(&self) -> Result<T1Spec> {
        let a = (0..self.k)
            .map(|j| {
                (0..self.k)
                    .map(|jp| {
                        if j == jp {
                            self.a[j].matrix().clone()
                        } else {
                            DMatrix::zeros(self.n, self.n)
                        }
                    })
                    .collect()
            })
            .collect();
        T1Spec::new(self.n, self.k, a, self.b.clone())
    }
}

/// T2: `Θ = Σ_{i,j} γ_ij a_i a_iᵀ ⊗ b_j b_jᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "T2Raw", into = "T2Raw")]
pub struct T2Spec {
    n: usize,
    k: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct T2Raw {
    n: usize,
    k: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

impl TryFrom<T2Raw> for T2Spec {
    type Error = Error;
    fn try_from(r: T2Raw) -> Result<Self> {
        T2Spec::new(r.n, r.k, frame_from_vectors(&r.a)?, frame_from_vectors(&r.b)?, matrix_from_rows(&r.gamma)?)
    }
}

impl From<T2Spec> for T2Raw {
    fn from(s: T2Spec) -> Self {
        T2Raw {
            n: s.n,
            k: s.k,
            a: frame_to_vectors(&s.a),
            b: frame_to_vectors(&s.b),
            gamma: matrix_to_rows(&s.gamma),
        }
    }
}

impl T2Spec {
    pub fn new(n: usize, k: usize, a: DMatrix<f64>, b: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidModel("n and k must be positive".into()));
        }
        check_frame(&a, n, "a")?;
        check_frame(&b, k, "b")?;
        if gamma.shape() != (n, k) {
            return Err(dim_mismatch("T2 gamma", format!("{n}x{k}"), format!("{:?}", gamma.shape())));
        }
        if gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidModel("every γ_ij must be positive".into()));
        }
        let spec = T2Spec { n, k, a, b, gamma };
        let (max, min) = spec.gamma.iter().fold((0.0f64, f64::INFINITY), |(mx, mn), &g| (mx.max(g), mn.min(g)));
        if !(min > crate::linalg::PD_REL_TOL * max) {
            return Err(Error::InvalidModel("Θ is numerically singular (γ spread)".into()));
        }
        Ok(spec)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn frame_a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn frame_b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// `A_jj = Σ_i γ_ij a_i a_iᵀ`; always exact.
    pub fn to_t15(&self) -> Result<T15Spec> {
        let blocks = (0..self.k)
            .map(|j| {
                let d = DMatrix::from_diagonal(&self.gamma.column(j).into_owned());
                symmetrize(&(&self.a * d * self.a.transpose()))
            })
            .collect();
        T15Spec::new(self.n, self.k, blocks, self.b.clone())
    }
}

/// T3 (Kronecker-separable): `Θ = Φ⁻¹ ⊗ Ψ⁻¹`, optional mean `M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "T3Raw", into = "T3Raw")]
pub struct T3Spec {
    n: usize,
    k: usize,
    phi: SymMatrix,
    psi: SymMatrix,
    m: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct T3Raw {
    n: usize,
    k: usize,
    #[serde(rename = "Phi")]
    phi: Vec<Vec<f64>>,
    #[serde(rename = "Psi")]
    psi: Vec<Vec<f64>>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    m: Option<Vec<Vec<f64>>>,
}

impl TryFrom<T3Raw> for T3Spec {
    type Error = Error;
    fn try_from(r: T3Raw) -> Result<Self> {
        let m = r.m.map(|rows| matrix_from_rows(&rows)).transpose()?;
        T3Spec::new(r.n, r.k, matrix_from_rows(&r.phi)?, matrix_from_rows(&r.psi)?, m)
    }
}

impl From<T3Spec> for T3Raw {
    fn from(s: T3Spec) -> Self {
        let m = (s.m.amax() > 0.0).then(|| matrix_to_rows(&s.m));
        T3Raw {
            n: s.n,
            k: s.k,
            phi: s.phi.to_rows(),
            psi: s.psi.to_rows(),
            m,
        }
    }
}

impl T3Spec {
    pub fn new(n: usize, k: usize, phi: DMatrix<f64>, psi: DMatrix<f64>, m: Option<DMatrix<f64>>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidModel("n and k must be positive".into()));
        }
        check_square(&phi, n, "Phi")?;
        check_square(&psi, k, "Psi")?;
        let phi = SymMatrix::new(phi).map_err(|e| Error::InvalidModel(format!("Phi: {e}")))?;
        let psi = SymMatrix::new(psi).map_err(|e| Error::InvalidModel(format!("Psi: {e}")))?;
        phi.require_pd("Phi")?;
        psi.require_pd("Psi")?;
        let m = m.unwrap_or_else(|| DMatrix::zeros(n, k));
        if m.shape() != (n, k) {
            return Err(dim_mismatch("T3 mean", format!("{n}x{k}"), format!("{:?}", m.shape())));
        }
        Ok(T3Spec { n, k, phi, psi, m })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn phi(&self) -> &SymMatrix {
        &self.phi
    }

    pub fn psi(&self) -> &SymMatrix {
        &self.psi
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn is_central(&self) -> bool {
        self.m.iter().all(|&v| v == 0.0)
    }

    /// `Φ⁻¹ = Σ α_i a_i a_iᵀ`, `Ψ⁻¹ = Σ β_j b_j b_jᵀ`, `γ_ij = α_i β_j`.
    pub fn to_t2(&self) -> Result<T2Spec> {
        if !self.is_central() {
            return Err(Error::InvalidModel("only central T3 models nest in T2".into()));
        }
        let alpha = self.phi.eigenvalues().map(|v| 1.0 / v);
        let beta = self.psi.eigenvalues().map(|v| 1.0 / v);
        let gamma = &alpha * beta.transpose();
        T2Spec::new(self.n, self.k, self.phi.eigenvectors().clone(), self.psi.eigenvectors().clone(), gamma)
    }
}

/// Tagged union of the four families (`"family": "T1" | "T1_5" | "T2" | "T3"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelSpec {
    T1(T1Spec),
    #[serde(rename = "T1_5")]
    T15(T15Spec),
    T2(T2Spec),
    T3(T3Spec),
}

impl From<T1Spec> for ModelSpec {
    fn from(s: T1Spec) -> Self {
        ModelSpec::T1(s)
    }
}
impl From<T15Spec> for ModelSpec {
    fn from(s: T15Spec) -> Self {
        ModelSpec::T15(s)
    }
}
impl From<T2Spec> for ModelSpec {
    fn from(s: T2Spec) -> Self {
        ModelSpec::T2(s)
    }
}
impl From<T3Spec> for ModelSpec {
    fn from(s: T3Spec) -> Self {
        ModelSpec::T3(s)
    }
}

fn require_pd_precision(theta: &DMatrix<f64>) -> Result<SymMatrix> {
    let s = SymMatrix::from_unchecked(symmetrize(theta));
    if !s.is_positive_definite() {
        let ev = s.eigenvalues();
        return Err(Error::InvalidModel(format!(
            "precision matrix is not positive definite (λ_min = {:e}, λ_max = {:e})",
            ev[ev.len() - 1],
            ev[0]
        )));
    }
    Ok(s)
}

impl ModelSpec {
    pub fn family(&self) -> FamilyTag {
        match self {
            ModelSpec::T1(_) => FamilyTag::T1,
            ModelSpec::T15(_) => FamilyTag::T15,
            ModelSpec::T2(_) => FamilyTag::T2,
            ModelSpec::T3(_) => FamilyTag::T3,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ModelSpec::T1(s) => (s.n, s.k),
            ModelSpec::T15(s) => (s.n, s.k),
            ModelSpec::T2(s) => (s.n, s.k),
            ModelSpec::T3(s) => (s.n, s.k),
        }
    }

    /// Mean matrix (zero except for T3 with `M`).
    pub fn mean(&self) -> DMatrix<f64> {
        match self {
            ModelSpec::T3(s) => s.m.clone(),
            _ => {
                let (n, k) = self.dims();
                DMatrix::zeros(n, k)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The same distribution as a T1 spec (central models only).
    pub fn to_t1(&self) -> Result<T1Spec> {
        match self {
            ModelSpec::T1(s) => Ok(s.clone()),
            ModelSpec::T15(s) => s.to_t1(),
            ModelSpec::T2(s) => s.to_t15()?.to_t1(),
            ModelSpec::T3(s) => s.to_t2()?.to_t15()?.to_t1(),
        }
    }
}

/// `Θ_i`, the `nk × nk` precision of `vec(Xᵀ)`.
pub fn build_precision(spec: &ModelSpec) -> Result<SymMatrix> {
    let theta = match spec {
        ModelSpec::T1(s) => s.precision_matrix(),
        ModelSpec::T15(s) => {
            let mut t = DMatrix::zeros(s.n * s.k, s.n * s.k);
            for (j, a) in s.a.iter().enumerate() {
                t += kron(a.matrix(), &(s.b.column(j) * s.b.column(j).transpose()));
            }
            t
        }
        ModelSpec::T2(s) => {
            let mut t = DMatrix::zeros(s.n * s.k, s.n * s.k);
            for i in 0..s.n {
                let ai = s.a.column(i) * s.a.column(i).transpose();
                for j in 0..s.k {
                    let bj = s.b.column(j) * s.b.column(j).transpose();
                    t += kron(&ai, &bj) * s.gamma[(i, j)];
                }
            }
            t
        }
        ModelSpec::T3(s) => kron(s.phi.inverse()?.matrix(), s.psi.inverse()?.matrix()),
    };
    require_pd_precision(&theta)
}

/// `ln |Θ|` through each family's structure.
pub fn ln_det_precision(spec: &ModelSpec) -> Result<f64> {
    Ok(match spec {
        ModelSpec::T1(s) => {
            let theta = s.precision_matrix();
            let chol = Cholesky::new(symmetrize(&theta))
                .ok_or_else(|| Error::InvalidModel("precision matrix is not positive definite".into()))?;
            2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        }
        ModelSpec::T15(s) => s.a.iter().map(|a| a.ln_abs_det()).sum(),
        ModelSpec::T2(s) => s.gamma.iter().map(|g| g.ln()).sum(),
        ModelSpec::T3(s) => -(s.k as f64) * s.phi.ln_abs_det() - (s.n as f64) * s.psi.ln_abs_det(),
    })
}

/// Quadratic form `vec(Xᵀ − Mᵀ)ᵀ Θ vec(Xᵀ − Mᵀ)` through each family's
/// trace display.
pub fn quadratic_form(spec: &ModelSpec, x: &DMatrix<f64>) -> Result<f64> {
    let (n, k) = spec.dims();
    if x.shape() != (n, k) {
        return Err(dim_mismatch("log_density", format!("{n}x{k}"), format!("{}x{}", x.nrows(), x.ncols())));
    }
    Ok(match spec {
        ModelSpec::T1(s) => {
            let y = x * &s.b;
            let mut q = 0.0;
            for j in 0..k {
                for jp in 0..k {
                    q += y.column(j).dot(&(&s.a[j][jp] * y.column(jp)));
                }
            }
            q
        }
        ModelSpec::T15(s) => {
            let y = x * &s.b;
            (0..k).map(|j| y.column(j).dot(&(s.a[j].matrix() * y.column(j)))).sum()
        }
        ModelSpec::T2(s) => {
            let c = s.a.transpose() * x * &s.b;
            c.component_mul(&c).component_mul(&s.gamma).sum()
        }
        ModelSpec::T3(s) => {
            let d = x - &s.m;
            (s.phi.inverse()?.matrix() * &d * s.psi.inverse()?.matrix() * d.transpose()).trace()
        }
    })
}

/// `ln c_i − ½ Q(X)` with `c_i = |Θ_i|^{1/2} / (2π)^{nk/2}`.
pub fn log_density(spec: &ModelSpec, x: &DMatrix<f64>) -> Result<f64> {
    let (n, k) = spec.dims();
    let q = quadratic_form(spec, x)?;
    Ok(0.5 * ln_det_precision(spec)? - 0.5 * (n * k) as f64 * (2.0 * PI).ln() - 0.5 * q)
}

/// Exact sampler: `Θ = L Lᵀ`, `vec(Xᵀ) = vec(Mᵀ) + L⁻ᵀ z`.
#[derive(Clone, Debug)]
pub struct Sampler {
    n: usize,
    k: usize,
    lower: DMatrix<f64>,
    mean: DMatrix<f64>,
}

impl Sampler {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let theta = build_precision(spec)?;
        let chol = Cholesky::new(theta.matrix().clone())
            .ok_or_else(|| Error::InvalidModel("Cholesky factorization of Θ failed".into()))?;
        let (n, k) = spec.dims();
        Ok(Sampler {
            n,
            k,
            lower: chol.unpack(),
            mean: spec.mean(),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let z = DVector::<f64>::from_fn(self.n * self.k, |_, _| rng.sample(StandardNormal));
        let v = self
            .lower
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        unvec_t(&v, self.n, self.k) + &self.mean
    }
}

/// The alternative T3 sampler `X = Φ^{1/2} G Ψ^{1/2} + M`.
#[derive(Clone, Debug)]
pub struct KroneckerSampler {
    phi_half: DMatrix<f64>,
    psi_half: DMatrix<f64>,
    mean: DMatrix<f64>,
}

impl KroneckerSampler {
    pub fn new(spec: &T3Spec) -> Self {
        KroneckerSampler {
            phi_half: spec.phi.sqrt().into_matrix(),
            psi_half: spec.psi.sqrt().into_matrix(),
            mean: spec.m.clone(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let (n, k) = self.mean.shape();
        let g = DMatrix::<f64>::from_fn(n, k, |_, _| rng.sample(StandardNormal));
        &self.phi_half * g * &self.psi_half + &self.mean
    }
}

/// `count` i.i.d. draws, deterministic in `seed`.
pub fn sample(spec: &ModelSpec, count: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let sampler = Sampler::new(spec)?;
    let blocks = par_blocks(seed, count, |rng, len| (0..len).map(|_| sampler.draw(rng)).collect::<Vec<_>>());
    Ok(blocks.into_iter().flatten().collect())
}

pub fn sample_t3_kronecker(spec: &T3Spec, count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let sampler = KroneckerSampler::new(spec);
    let blocks = par_blocks(seed, count, |rng, len| (0..len).map(|_| sampler.draw(rng)).collect::<Vec<_>>());
    blocks.into_iter().flatten().collect()
}

/// Reference route: dense `N(vec(Mᵀ), Θ⁻¹)` log-density of `vec(Xᵀ)` from
/// [`build_precision`] and a Cholesky factorization.
pub fn mvn_log_density(theta: &SymMatrix, mean: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let d = theta.dim();
    if mean.len() != d || v.len() != d {
        return Err(dim_mismatch("mvn_log_density", d, v.len()));
    }
    let chol = Cholesky::new(theta.matrix().clone())
        .ok_or_else(|| Error::NotPositiveDefinite("precision".into()))?;
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let r = v - mean;
    let q = r.dot(&(theta.matrix() * &r));
    Ok(0.5 * ln_det - 0.5 * d as f64 * (2.0 * PI).ln() - 0.5 * q)
}

/// Dense-oracle log-density for any spec.
pub fn dense_log_density(spec: &ModelSpec, x: &DMatrix<f64>) -> Result<f64> {
    let theta = build_precision(spec)?;
    mvn_log_density(&theta, &vec_t(&spec.mean()), &vec_t(x))
}

/// Random valid specs for tests and experiments.
pub mod random {
    use super::*;
    use crate::manifolds::haar_orthogonal;

    fn gauss(rng: &mut StreamRng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    /// Well-conditioned SPD matrix: `G Gᵀ / (n+3) + ½ I`.
    pub fn spd(rng: &mut StreamRng, n: usize) -> DMatrix<f64> {
        let g = gauss(rng, n, n + 3);
        symmetrize(&(&g * g.transpose() / (n + 3) as f64 + DMatrix::identity(n, n) * 0.5))
    }

    pub fn t3(rng: &mut StreamRng, n: usize, k: usize, with_mean: bool) -> T3Spec {
        let m = with_mean.then(|| gauss(rng, n, k));
        T3Spec::new(n, k, spd(rng, n), spd(rng, k), m).expect("random SPD factors")
    }

    pub fn t2(rng: &mut StreamRng, n: usize, k: usize) -> T2Spec {
        let a = haar_orthogonal(rng, n);
        let b = haar_orthogonal(rng, k);
        let gamma = DMatrix::from_fn(n, k, |_, _| 0.5 + 1.5 * rng.random::<f64>());
        T2Spec::new(n, k, a, b, gamma).expect("random T2")
    }

    pub fn t15(rng: &mut StreamRng, n: usize, k: usize) -> T15Spec {
        let b = haar_orthogonal(rng, k);
        let a = (0..k).map(|_| spd(rng, n)).collect();
        T15Spec::new(n, k, a, b).expect("random T1_5")
    }

    /// Diagonal blocks SPD, cross blocks small with zero diagonal; redrawn
    /// until Θ is positive definite.
    pub fn t1(rng: &mut StreamRng, n: usize, k: usize) -> T1Spec {
        loop {
            let b = haar_orthogonal(rng, k);
            let mut a = vec![vec![DMatrix::zeros(n, n); k]; k];
            for j in 0..k {
                a[j][j] = spd(rng, n);
                for jp in j + 1..k {
                    let mut c = gauss(rng, n, n) * (0.3 / (n * k) as f64);
                    c.fill_diagonal(0.0);
                    a[jp][j] = c.transpose();
                    a[j][jp] = c;
                }
            }
            if let Ok(s) = T1Spec::new(n, k, a, b) {
                return s;
            }
        }
    }

    pub fn spec(rng: &mut StreamRng, tag: FamilyTag, n: usize, k: usize) -> ModelSpec {
        match tag {
            FamilyTag::T1 => t1(rng, n, k).into(),
            FamilyTag::T15 => t15(rng, n, k).into(),
            FamilyTag::T2 => t2(rng, n, k).into(),
            FamilyTag::T3 => t3(rng, n, k, false).into(),
        }
    }

    pub fn matrix(rng: &mut StreamRng, n: usize, k: usize) -> DMatrix<f64> {
        gauss(rng, n, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate, integrate_2d};
    use crate::rng::stream;
    use crate::stats::Moments;

    #[test]
    fn t3_precision_examples() {
        let s = T3Spec::new(2, 3, DMatrix::identity(2, 2), DMatrix::identity(3, 3), None).unwrap();
        let t = build_precision(&s.into()).unwrap();
        assert_eq!(t.matrix(), &DMatrix::<f64>::identity(6, 6));

        let phi = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let psi = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / 3.0, 0.25]));
        let t = build_precision(&T3Spec::new(2, 2, phi, psi, None).unwrap().into()).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0, 6.0, 8.0]));
        assert!((t.matrix() - want).amax() < 1e-14);
    }

    #[test]
    fn t2_matches_t3_precision() {
        let mut rng = stream(1, 0);
        let t3 = random::t3(&mut rng, 3, 2, false);
        let t2 = t3.to_t2().unwrap();
        let a = build_precision(&t3.clone().into()).unwrap();
        let b = build_precision(&t2.into()).unwrap();
        assert!((a.matrix() - b.matrix()).amax() < 1e-14 * a.matrix().amax().max(1.0) * 10.0);
    }

    #[test]
    fn dof_table() {
        assert_eq!(degrees_of_freedom(FamilyTag::T3, 3, 2), 5);
        assert_eq!(degrees_of_freedom(FamilyTag::T2, 3, 2), 6);
        assert_eq!(degrees_of_freedom(FamilyTag::T15, 2, 3), 9);
        // T1: diagonal blocks n(n+1)/2 each, cross blocks n(n−1) each
        for n in 1..6u64 {
            for k in 1..5u64 {
                let count = k * n * (n + 1) / 2 + k * (k - 1) / 2 * n * (n - 1);
                assert_eq!(degrees_of_freedom(FamilyTag::T1, n as usize, k as usize), count);
            }
        }
    }

    #[test]
    fn scalar_standard_normal() {
        let s: ModelSpec = T3Spec::new(1, 1, DMatrix::identity(1, 1), DMatrix::identity(1, 1), None).unwrap().into();
        let v = log_density(&s, &DMatrix::zeros(1, 1)).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn structural_matches_dense_oracle() {
        let mut rng = stream(2, 0);
        for tag in FamilyTag::ALL {
            for n in 1..=4 {
                for k in 1..=3 {
                    let spec = random::spec(&mut rng, tag, n, k);
                    for _ in 0..3 {
                        let x = random::matrix(&mut rng, n, k);
                        let a = log_density(&spec, &x).unwrap();
                        let b = dense_log_density(&spec, &x).unwrap();
                        assert!((a - b).abs() < 1e-10, "{tag} n={n} k={k}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn t3_with_mean_matches_matrix_normal_display() {
        let mut rng = stream(3, 0);
        let s = random::t3(&mut rng, 3, 2, true);
        let x = random::matrix(&mut rng, 3, 2);
        let d = &x - s.mean();
        let pi = s.phi().inverse().unwrap();
        let qi = s.psi().inverse().unwrap();
        let direct = -0.5 * (pi.matrix() * &d * qi.matrix() * d.transpose()).trace()
            - 3.0 * (2.0 * PI).ln()
            - 1.0 * s.phi().ln_abs_det()
            - 1.5 * s.psi().ln_abs_det();
        let spec: ModelSpec = s.into();
        assert!((log_density(&spec, &x).unwrap() - direct).abs() < 1e-12);
        assert!((dense_log_density(&spec, &x).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = stream(4, 0);
        // nk = 1
        let s: ModelSpec = random::t3(&mut rng, 1, 1, false).into();
        let sd = (s_cov(&s)[(0, 0)]).sqrt();
        let q = integrate(|x| log_density(&s, &DMatrix::from_element(1, 1, x)).unwrap().exp(), -8.0 * sd, 8.0 * sd, 1e-12, 1e-10);
        assert!((q.value - 1.0).abs() < 1e-4);
        // nk = 2, every family
        for tag in FamilyTag::ALL {
            for (n, k) in [(1, 2), (2, 1)] {
                let s = random::spec(&mut rng, tag, n, k);
                let cov = s_cov(&s);
                let (s0, s1) = (cov[(0, 0)].sqrt() * 8.0, cov[(1, 1)].sqrt() * 8.0);
                let f = |a: f64, b: f64| {
                    let x = unvec_t(&DVector::from_vec(vec![a, b]), n, k);
                    log_density(&s, &x).unwrap().exp()
                };
                let q = integrate_2d(f, (-s0, s0), |_| -s1, |_| s1, 1e-9, 1e-8);
                assert!((q.value - 1.0).abs() < 1e-4, "{tag} {n}x{k}: {}", q.value);
            }
        }
    }

    fn s_cov(s: &ModelSpec) -> DMatrix<f64> {
        build_precision(s).unwrap().inverse().unwrap().into_matrix()
    }

    #[test]
    fn vec_kron_identity() {
        let mut rng = stream(5, 0);
        for _ in 0..50 {
            let (n, k) = (3, 2);
            let a = symmetrize(&random::matrix(&mut rng, n, n));
            let b = random::matrix(&mut rng, k, k);
            let x = random::matrix(&mut rng, n, k);
            let lhs = (&a * &x * &b * x.transpose()).trace();
            let v = vec_t(&x);
            let rhs = v.dot(&(kron(&a, &b) * &v));
            assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn nesting_preserves_density() {
        let mut rng = stream(6, 0);
        for _ in 0..5 {
            let t3 = random::t3(&mut rng, 3, 2, false);
            let t2 = t3.to_t2().unwrap();
            let t15 = t2.to_t15().unwrap();
            let t1 = t15.to_t1().unwrap();
            let x = random::matrix(&mut rng, 3, 2);
            let vals: Vec<f64> = [ModelSpec::from(t3), t2.into(), t15.into(), t1.into()]
                .iter()
                .map(|s| log_density(s, &x).unwrap())
                .collect();
            for v in &vals[1..] {
                assert!((v - vals[0]).abs() < 1e-10);
            }
        }
        let with_mean = random::t3(&mut rng, 2, 2, true);
        assert!(with_mean.to_t2().is_err());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut rng = stream(7, 0);
        for tag in FamilyTag::ALL {
            let s = random::spec(&mut rng, tag, 3, 2);
            let text = s.to_json().unwrap();
            let back = ModelSpec::from_json(&text).unwrap();
            assert_eq!(s, back, "{tag}");
            assert!(text.contains(&format!("\"family\": \"{tag}\"")));
        }
        let m = ModelSpec::from(random::t3(&mut rng, 2, 2, true));
        assert_eq!(ModelSpec::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let id2 = DMatrix::<f64>::identity(2, 2);
        // cross block with nonzero diagonal
        let c = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.0, 0.0]);
        let a = vec![vec![id2.clone(), c.clone()], vec![c.transpose(), id2.clone()]];
        assert!(T1Spec::new(2, 2, a, id2.clone()).is_err());
        // A_12ᵀ ≠ A_21
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.0, 0.0]);
        let a = vec![vec![id2.clone(), c.clone()], vec![c.clone(), id2.clone()]];
        assert!(T1Spec::new(2, 2, a, id2.clone()).is_err());
        // Θ not PD even though the entry constraints hold
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]);
        let a = vec![vec![id2.clone(), c.clone()], vec![c.transpose(), id2.clone()]];
        assert!(matches!(T1Spec::new(2, 2, a, id2.clone()), Err(Error::InvalidModel(_))));
        // non-orthonormal frame
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(T15Spec::new(2, 2, vec![id2.clone(), id2.clone()], skew).is_err());
        // non-positive gamma
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(T2Spec::new(2, 2, id2.clone(), id2.clone(), g).is_err());
        // Φ not PD
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(T3Spec::new(2, 2, bad, id2.clone(), None).is_err());
        assert!(ModelSpec::from_json(r#"{"family":"T3","n":1,"k":1,"Phi":[[1.0]]}"#).is_err());
        assert!(ModelSpec::from_json(r#"{"family":"T4","n":1,"k":1}"#).is_err());
    }

    #[test]
    fn sampler_moments() {
        let mut rng = stream(8, 0);
        let t3 = random::t3(&mut rng, 2, 2, true);
        let spec: ModelSpec = t3.clone().into();
        let count = 100_000;
        let draws = sample(&spec, count, 42).unwrap();
        let alt = sample_t3_kronecker(&t3, count, 43);
        let cov = s_cov(&spec);
        let mu = vec_t(t3.mean());
        for (name, set) in [("cholesky", &draws), ("kronecker", &alt)] {
            let vs: Vec<DVector<f64>> = set.iter().map(vec_t).collect();
            for i in 0..4 {
                let m: Moments = vs.iter().map(|v| v[i]).collect();
                assert!((m.mean - mu[i]).abs() < 4.0 * m.std_error(), "{name} mean {i}");
                for j in 0..4 {
                    let c: Moments = vs.iter().map(|v| (v[i] - mu[i]) * (v[j] - mu[j])).collect();
                    assert!((c.mean - cov[(i, j)]).abs() < 4.0 * c.std_error(), "{name} cov {i}{j}");
                }
            }
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let mut rng = stream(9, 0);
        let spec = random::spec(&mut rng, FamilyTag::T1, 3, 2);
        let a = sample(&spec, 5000, 77).unwrap();
        let b = sample(&spec, 5000, 77).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.as_slice() == y.as_slice()));
        let c = sample(&spec, 5000, 78).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn family_tag_parsing() {
        for t in FamilyTag::ALL {
            assert_eq!(t.to_string().parse::<FamilyTag>().unwrap(), t);
        }
        assert!("T4".parse::<FamilyTag>().is_err());
    }
}
