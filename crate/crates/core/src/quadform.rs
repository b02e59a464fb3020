//! Distribution of `S = (X + M)ᵀ(X + M)` for `X` from the T1 family: the
//! density, moment generating function and joint density of the
//! characteristic roots, plus the Wishart-type special cases.
//!
//! Every formula is evaluated in log space and exponentiated at the end.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{kron, symmetrize, vec_t, SymMatrix};
use crate::models::{ln_det_precision, ModelSpec, Sampler, T1Spec, T3Spec};
use crate::rng::par_blocks;
use crate::specfun::{
    hypergeom_spectrum, hypergeom_two, hypergeom_two_embedded, mv_gamma_ln, product_spectrum, HypergeomConfig,
    SeriesResult,
};

/// A density or MGF value, `value = sign · exp(ln_abs)`. `converged` is false
/// when a hypergeometric series in the formula hit its weight cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: f64,
    pub ln_abs: f64,
    pub sign: f64,
    pub converged: bool,
}

impl Evaluation {
    fn from_ln(ln_abs: f64, sign: f64, converged: bool) -> Self {
        Evaluation {
            value: sign * ln_abs.exp(),
            ln_abs,
            sign,
            converged,
        }
    }

    fn zero() -> Self {
        Evaluation {
            value: 0.0,
            ln_abs: f64::NEG_INFINITY,
            sign: 1.0,
            converged: true,
        }
    }

    fn times(self, series: &SeriesResult) -> Self {
        Evaluation::from_ln(self.ln_abs + series.ln_abs, self.sign * series.sign, self.converged && series.converged)
    }
}

/// Evaluation switches shared by the density and MGF routines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Evaluate the formulas for `n ≤ k − 1` as well, without claiming the
    /// result is a density or an MGF.
    pub continuation_experimental: bool,
}

/// T1 model with a mean, together with the derived `U`, `Ω`, `Δ`.
#[derive(Clone, Debug)]
pub struct QFModel {
    spec: T1Spec,
    m: DMatrix<f64>,
    u: SymMatrix,
    omega: SymMatrix,
    delta: SymMatrix,
    ln_det_theta: f64,
}

impl QFModel {
    pub fn new(spec: T1Spec, m: DMatrix<f64>) -> Result<Self> {
        let (n, k) = (spec.n(), spec.k());
        if m.shape() != (n, k) {
            return Err(dim_mismatch("QFModel mean", format!("{n}x{k}"), format!("{}x{}", m.nrows(), m.ncols())));
        }
        let b = spec.frame();
        let u = DMatrix::from_fn(k, k, |i, j| spec.block(i, j).trace());
        let mut omega = DMatrix::zeros(k, k);
        let mut nmat = DMatrix::zeros(n, k);
        for i in 0..k {
            for j in 0..k {
                let bij = b.column(i) * b.column(j).transpose();
                let a = spec.block(i, j);
                omega += &bij * m.transpose() * a * &m;
                nmat += a * &m * &bij;
            }
        }
        let u = SymMatrix::from_unchecked(symmetrize(&u));
        for i in 0..k {
            if !(u.matrix()[(i, i)] > 0.0) {
                return Err(Error::InvalidModel(format!("u_{}{} = tr A_{}{} must be positive", i + 1, i + 1, i + 1, i + 1)));
            }
        }
        let ln_det_theta = ln_det_precision(&ModelSpec::T1(spec.clone()))?;
        Ok(QFModel {
            spec,
            m,
            u,
            omega: SymMatrix::from_unchecked(symmetrize(&omega)),
            delta: SymMatrix::from_unchecked(symmetrize(&(nmat.transpose() * &nmat))),
            ln_det_theta,
        })
    }

    pub fn central(spec: T1Spec) -> Result<Self> {
        let (n, k) = (spec.n(), spec.k());
        Self::new(spec, DMatrix::zeros(n, k))
    }

    /// Any family, converted to T1; the mean is taken from the spec (only T3
    /// carries one).
    pub fn from_model(spec: &ModelSpec) -> Result<Self> {
        let m = spec.mean();
        let t1 = match spec {
            ModelSpec::T3(s) if !s.is_central() => {
                T3Spec::new(s.n(), s.k(), s.phi().matrix().clone(), s.psi().matrix().clone(), None)?
                    .to_t2()?
                    .to_t15()?
                    .to_t1()?
            }
            other => other.to_t1()?,
        };
        Self::new(t1, m)
    }

    pub fn spec(&self) -> &T1Spec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn is_central(&self) -> bool {
        self.m.iter().all(|&v| v == 0.0)
    }

    /// `u_ij = tr A_ij`.
    pub fn u(&self) -> &SymMatrix {
        &self.u
    }

    pub fn omega(&self) -> &SymMatrix {
        &self.omega
    }

    pub fn delta(&self) -> &SymMatrix {
        &self.delta
    }

    pub fn ln_det_theta(&self) -> f64 {
        self.ln_det_theta
    }

    /// `T = Bᵀ S B`, i.e. `t_ij = b_iᵀ S b_j`.
    pub fn t_matrix(&self, s: &SymMatrix) -> SymMatrix {
        s.congruence(self.spec.frame())
    }

    /// Draws of `S = (X + M)ᵀ(X + M)`, deterministic in `seed`.
    pub fn sample_s(&self, count: usize, seed: u64) -> Result<Vec<SymMatrix>> {
        let sampler = Sampler::new(&ModelSpec::T1(self.spec.clone()))?;
        let blocks = par_blocks(seed, count, |rng, len| {
            (0..len)
                .map(|_| {
                    let x = sampler.draw(rng) + &self.m;
                    SymMatrix::from_unchecked(symmetrize(&(x.transpose() * &x)))
                })
                .collect::<Vec<_>>()
        });
        Ok(blocks.into_iter().flatten().collect())
    }
}

/// Characteristic roots `l₁ > … > l_k > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RootVector(Vec<f64>);

impl RootVector {
    pub fn new(l: Vec<f64>) -> Result<Self> {
        if l.is_empty() {
            return Err(Error::InvalidParameter("root vector is empty".into()));
        }
        if !l.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Domain(format!("roots must be positive, got {l:?}")));
        }
        if l.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Domain(format!("roots must be strictly decreasing, got {l:?}")));
        }
        Ok(RootVector(l))
    }

    /// Roots of a PD matrix; fails on ties.
    pub fn of(s: &SymMatrix) -> Result<Self> {
        Self::new(s.eigenvalues().iter().copied().collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `ln ∏_{i<j} (l_i − l_j)`.
    fn ln_vandermonde(&self) -> f64 {
        let l = &self.0;
        let mut s = 0.0;
        for i in 0..l.len() {
            for j in i + 1..l.len() {
                s += (l[i] - l[j]).ln();
            }
        }
        s
    }
}

impl TryFrom<Vec<f64>> for RootVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        RootVector::new(v)
    }
}

impl From<RootVector> for Vec<f64> {
    fn from(r: RootVector) -> Self {
        r.0
    }
}

/// `Some(ln Γ_k(n/2))`, or `None` where `1/Γ_k(n/2)` vanishes (integer
/// `n ≤ k − 1` always lands on a pole of one factor).
fn ln_mv_gamma_half(n: usize, k: usize, opts: EvalOptions) -> Result<Option<f64>> {
    if n + 1 > k {
        return mv_gamma_ln(k, n as f64 / 2.0).map(Some);
    }
    if opts.continuation_experimental {
        Ok(None)
    } else {
        Err(Error::Domain(format!(
            "S has no density for n <= k - 1 (n = {n}, k = {k}); use the experimental continuation to evaluate the formula"
        )))
    }
}

/// Series settings by number of partition parts: small dimensions get a
/// higher weight cap, which is cheap there and needed in the tails of the
/// root densities.
fn series_cfg(upper: &[f64], lower: &[f64], parts: usize) -> HypergeomConfig {
    let cap = match parts {
        0..=2 => 200,
        3 => 100,
        _ => HypergeomConfig::DEFAULT_MAX_WEIGHT,
    };
    HypergeomConfig::new(upper, lower).with_max_weight(cap)
}

fn require_dim(s: &SymMatrix, k: usize, what: &'static str) -> Result<()> {
    if s.dim() != k {
        return Err(dim_mismatch(what, format!("{k}x{k}"), format!("{0}x{0}", s.dim())));
    }
    Ok(())
}

/// Central part of the density with an explicit `U`, so callers can compare
/// alternative normalizations of the same kernel.
pub(crate) fn ln_central_kernel(model: &QFModel, t: &SymMatrix, u: &DMatrix<f64>, ln_gamma_k: f64) -> f64 {
    let (n, k) = (model.n() as f64, model.k() as f64);
    0.5 * model.ln_det_theta - 0.5 * n * k * 2f64.ln() - ln_gamma_k - 0.5 * (u * t.matrix()).trace()
        + 0.5 * (n - k - 1.0) * t.ln_abs_det()
}

/// Density of `S` at a PD `S`, formula as stated: `u_ij = tr A_ij`,
/// `T = BᵀSB`, with the `₀F₁(n/2; ¼ΔT)` factor for a nonzero mean.
pub fn density_s(model: &QFModel, s: &SymMatrix) -> Result<Evaluation> {
    density_s_with(model, s, EvalOptions::default())
}

pub fn density_s_with(model: &QFModel, s: &SymMatrix, opts: EvalOptions) -> Result<Evaluation> {
    let (n, k) = (model.n(), model.k());
    require_dim(s, k, "density_s")?;
    s.require_pd("S")?;
    let Some(lg) = ln_mv_gamma_half(n, k, opts)? else {
        return Ok(Evaluation::zero());
    };
    let t = model.t_matrix(s);
    let central = Evaluation::from_ln(ln_central_kernel(model, &t, model.u.matrix(), lg), 1.0, true);
    if model.is_central() {
        return Ok(central);
    }
    let cfg = series_cfg(&[], &[n as f64 / 2.0], k);
    let arg = product_spectrum(&(model.delta.matrix() * 0.25), t.matrix())?;
    let f = hypergeom_spectrum(&cfg, &arg)?;
    let shifted = Evaluation::from_ln(central.ln_abs - 0.5 * model.omega.trace(), central.sign, true);
    Ok(shifted.times(&f))
}

/// Wishart-type density of `XᵀX` for `X ~ N(0, Φ ⊗ Ψ)` written with the free
/// constant `q > 0`:
/// `etr(−q⁻¹Ψ⁻¹S)|S|^{(n−k−1)/2} / (2^{nk/2}Γ_k(n/2)|Φ|^{k/2}|Ψ|^{n/2})
///  · ₀F₀(I − ½qΦ⁻¹, q⁻¹Ψ⁻¹S)`.
pub fn wishart_density(n: usize, phi: &SymMatrix, psi: &SymMatrix, s: &SymMatrix, q: f64) -> Result<Evaluation> {
    let k = psi.dim();
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("q must be positive, got {q}")));
    }
    require_dim(phi, n, "wishart_density Φ")?;
    require_dim(s, k, "wishart_density S")?;
    phi.require_pd("Φ")?;
    psi.require_pd("Ψ")?;
    s.require_pd("S")?;
    let lg = ln_mv_gamma_half(n, k, EvalOptions::default())?.expect("n > k - 1 checked");
    let (nf, kf) = (n as f64, k as f64);
    let psi_inv_half = psi.inv_sqrt()?;
    // Ψ⁻¹S has the spectrum of Ψ^{-1/2} S Ψ^{-1/2}
    let y = s.congruence(psi_inv_half.matrix()).scale(1.0 / q);
    let x = SymMatrix::from_unchecked(DMatrix::identity(n, n) - phi.inverse()?.matrix() * (0.5 * q));
    let ln_base = -y.trace() + 0.5 * (nf - kf - 1.0) * s.ln_abs_det()
        - 0.5 * nf * kf * 2f64.ln()
        - lg
        - 0.5 * kf * phi.ln_abs_det()
        - 0.5 * nf * psi.ln_abs_det();
    let f = hypergeom_two_embedded(&series_cfg(&[], &[], n.min(k)), &x, &y)?;
    Ok(Evaluation::from_ln(ln_base, 1.0, true).times(&f))
}

/// Symmetric `Γ` from the dummies; only the upper triangle is read and
/// mirrored, matching `E exp(Σ_{i≤j} γ_ij s_ij)`.
pub fn mirror_upper(gamma: &DMatrix<f64>) -> Result<SymMatrix> {
    if !gamma.is_square() {
        return Err(dim_mismatch("Γ", "square matrix", format!("{}x{}", gamma.nrows(), gamma.ncols())));
    }
    let k = gamma.nrows();
    let g = DMatrix::from_fn(k, k, |i, j| if i <= j { gamma[(i, j)] } else { gamma[(j, i)] });
    Ok(SymMatrix::from_unchecked(g))
}

/// `W = U^{−1/2} B R Bᵀ U^{−1/2}` with `2R = Γ + I`.
pub fn mgf_w(model: &QFModel, gamma: &SymMatrix) -> Result<SymMatrix> {
    let k = model.k();
    require_dim(gamma, k, "mgf Γ")?;
    let r = (gamma.matrix() + DMatrix::<f64>::identity(k, k)) * 0.5;
    let b = model.spec.frame();
    let brb = SymMatrix::from_unchecked(symmetrize(&(b * r * b.transpose())));
    let u_ih = model.u.inv_sqrt()?;
    Ok(brb.congruence(u_ih.matrix()))
}

/// Moment generating function as stated:
/// `|Θ₁|^{1/2}|U|^{−n/2}|I − W|^{−n/2}`, times
/// `etr(−½Ω)·etr(½ΔU⁻¹(I − W)⁻¹)` for a nonzero mean.
pub fn mgf(model: &QFModel, gamma: &SymMatrix) -> Result<Evaluation> {
    mgf_with(model, gamma, EvalOptions::default())
}

pub fn mgf_with(model: &QFModel, gamma: &SymMatrix, opts: EvalOptions) -> Result<Evaluation> {
    let (n, k) = (model.n(), model.k());
    if n < k && !opts.continuation_experimental {
        return Err(Error::Domain(format!(
            "the MGF formula is only asserted for n > k - 1 (n = {n}, k = {k})"
        )));
    }
    model.u.require_pd("U")?;
    let w = mgf_w(model, gamma)?;
    let rho = w.spectral_radius();
    if rho >= 1.0 {
        return Err(Error::Divergent(format!("spectral radius of W is {rho} >= 1; the MGF does not exist at this Γ")));
    }
    let i_minus_w = SymMatrix::from_unchecked(DMatrix::<f64>::identity(k, k) - w.matrix());
    let nf = n as f64;
    let mut ln = 0.5 * model.ln_det_theta - 0.5 * nf * model.u.ln_abs_det() - 0.5 * nf * i_minus_w.ln_abs_det();
    if !model.is_central() {
        let inner = model.u.inverse()?.matrix() * i_minus_w.inverse()?.matrix();
        ln += -0.5 * model.omega.trace() + 0.5 * (model.delta.matrix() * inner).trace();
    }
    Ok(Evaluation::from_ln(ln, 1.0, true))
}

/// `G` with `tr(G S) = Σ_{i≤j} γ_ij s_ij`: diagonal `γ_ii`, off-diagonal `γ_ij/2`.
fn trace_form(gamma: &SymMatrix) -> DMatrix<f64> {
    let g = gamma.matrix();
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| if i == j { g[(i, j)] } else { 0.5 * g[(i, j)] })
}

/// Reference MGF of `S` from the Gaussian law of `v = vec((X + M)ᵀ)`:
/// `E exp(vᵀ(I⊗G)v) = |Θ|^{1/2}|P|^{−1/2} exp(−½μᵀΘμ + ½(Θμ)ᵀP⁻¹(Θμ))`,
/// `P = Θ − 2 I⊗G`.
pub fn gaussian_mgf(model: &QFModel, gamma: &SymMatrix) -> Result<Evaluation> {
    let (n, k) = (model.n(), model.k());
    require_dim(gamma, k, "gaussian_mgf Γ")?;
    let theta = crate::models::build_precision(&ModelSpec::T1(model.spec.clone()))?;
    let p = SymMatrix::from_unchecked(theta.matrix() - kron(&DMatrix::identity(n, n), &trace_form(gamma)) * 2.0);
    if !p.is_positive_definite() {
        return Err(Error::Divergent("Θ − 2 I⊗G is not positive definite; the MGF is infinite".into()));
    }
    let mu: DVector<f64> = vec_t(&model.m);
    let b = theta.matrix() * &mu;
    let pinv = p.inverse()?;
    let ln = 0.5 * model.ln_det_theta - 0.5 * p.ln_abs_det() - 0.5 * mu.dot(&b) + 0.5 * b.dot(&(pinv.matrix() * &b));
    Ok(Evaluation::from_ln(ln, 1.0, true))
}

/// MGF of the Wishart-type density as stated:
/// `|Φ|^{−k/2}|W|^{−n/2} ₁F₀(n/2; qI − ½Φ⁻¹, W⁻¹)`, `W = I − qΨ^{1/2}RΨ^{1/2}`.
pub fn mgf_wishart(n: usize, phi: &SymMatrix, psi: &SymMatrix, gamma: &SymMatrix, q: f64) -> Result<Evaluation> {
    let k = psi.dim();
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("q must be positive, got {q}")));
    }
    require_dim(phi, n, "mgf_wishart Φ")?;
    require_dim(gamma, k, "mgf_wishart Γ")?;
    phi.require_pd("Φ")?;
    psi.require_pd("Ψ")?;
    let r = SymMatrix::from_unchecked((gamma.matrix() + DMatrix::<f64>::identity(k, k)) * 0.5);
    let psi_half = psi.sqrt();
    let w = SymMatrix::from_unchecked(
        DMatrix::<f64>::identity(k, k) - r.congruence(psi_half.matrix()).matrix() * q,
    );
    let ev = w.eigenvalues();
    let tiny = 1e-14 * ev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if ev.iter().any(|v| v.abs() <= tiny) {
        return Err(Error::Domain("W = I − qΨ^{1/2}RΨ^{1/2} is singular".into()));
    }
    let x = SymMatrix::from_unchecked(DMatrix::<f64>::identity(n, n) * q - phi.inverse()?.matrix() * 0.5);
    let w_inv = w.inverse()?;
    let nf = n as f64;
    let sign = if ev.iter().filter(|v| **v < 0.0).count() % 2 == 0 { 1.0 } else { -1.0 };
    if sign < 0.0 {
        return Err(Error::Domain("|W| < 0: |W|^{-n/2} is not real".into()));
    }
    let ln_base = -0.5 * k as f64 * phi.ln_abs_det() - 0.5 * nf * w.ln_abs_det();
    let cfg = series_cfg(&[nf / 2.0], &[], n.min(k));
    let f = if x.matrix().iter().all(|&v| v == 0.0) {
        // vanishing first argument: only the κ = () term survives
        SeriesResult {
            value: 1.0,
            ln_abs: 0.0,
            sign: 1.0,
            last_weight_contribution: 0.0,
            truncated_at: 0,
            converged: true,
        }
    } else {
        let radius = x.spectral_radius() * w_inv.spectral_radius();
        if radius >= 1.0 {
            return Err(Error::Divergent(format!(
                "1F0 series in (qI − ½Φ⁻¹, W⁻¹) needs ρ(X)ρ(W⁻¹) < 1, got {radius}"
            )));
        }
        hypergeom_two_embedded(&cfg, &x, &w_inv)?
    };
    Ok(Evaluation::from_ln(ln_base, 1.0, true).times(&f))
}

fn ln_roots_constant(n: usize, k: usize, lg_n: f64) -> Result<f64> {
    let (nf, kf) = (n as f64, k as f64);
    Ok(0.5 * kf * kf * PI.ln() - 0.5 * nf * kf * 2f64.ln() - lg_n - mv_gamma_ln(k, kf / 2.0)?)
}

/// Joint density of the characteristic roots of `S` as stated:
/// `π^{k²/2}|Θ₁|^{1/2} / (2^{nk/2}Γ_k(n/2)Γ_k(k/2)) ∏_{i<j}(l_i − l_j)
///  ∏ l_i^{(n−k−1)/2} ₀F₀(−½U, L)`, times `etr(−½Ω) ₀F₁(n/2; ¼Δ, L)` for a
/// nonzero mean. Zero outside `l₁ > … > l_k > 0`.
pub fn roots_density(model: &QFModel, l: &[f64]) -> Result<Evaluation> {
    roots_density_with(model, l, EvalOptions::default())
}

pub fn roots_density_with(model: &QFModel, l: &[f64], opts: EvalOptions) -> Result<Evaluation> {
    let (n, k) = (model.n(), model.k());
    if l.len() != k {
        return Err(dim_mismatch("roots_density", k, l.len()));
    }
    let Ok(roots) = RootVector::new(l.to_vec()) else {
        return Ok(Evaluation::zero());
    };
    let Some(lg) = ln_mv_gamma_half(n, k, opts)? else {
        return Ok(Evaluation::zero());
    };
    let nf = n as f64;
    let ln_l: f64 = roots.values().iter().map(|v| v.ln()).sum();
    let ln_base = ln_roots_constant(n, k, lg)? + 0.5 * model.ln_det_theta + roots.ln_vandermonde()
        + 0.5 * (nf - k as f64 - 1.0) * ln_l;
    let lmat = SymMatrix::from_diagonal(roots.values());
    let f0 = hypergeom_two(&series_cfg(&[], &[], k), &model.u.scale(-0.5), &lmat)?;
    let central = Evaluation::from_ln(ln_base, 1.0, true).times(&f0);
    if model.is_central() {
        return Ok(central);
    }
    let f1 = hypergeom_two(&series_cfg(&[], &[nf / 2.0], k), &model.delta.scale(0.25), &lmat)?;
    let shifted = Evaluation::from_ln(central.ln_abs - 0.5 * model.omega.trace(), central.sign, central.converged);
    Ok(shifted.times(&f1))
}

/// James' density of the latent roots of a central Wishart matrix with `n`
/// degrees of freedom and scale `Ψ`.
pub fn james_roots_density(n: usize, psi: &SymMatrix, l: &[f64]) -> Result<Evaluation> {
    let k = psi.dim();
    if l.len() != k {
        return Err(dim_mismatch("james_roots_density", k, l.len()));
    }
    psi.require_pd("Ψ")?;
    let lg = ln_mv_gamma_half(n, k, EvalOptions::default())?.expect("n > k - 1 checked");
    let Ok(roots) = RootVector::new(l.to_vec()) else {
        return Ok(Evaluation::zero());
    };
    let ln_l: f64 = roots.values().iter().map(|v| v.ln()).sum();
    let ln_base = ln_roots_constant(n, k, lg)? - 0.5 * n as f64 * psi.ln_abs_det()
        + roots.ln_vandermonde()
        + 0.5 * (n as f64 - k as f64 - 1.0) * ln_l;
    let lmat = SymMatrix::from_diagonal(roots.values());
    let f0 = hypergeom_two(&series_cfg(&[], &[], k), &psi.inverse()?.scale(-0.5), &lmat)?;
    Ok(Evaluation::from_ln(ln_base, 1.0, true).times(&f0))
}

/// The six sample statistics of the 3-variate example, arranged as
/// `[[a, f, g], [f, b, h], [g, h, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments3 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

impl Moments3 {
    pub fn from_matrix(s: &DMatrix<f64>) -> Result<Self> {
        if s.shape() != (3, 3) {
            return Err(dim_mismatch("Moments3", "3x3", format!("{}x{}", s.nrows(), s.ncols())));
        }
        Ok(Moments3 {
            a: s[(0, 0)],
            b: s[(1, 1)],
            c: s[(2, 2)],
            f: s[(0, 1)],
            g: s[(0, 2)],
            h: s[(1, 2)],
        })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[self.a, self.f, self.g, self.f, self.b, self.h, self.g, self.h, self.c])
    }
}

/// Unsigned minor of `b` with row `i` and column `j` removed.
fn minor3(b: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let rows: Vec<usize> = (0..3).filter(|&r| r != i).collect();
    let cols: Vec<usize> = (0..3).filter(|&c| c != j).collect();
    b[(rows[0], cols[0])] * b[(rows[1], cols[1])] - b[(rows[0], cols[1])] * b[(rows[1], cols[0])]
}

/// Minor-ratio coefficients `[[A, F, G], [F, B, H], [G, H, C]]` of `B`.
pub fn wishart1928_coefficients(b: &SymMatrix) -> Result<DMatrix<f64>> {
    require_dim(b, 3, "wishart1928 B")?;
    b.require_pd("B")?;
    let det = b.det();
    Ok(DMatrix::from_fn(3, 3, |i, j| minor3(b.matrix(), i, j) / det))
}

/// The 3-variate display, exponent taken verbatim (including its `−8Ff`):
/// `|Λ|^{(n−1)/2}|stat|^{(n−5)/2} e^{−Aa−Bb−Cc−2Hh−2Gg−8Ff}
///  / (π^{3/2}Γ((n−1)/2)Γ((n−2)/2)Γ((n−3)/2))`.
pub fn wishart1928_density_k3(moments: &Moments3, b: &SymMatrix, n: usize) -> Result<Evaluation> {
    if n <= 4 {
        return Err(Error::Domain(format!("the 3-variate display needs n > 4, got {n}")));
    }
    let stat = SymMatrix::new(moments.matrix())?;
    stat.require_pd("statistic matrix")?;
    let lam = wishart1928_coefficients(b)?;
    let (ca, cb, cc) = (lam[(0, 0)], lam[(1, 1)], lam[(2, 2)]);
    let (cf, cg, ch) = (lam[(0, 1)], lam[(0, 2)], lam[(1, 2)]);
    let Moments3 { a, b: bb, c, f, g, h } = *moments;
    let nf = n as f64;
    let ln_norm = 1.5 * PI.ln() + ln_gamma((nf - 1.0) / 2.0) + ln_gamma((nf - 2.0) / 2.0) + ln_gamma((nf - 3.0) / 2.0);
    let lam_det = SymMatrix::from_unchecked(lam).det();
    let exponent = -ca * a - cb * bb - cc * c - 2.0 * ch * h - 2.0 * cg * g - 8.0 * cf * f;
    let ln = -ln_norm + 0.5 * (nf - 1.0) * lam_det.ln() + 0.5 * (nf - 5.0) * stat.ln_abs_det() + exponent;
    Ok(Evaluation::from_ln(ln, 1.0, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::random;
    use crate::quad::{integrate_box_3d, integrate_semi_infinite};
    use crate::rng::stream;
    use crate::stats::Moments;
    use rand::Rng;

    fn chi2_pdf(n: usize, s: f64) -> f64 {
        let h = n as f64 / 2.0;
        ((h - 1.0) * s.ln() - s / 2.0 - h * 2f64.ln() - ln_gamma(h)).exp()
    }

    fn scalar_model(n: usize, a: DMatrix<f64>) -> QFModel {
        let spec = T1Spec::new(n, 1, vec![vec![a]], DMatrix::identity(1, 1)).unwrap();
        QFModel::central(spec).unwrap()
    }

    fn t3_model(phi: &SymMatrix, psi: &SymMatrix) -> QFModel {
        let (n, k) = (phi.dim(), psi.dim());
        let t3 = T3Spec::new(n, k, phi.matrix().clone(), psi.matrix().clone(), None).unwrap();
        QFModel::from_model(&ModelSpec::T3(t3)).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn derived_quantities() {
        let mut rng = stream(11, 0);
        let spec = random::t1(&mut rng, 4, 3);
        let m = random::matrix(&mut rng, 4, 3);
        let model = QFModel::new(spec.clone(), m).unwrap();
        let u = model.u();
        assert!((u.matrix() - u.matrix().transpose()).amax() == 0.0);
        assert!(model.delta().is_positive_semidefinite());
        let central = QFModel::central(spec).unwrap();
        assert_eq!(central.omega().matrix().amax(), 0.0);
        assert_eq!(central.delta().matrix().amax(), 0.0);
    }

    #[test]
    fn wishart_q_invariance_and_chi_square() {
        let one = SymMatrix::identity(1);
        let s = SymMatrix::from_diagonal(&[2.0]);
        for q in [0.5, 1.0, 2.0] {
            let v = wishart_density(2, &SymMatrix::identity(2), &one, &s, q).unwrap().value;
            assert!(rel(v, (-1f64).exp() / 2.0) < 1e-10, "q={q}: {v}");
        }
        let mut rng = stream(5, 0);
        for _ in 0..5 {
            let (n, k) = (rng.random_range(3..=6), rng.random_range(1..=3));
            let phi = SymMatrix::new(random::spd(&mut rng, n)).unwrap();
            let psi = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
            let s = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
            let vals: Vec<f64> = [0.5, 1.0, 2.0, 5.0]
                .iter()
                .map(|&q| wishart_density(n, &phi, &psi, &s, q).unwrap().value)
                .collect();
            for v in &vals {
                assert!(rel(*v, vals[0]) < 1e-8, "{vals:?}");
            }
        }
    }

    #[test]
    fn wishart_identity_phi_matches_closed_form() {
        let mut rng = stream(6, 0);
        let (n, k) = (5, 3);
        let psi = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
        let s = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
        let psi_inv = psi.inverse().unwrap();
        let ln = -0.5 * (psi_inv.matrix() * s.matrix()).trace() + 0.5 * (n as f64 - k as f64 - 1.0) * s.ln_abs_det()
            - 0.5 * (n * k) as f64 * 2f64.ln()
            - mv_gamma_ln(k, n as f64 / 2.0).unwrap()
            - 0.5 * n as f64 * psi.ln_abs_det();
        for q in [0.7, 2.0, 3.0] {
            let v = wishart_density(n, &SymMatrix::identity(n), &psi, &s, q).unwrap();
            assert!(rel(v.value, ln.exp()) < 1e-8, "q={q}");
        }
    }

    #[test]
    fn wishart_density_integrates_to_one_k1() {
        let phi = SymMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.5])).unwrap();
        let psi = SymMatrix::from_diagonal(&[1.5]);
        let q = 1.0 / phi.eigenvalues()[0];
        let r = integrate_semi_infinite(
            |s| wishart_density(3, &phi, &psi, &SymMatrix::from_diagonal(&[s]), q).unwrap().value,
            1e-12,
            1e-12,
            1e-9,
        );
        assert!((r.value - 1.0).abs() < 1e-7, "{}", r.value);
    }

    /// With `u_ij = tr A_ij` the stated density at k = 1, A = I_n has
    /// exponent `−ns/2`; it is the χ²_n density only at n = 1. Rescaling U by
    /// `1/n` recovers χ²_n exactly.
    #[test]
    fn density_s_scalar_discrepancy() {
        for n in 1..=6 {
            let model = scalar_model(n, DMatrix::identity(n, n));
            let s = SymMatrix::from_diagonal(&[2.0]);
            let v = density_s(&model, &s).unwrap().value;
            let lg = mv_gamma_ln(1, n as f64 / 2.0).unwrap();
            let ln_expected = (n as f64 / 2.0 - 1.0) * 2f64.ln() - n as f64 - 0.5 * n as f64 * 2f64.ln() - lg;
            assert!(rel(v, ln_expected.exp()) < 1e-12);
            let t = model.t_matrix(&s);
            let corrected = ln_central_kernel(&model, &t, &(model.u().matrix() / n as f64), lg).exp();
            assert!(rel(corrected, chi2_pdf(n, 2.0)) < 1e-12);
            if n == 1 {
                assert!(rel(v, chi2_pdf(1, 2.0)) < 1e-12);
            } else {
                assert!(rel(v, chi2_pdf(n, 2.0)) > 1e-2);
            }
        }
    }

    /// The reduction to the Wishart-type density holds with `U/n` in place of
    /// `U` when every `A_jj` is a multiple of one Φ⁻¹.
    #[test]
    fn density_s_wishart_reduction_up_to_u_scaling() {
        let mut rng = stream(8, 0);
        let (n, k) = (5, 2);
        let psi = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
        let s = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
        let model = t3_model(&SymMatrix::identity(n), &psi);
        let target = wishart_density(n, &SymMatrix::identity(n), &psi, &s, 2.0).unwrap().value;
        let lg = mv_gamma_ln(k, n as f64 / 2.0).unwrap();
        let t = model.t_matrix(&s);
        let corrected = ln_central_kernel(&model, &t, &(model.u().matrix() / n as f64), lg).exp();
        assert!(rel(corrected, target) < 1e-8);
        let literal = density_s(&model, &s).unwrap().value;
        assert!(rel(literal, target) > 1e-2);
    }

    #[test]
    fn density_s_frame_consistency() {
        let mut rng = stream(9, 0);
        let (n, k) = (4, 2);
        let spec = random::t15(&mut rng, n, k);
        let s = SymMatrix::new(random::spd(&mut rng, k)).unwrap();
        let model = QFModel::from_model(&ModelSpec::T15(spec.clone())).unwrap();
        let base = density_s(&model, &s).unwrap().value;
        // relabel the columns of the frame together with the blocks
        let b = spec.frame();
        let swapped_b = DMatrix::from_columns(&[b.column(1).into_owned(), b.column(0).into_owned()]);
        let blocks = spec.blocks();
        let swapped = crate::models::T15Spec::new(
            n,
            k,
            vec![blocks[1].matrix().clone(), blocks[0].matrix().clone()],
            swapped_b,
        )
        .unwrap();
        let model2 = QFModel::from_model(&ModelSpec::T15(swapped)).unwrap();
        let v2 = density_s(&model2, &s).unwrap().value;
        assert!(rel(v2, base) < 1e-10);
    }

    #[test]
    fn density_s_errors_and_continuation() {
        let mut rng = stream(10, 0);
        let spec = random::t1(&mut rng, 2, 3);
        let model = QFModel::central(spec).unwrap();
        let s = SymMatrix::new(random::spd(&mut rng, 3)).unwrap();
        assert!(density_s(&model, &s).is_err());
        let opts = EvalOptions {
            continuation_experimental: true,
        };
        assert_eq!(density_s_with(&model, &s, opts).unwrap().value, 0.0);
        let not_pd = SymMatrix::from_diagonal(&[1.0, -1.0, 1.0]);
        assert!(density_s_with(&model, &not_pd, opts).is_err());
        assert!(mgf(&model, &SymMatrix::zeros(3)).is_err());
        assert!(mgf_with(&model, &SymMatrix::scale(&SymMatrix::identity(3), -1.0), opts).is_ok());
    }

    /// Over the PD cone the stated central density (T1½ diagonal, B = I)
    /// has mass `∏_j |A_jj|^{1/2} (tr A_jj)^{−n/2}`, not 1.
    #[test]
    fn density_s_mass_k2() {
        let n = 3;
        let a11 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1.5]));
        let a22 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 1.0]));
        let spec = T1Spec::new(
            n,
            2,
            vec![vec![a11.clone(), DMatrix::zeros(n, n)], vec![DMatrix::zeros(n, n), a22.clone()]],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let model = QFModel::central(spec).unwrap();
        let mass = integrate_box_3d(
            |l11, l21, l22| {
                let s12 = l11 * l21;
                let s = SymMatrix::from_unchecked(DMatrix::from_row_slice(2, 2, &[l11 * l11, s12, s12, l21 * l21 + l22 * l22]));
                // Jacobian of S = LLᵀ: 4 l11² l22
                density_s(&model, &s).map(|v| v.value * 4.0 * l11 * l11 * l22).unwrap_or(0.0)
            },
            [(0.0, 7.0), (-7.0, 7.0), (0.0, 7.0)],
            1e-10,
            1e-6,
        );
        let expected: f64 = [&a11, &a22]
            .iter()
            .map(|a| a.determinant().sqrt() * a.trace().powf(-(n as f64) / 2.0))
            .product();
        assert!(rel(mass.value, expected) < 1e-3, "{} vs {expected}", mass.value);
        assert!((mass.value - 1.0).abs() > 0.5);
    }

    #[test]
    fn mgf_trivial_and_divergent() {
        let mut rng = stream(12, 0);
        let spec = random::t1(&mut rng, 3, 2);
        let model = QFModel::central(spec).unwrap();
        let v = mgf(&model, &SymMatrix::identity(2).scale(-1.0)).unwrap().value;
        let expected = (0.5 * model.ln_det_theta() - 1.5 * model.u().ln_abs_det()).exp();
        assert!(rel(v, expected) < 1e-12);
        let big = SymMatrix::identity(2).scale(1e3);
        assert!(matches!(mgf(&model, &big), Err(Error::Divergent(_))));
    }

    /// At k = 1, A = I_n the stated MGF is `(n − (γ + 1)/2)^{−n/2}` while the
    /// χ²_n MGF is `(1 − 2γ)^{−n/2}`; the Γ = 0 factor `(n − ½)^{−n/2}`
    /// depends on n.
    #[test]
    fn mgf_scalar_normalization_factor() {
        for n in 2..=6 {
            let model = scalar_model(n, DMatrix::identity(n, n));
            let nf = n as f64;
            for gamma in [-0.3, 0.0, 0.1] {
                let g = SymMatrix::from_diagonal(&[gamma]);
                let v = mgf(&model, &g).unwrap().value;
                assert!(rel(v, (nf - 0.5 * (gamma + 1.0)).powf(-nf / 2.0)) < 1e-12);
                let exact = gaussian_mgf(&model, &g).unwrap().value;
                assert!(rel(exact, (1.0 - 2.0 * gamma).powf(-nf / 2.0)) < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_mgf_matches_monte_carlo() {
        let mut rng = stream(13, 0);
        let spec = random::t1(&mut rng, 3, 2);
        let m = random::matrix(&mut rng, 3, 2).scale(0.3);
        let model = QFModel::new(spec, m).unwrap();
        let gamma = SymMatrix::from_rows(&[vec![0.05, -0.03], vec![-0.03, 0.04]]).unwrap();
        let g = trace_form(&gamma);
        let draws = model.sample_s(20_000, 99).unwrap();
        let mom: Moments = draws.iter().map(|s| (&g * s.matrix()).trace().exp()).collect();
        let exact = gaussian_mgf(&model, &gamma).unwrap().value;
        assert!((mom.mean - exact).abs() < 4.0 * mom.std_error(), "{} vs {exact}", mom.mean);
    }

    #[test]
    fn mgf_wishart_cases() {
        // n = k = 1, Φ = Ψ = q = 1, Γ = 0: W = ½, first argument ½ and
        // ρ(X)ρ(W⁻¹) = 1, the boundary of convergence
        let one = SymMatrix::identity(1);
        let g0 = SymMatrix::zeros(1);
        assert!(matches!(mgf_wishart(1, &one, &one, &g0, 1.0), Err(Error::Divergent(_))));
        // first argument vanishes at Φ = I/(2q)
        let q = 0.8;
        let phi = SymMatrix::identity(3).scale(1.0 / (2.0 * q));
        let psi = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap();
        let gamma = SymMatrix::from_rows(&[vec![-0.5, 0.1], vec![0.1, -0.7]]).unwrap();
        let v = mgf_wishart(3, &phi, &psi, &gamma, q).unwrap().value;
        let r = SymMatrix::from_unchecked((gamma.matrix() + DMatrix::<f64>::identity(2, 2)) * 0.5);
        let w = SymMatrix::from_unchecked(DMatrix::<f64>::identity(2, 2) - r.congruence(psi.sqrt().matrix()).matrix() * q);
        let expected = (-phi.ln_abs_det() - 1.5 * w.ln_abs_det()).exp();
        assert!(rel(v, expected) < 1e-12);
    }

    #[test]
    fn roots_density_scalar_equals_density_s() {
        let mut rng = stream(14, 0);
        for n in 1..=5 {
            let spec = random::t1(&mut rng, n, 1);
            let model = QFModel::central(spec).unwrap();
            for s in [0.3, 1.0, 4.0] {
                let a = roots_density(&model, &[s]).unwrap().value;
                let b = density_s(&model, &SymMatrix::from_diagonal(&[s])).unwrap().value;
                assert!(rel(a, b) < 1e-12);
            }
        }
    }

    #[test]
    fn roots_outside_cone_are_zero() {
        let mut rng = stream(15, 0);
        let model = QFModel::central(random::t1(&mut rng, 4, 2)).unwrap();
        assert_eq!(roots_density(&model, &[1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(roots_density(&model, &[1.0, 1.0]).unwrap().value, 0.0);
        assert_eq!(roots_density(&model, &[1.0, -0.5]).unwrap().value, 0.0);
        let psi = SymMatrix::identity(2);
        assert_eq!(james_roots_density(4, &psi, &[2.0, 2.0]).unwrap().value, 0.0);
        assert!(RootVector::new(vec![3.0, 1.0]).is_ok());
        assert!(RootVector::new(vec![1.0, 3.0]).is_err());
    }

    #[test]
    fn james_scalar_and_mass() {
        for n in 1..=5 {
            let v = james_roots_density(n, &SymMatrix::identity(1), &[1.7]).unwrap().value;
            assert!(rel(v, chi2_pdf(n, 1.7)) < 1e-12);
        }
        // k = 2 mass over the ordered cone
        let psi = SymMatrix::from_diagonal(&[1.5, 0.7]);
        let r = crate::quad::integrate_2d(
            |l1, l2| james_roots_density(6, &psi, &[l1, l2]).map(|v| v.value).unwrap_or(0.0),
            (0.0, 60.0),
            |_| 0.0,
            |l1| l1,
            1e-9,
            1e-7,
        );
        assert!((r.value - 1.0).abs() < 1e-4, "{}", r.value);
    }

    /// The stated root density with `U = I` is James' density at `Ψ = I`
    /// multiplied by `|Θ₁|^{1/2}`; the true law of S there has `Ψ = nI`.
    #[test]
    fn roots_density_james_relation() {
        let n = 6;
        let a = DMatrix::<f64>::identity(n, n) / n as f64;
        let spec = T1Spec::new(
            n,
            2,
            vec![vec![a.clone(), DMatrix::zeros(n, n)], vec![DMatrix::zeros(n, n), a]],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let model = QFModel::central(spec).unwrap();
        for l in [[3.0, 1.0], [8.0, 0.5]] {
            let lit = roots_density(&model, &l).unwrap().value;
            let j = james_roots_density(n, &SymMatrix::identity(2), &l).unwrap().value;
            assert!(rel(lit, j * (0.5 * model.ln_det_theta()).exp()) < 1e-10);
        }
    }

    #[test]
    fn wishart1928_identity_and_diagonal() {
        let b = SymMatrix::identity(3);
        let coef = wishart1928_coefficients(&b).unwrap();
        assert!((coef - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);
        let n = 7;
        let m = Moments3 { a: 1.2, b: 0.8, c: 2.0, f: 0.0, g: 0.0, h: 0.0 };
        let v = wishart1928_density_k3(&m, &b, n).unwrap().value;
        let nf = n as f64;
        let ln_norm = 1.5 * PI.ln() + ln_gamma((nf - 1.0) / 2.0) + ln_gamma((nf - 2.0) / 2.0) + ln_gamma((nf - 3.0) / 2.0);
        let kernel = |x: f64| 0.5 * (nf - 5.0) * x.ln() - x;
        let expected = (kernel(1.2) + kernel(0.8) + kernel(2.0) - ln_norm).exp();
        assert!(rel(v, expected) < 1e-12);
    }

    /// The display agrees with the central Wishart density (ν = n − 1,
    /// Ψ = ½Λ⁻¹) except for its `−8Ff` term, which leaves `−6Ff` in the log
    /// ratio.
    #[test]
    fn wishart1928_against_wishart_density() {
        let mut rng = stream(16, 0);
        let n = 7;
        let bmat = SymMatrix::new(random::spd(&mut rng, 3)).unwrap();
        let lam = wishart1928_coefficients(&bmat).unwrap();
        let psi = SymMatrix::new(lam.clone()).unwrap().inverse().unwrap().scale(0.5);
        for _ in 0..10 {
            let s = SymMatrix::new(random::spd(&mut rng, 3)).unwrap();
            let mom = Moments3::from_matrix(s.matrix()).unwrap();
            let w = wishart1928_density_k3(&mom, &bmat, n).unwrap();
            let reference = wishart_density(n - 1, &SymMatrix::identity(n - 1), &psi, &s, 2.0).unwrap();
            let log_ratio = w.ln_abs - reference.ln_abs;
            let ff = lam[(0, 1)] * mom.f;
            assert!((log_ratio + 6.0 * ff).abs() < 1e-9, "{log_ratio} vs {}", -6.0 * ff);
        }
    }
}
