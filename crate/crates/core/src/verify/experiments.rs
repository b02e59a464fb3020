use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};
use statrs::function::gamma::ln_gamma;

use super::report::{Check, Table};
use super::{Experiment, Run};
use crate::error::Result;
use crate::linalg::{kron, sym_eigenvalues, symmetrize, vec_t, SymMatrix, PD_REL_TOL};
use crate::manifolds::{gindikin_contains, haar_orthogonal, GindikinSet};
use crate::models::{
    build_precision, dense_log_density, log_density, random, sample, sample_t3_kronecker, FamilyTag, ModelSpec,
    Sampler, T3Spec,
};
use crate::quad::{integrate, integrate_2d, integrate_semi_infinite};
use crate::quadform::{
    density_s, gaussian_mgf, james_roots_density, ln_central_kernel, mgf, roots_density, wishart1928_coefficients,
    wishart1928_density_k3, wishart_density, Moments3, QFModel,
};
use crate::rng::{par_blocks, stream, StreamRng};
use crate::specfun::{
    haar_average_oracle, hypergeom_one, hypergeom_two, hypergeom_two_embedded, mv_gamma_ln, series_on_spectrum,
    HypergeomConfig, Spectrum,
};
use crate::stats::{chi_square_critical, pearson_pooled, Moments};

pub(crate) static REGISTRY: &[Experiment] = &[
    Experiment {
        id: "etr-identity",
        description: "0F0 series against etr on random symmetric 3x3 matrices",
        default_seed: 101,
        primary_tolerance: "rel_tol",
        defaults: etr_defaults,
        run: etr_run,
    },
    Experiment {
        id: "detpow-identity",
        description: "1F0 series against |I - X|^{-a}",
        default_seed: 102,
        primary_tolerance: "rel_tol",
        defaults: detpow_defaults,
        run: detpow_run,
    },
    Experiment {
        id: "gamma-recurrence",
        description: "multivariate gamma recurrence Γ_k(a) = π^{(k-1)/2} Γ(a) Γ_{k-1}(a - 1/2)",
        default_seed: 103,
        primary_tolerance: "rel_tol",
        defaults: gamma_rec_defaults,
        run: gamma_rec_run,
    },
    Experiment {
        id: "gamma-integral-scalar",
        description: "gamma integral at dimension 1 by quadrature against Γ(a) z^{-a}",
        default_seed: 104,
        primary_tolerance: "rel_tol",
        defaults: gamma_int_defaults,
        run: gamma_int_run,
    },
    Experiment {
        id: "haar-two-arg",
        description: "two-argument series against a Haar average over O(n)",
        default_seed: 105,
        primary_tolerance: "z_max",
        defaults: haar_defaults,
        run: haar_run,
    },
    Experiment {
        id: "james-0F1",
        description: "Haar average of etr(X H1ᵀ) against 0F1(n/2; XᵀX/4)",
        default_seed: 106,
        primary_tolerance: "z_max",
        defaults: james_0f1_defaults,
        run: james_0f1_run,
    },
    Experiment {
        id: "vec-kron",
        description: "tr(A X B Xᵀ) = vec(Xᵀ)ᵀ (A ⊗ B) vec(Xᵀ)",
        default_seed: 107,
        primary_tolerance: "rel_tol",
        defaults: vec_kron_defaults,
        run: vec_kron_run,
    },
    Experiment {
        id: "density-vs-mvn",
        description: "family log-densities against the dense multivariate normal",
        default_seed: 108,
        primary_tolerance: "abs_tol",
        defaults: mvn_defaults,
        run: mvn_run,
    },
    Experiment {
        id: "sampler-moments",
        description: "first and second moments of the generic and Kronecker samplers",
        default_seed: 109,
        primary_tolerance: "z_max",
        defaults: moments_defaults,
        run: moments_run,
    },
    Experiment {
        id: "pd-almost-surely",
        description: "S = XᵀX is PD for n >= k and singular for n < k",
        default_seed: 7,
        primary_tolerance: "pd_rel_tol",
        defaults: pd_defaults,
        run: pd_run,
    },
    Experiment {
        id: "q-invariance",
        description: "Wishart-type density is independent of q; k = 1 gives χ²_n",
        default_seed: 3,
        primary_tolerance: "rel_spread",
        defaults: q_defaults,
        run: q_run,
    },
    Experiment {
        id: "wishart-chisq",
        description: "k = 1 reductions of the Wishart-type density and of the density of S to χ²_n",
        default_seed: 112,
        primary_tolerance: "rel_tol",
        defaults: chisq_defaults,
        run: chisq_run,
    },
    Experiment {
        id: "mgf-mc",
        description: "MGF of S against Monte Carlo, plus the scalar normalization at Γ = 0",
        default_seed: 113,
        primary_tolerance: "z_max",
        defaults: mgf_defaults,
        run: mgf_run,
    },
    Experiment {
        id: "roots-gof",
        description: "binned joint eigenvalue density (k = 2) against James' density; k = 1 roots vs density",
        default_seed: 114,
        primary_tolerance: "alpha",
        defaults: roots_defaults,
        run: roots_run,
    },
    Experiment {
        id: "james-reduction",
        description: "root density and density of S at Φ = I against James' and the Wishart densities",
        default_seed: 115,
        primary_tolerance: "rel_tol",
        defaults: james_red_defaults,
        run: james_red_run,
    },
    Experiment {
        id: "wishart1928-crosscheck",
        description: "3-variate product-moment display against the Wishart-type density",
        default_seed: 116,
        primary_tolerance: "rel_tol",
        defaults: w1928_defaults,
        run: w1928_run,
    },
    Experiment {
        id: "gindikin-table",
        description: "Gindikin set membership table against exact rational arithmetic",
        default_seed: 117,
        primary_tolerance: "half_integer_tol",
        defaults: gindikin_defaults,
        run: gindikin_run,
    },
];

fn tols(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Independent sub-seed for the `i`-th random task of an experiment.
fn sub_seed(seed: u64, i: u64) -> u64 {
    seed ^ (i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn rng_for(run: &Run, i: u64) -> StreamRng {
    stream(sub_seed(run.seed, i), u64::MAX)
}

fn gauss(rng: &mut StreamRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random symmetric matrix rescaled to spectral radius `radius`.
fn sym_with_radius(rng: &mut StreamRng, n: usize, radius: f64) -> SymMatrix {
    let g = gauss(rng, n, n);
    let s = SymMatrix::from_unchecked(symmetrize(&g));
    let r = s.spectral_radius();
    s.scale(radius / r)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn chi2_pdf(n: usize, s: f64) -> f64 {
    let h = n as f64 / 2.0;
    ((h - 1.0) * s.ln() - s / 2.0 - h * 2f64.ln() - ln_gamma(h)).exp()
}

// ---------------------------------------------------------------- etr

fn etr_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({"count": 20, "dim": 3, "radius": 2.0, "max_weight": 60}),
        tols(&[("rel_tol", 1e-8)]),
    )
}

fn etr_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (count, dim, radius) = (p.usize("count")?, p.usize("dim")?, p.f64("radius")?);
    let cfg = HypergeomConfig::new(&[], &[]).with_max_weight(p.usize("max_weight")?);
    let mut rng = rng_for(run, 0);
    let mut table = Table::new(&["index", "spectral_radius", "trace", "series", "etr", "rel_err"]);
    let (mut worst, mut unconverged, mut max_w) = (0.0f64, 0, 0);
    for i in 0..count {
        let r = radius * rng.random_range(0.05..=1.0);
        let x = sym_with_radius(&mut rng, dim, r);
        let eig: Vec<f64> = x.eigenvalues().iter().copied().collect();
        let s = series_on_spectrum(&cfg, &Spectrum::Real(eig))?;
        let exact = x.trace().exp();
        let e = rel_err(s.value, exact);
        worst = worst.max(e);
        unconverged += usize::from(!s.converged);
        max_w = max_w.max(s.truncated_at);
        table.push(vec![i as f64, r, x.trace(), s.value, exact, e]);
    }
    run.stat("max_rel_err", worst);
    run.stat("unconverged", unconverged as f64);
    run.stat("max_truncation_weight", max_w as f64);
    run.check(Check::le("max_rel_err", "rel_tol"));
    run.check(Check::eq("unconverged", 0.0));
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- 1F0

fn detpow_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({"count": 20, "dim": 3, "radius": 0.5, "a": [0.5, 2.0, 3.5], "max_weight": 60}),
        tols(&[("rel_tol", 1e-6)]),
    )
}

fn detpow_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (count, dim, radius) = (p.usize("count")?, p.usize("dim")?, p.f64("radius")?);
    let a_list = p.f64_list("a")?;
    let max_weight = p.usize("max_weight")?;
    let mut rng = rng_for(run, 0);
    let mut table = Table::new(&["index", "a", "series", "detpow", "rel_err"]);
    let (mut worst, mut unconverged) = (0.0f64, 0);
    for i in 0..count {
        let r = radius * rng.random_range(0.05..=1.0);
        let x = sym_with_radius(&mut rng, dim, r);
        let eig: Vec<f64> = x.eigenvalues().iter().copied().collect();
        for &a in &a_list {
            let cfg = HypergeomConfig::new(&[a], &[]).with_max_weight(max_weight);
            let s = series_on_spectrum(&cfg, &Spectrum::Real(eig.clone()))?;
            let exact = (-a * eig.iter().map(|l| (1.0 - l).ln()).sum::<f64>()).exp();
            let e = rel_err(s.value, exact);
            worst = worst.max(e);
            unconverged += usize::from(!s.converged);
            table.push(vec![i as f64, a, s.value, exact, e]);
        }
    }
    run.stat("max_rel_err", worst);
    run.stat("unconverged", unconverged as f64);
    run.check(Check::le("max_rel_err", "rel_tol"));
    run.check(Check::eq("unconverged", 0.0));
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- Γ_k

fn gamma_rec_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"max_k": 6, "points": 20}), tols(&[("rel_tol", 1e-12)]))
}

fn gamma_rec_run(run: &mut Run) -> Result<()> {
    let (max_k, points) = (run.params.usize("max_k")?, run.params.usize("points")?);
    let ln_pi = PI.ln();
    let mut worst = 0.0f64;
    let mut table = Table::new(&["k", "a", "ln_gamma_k", "recurrence", "rel_err"]);
    for k in 1..=max_k {
        for step in 1..=points {
            let a = (k as f64 - 1.0) / 2.0 + 0.05 + 0.37 * step as f64;
            let lhs = mv_gamma_ln(k, a)?;
            let rhs = if k == 1 {
                ln_gamma(a)
            } else {
                (k as f64 - 1.0) / 2.0 * ln_pi + ln_gamma(a) + mv_gamma_ln(k - 1, a - 0.5)?
            };
            // relative error of Γ_k itself is |Δ ln Γ_k|
            let e = (lhs - rhs).abs() / lhs.abs().max(1.0);
            worst = worst.max(e);
            table.push(vec![k as f64, a, lhs, rhs, e]);
        }
    }
    run.stat("max_rel_err", worst);
    run.check(Check::le("max_rel_err", "rel_tol"));
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- ∫ e^{-zs} s^{a-1}

fn gamma_int_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"a": [0.7, 1.0, 2.5], "z": [0.5, 1.0, 3.0]}), tols(&[("rel_tol", 1e-6)]))
}

fn gamma_int_run(run: &mut Run) -> Result<()> {
    let (a_list, z_list) = (run.params.f64_list("a")?, run.params.f64_list("z")?);
    let mut worst = 0.0f64;
    let mut table = Table::new(&["a", "z", "quadrature", "closed_form", "rel_err"]);
    for &a in &a_list {
        for &z in &z_list {
            let q = integrate_semi_infinite(|s| (-z * s).exp() * s.powf(a - 1.0), 0.0, 1e-14, 1e-12);
            let exact = (mv_gamma_ln(1, a)? - a * z.ln()).exp();
            let e = rel_err(q.value, exact);
            worst = worst.max(e);
            table.push(vec![a, z, q.value, exact, e]);
        }
    }
    run.stat("max_rel_err", worst);
    run.check(Check::le("max_rel_err", "rel_tol"));
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- Haar averages

fn haar_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({"n": 3, "k": 2, "samples": 100000, "upper": [], "lower": [], "x_radius": 1.0, "y_radius": 1.0}),
        tols(&[("z_max", 3.0)]),
    )
}

fn haar_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (n, k, samples) = (p.usize("n")?, p.usize("k")?, p.usize("samples")?);
    let cfg = HypergeomConfig::new(&p.f64_list("upper")?, &p.f64_list("lower")?);
    let mut rng = rng_for(run, 0);
    let x = sym_with_radius(&mut rng, n, p.f64("x_radius")?);
    let y = sym_with_radius(&mut rng, k, p.f64("y_radius")?);
    let analytic = hypergeom_two_embedded(&cfg, &x, &y)?;
    let (mean, se) = haar_average_oracle(&cfg, &x, &y, samples, sub_seed(run.seed, 1))?;
    run.stat("analytic", analytic.value);
    run.stat("analytic_converged", f64::from(u8::from(analytic.converged)));
    run.stat("mc_mean", mean);
    run.stat("mc_std_error", se);
    run.stat("z_score", (analytic.value - mean).abs() / se);
    run.check(Check::le("z_score", "z_max"));
    run.check(Check::eq("analytic_converged", 1.0));
    Ok(())
}

fn james_0f1_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"n": 3, "k": 2, "samples": 100000, "scale": 0.8}), tols(&[("z_max", 3.0)]))
}

fn james_0f1_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (n, k, samples, scale) = (p.usize("n")?, p.usize("k")?, p.usize("samples")?, p.f64("scale")?);
    let mut rng = rng_for(run, 0);
    let x = gauss(&mut rng, n, k) * scale;
    let xtx = SymMatrix::from_unchecked(symmetrize(&(x.transpose() * &x / 4.0)));
    let analytic = hypergeom_one(&HypergeomConfig::new(&[], &[n as f64 / 2.0]), &xtx)?;
    let blocks = par_blocks(sub_seed(run.seed, 1), samples, |rng, len| {
        let mut m = Moments::default();
        for _ in 0..len {
            let h = haar_orthogonal(rng, n);
            m.push(x.component_mul(&h.columns(0, k)).sum().exp());
        }
        m
    });
    let mc = Moments::merged(&blocks);
    run.stat("analytic", analytic.value);
    run.stat("analytic_converged", f64::from(u8::from(analytic.converged)));
    run.stat("mc_mean", mc.mean);
    run.stat("mc_std_error", mc.std_error());
    run.stat("z_score", (analytic.value - mc.mean).abs() / mc.std_error());
    run.check(Check::le("z_score", "z_max"));
    run.check(Check::eq("analytic_converged", 1.0));
    Ok(())
}

// ---------------------------------------------------------------- vec / Kronecker

fn vec_kron_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"triples": 50, "n": 4, "k": 3}), tols(&[("rel_tol", 1e-13)]))
}

fn vec_kron_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (triples, n, k) = (p.usize("triples")?, p.usize("n")?, p.usize("k")?);
    let mut rng = rng_for(run, 0);
    let (mut worst, mut worst_general) = (0.0f64, 0.0f64);
    for _ in 0..triples {
        let a_gen = gauss(&mut rng, n, n);
        let a = symmetrize(&a_gen);
        let b = gauss(&mut rng, k, k);
        let x = gauss(&mut rng, n, k);
        let v = vec_t(&x);
        let lhs = (&a * &x * &b * x.transpose()).trace();
        let rhs = v.dot(&(kron(&a, &b) * &v));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        // neither factor symmetric: the identity needs Aᵀ on the right
        let lg = (&a_gen * &x * &b * x.transpose()).trace();
        let rg = v.dot(&(kron(&a_gen, &b) * &v));
        worst_general = worst_general.max((lg - rg).abs() / lg.abs().max(1.0));
    }
    run.stat("max_rel_err", worst);
    run.stat("both_nonsymmetric_max_rel_diff", worst_general);
    run.check(Check::le("max_rel_err", "rel_tol"));
    run.note("the identity is exact when A or B is symmetric; with both non-symmetric it holds with Aᵀ, which both_nonsymmetric_max_rel_diff shows");
    Ok(())
}

// ---------------------------------------------------------------- densities

fn mvn_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({"specs_per_family": 10, "max_n": 4, "max_k": 3, "points_per_spec": 3}),
        tols(&[("abs_tol", 1e-10)]),
    )
}

fn mvn_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (per, max_n, max_k, points) = (
        p.usize("specs_per_family")?,
        p.usize("max_n")?,
        p.usize("max_k")?,
        p.usize("points_per_spec")?,
    );
    let mut rng = rng_for(run, 0);
    let (mut worst, mut worst_nested) = (0.0f64, 0.0f64);
    let labels = ["T1", "T1_5", "T2", "T3", "T3_mean"];
    for label in labels {
        let mut fam_worst = 0.0f64;
        for _ in 0..per {
            let n = rng.random_range(1..=max_n);
            let k = rng.random_range(1..=max_k);
            let spec: ModelSpec = match label {
                "T3_mean" => random::t3(&mut rng, n, k, true).into(),
                other => random::spec(&mut rng, other.parse::<FamilyTag>()?, n, k),
            };
            let as_t1 = (label != "T3_mean").then(|| spec.to_t1()).transpose()?;
            for _ in 0..points {
                let x = gauss(&mut rng, n, k);
                let a = log_density(&spec, &x)?;
                let b = dense_log_density(&spec, &x)?;
                fam_worst = fam_worst.max((a - b).abs());
                if let Some(t1) = &as_t1 {
                    let c = log_density(&ModelSpec::T1(t1.clone()), &x)?;
                    worst_nested = worst_nested.max((a - c).abs());
                }
            }
        }
        run.stat(format!("{label}_max_abs_err"), fam_worst);
        worst = worst.max(fam_worst);
    }
    run.stat("max_abs_err", worst);
    run.stat("nesting_max_abs_err", worst_nested);
    run.check(Check::le("max_abs_err", "abs_tol"));
    run.check(Check::le("nesting_max_abs_err", "abs_tol"));
    Ok(())
}

// ---------------------------------------------------------------- sampler moments

fn moments_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"n": 3, "k": 2, "draws": 100000, "model": null}), tols(&[("z_max", 4.0)]))
}

/// Largest |z| of the entrywise mean and covariance of `vec(Xᵀ)` against
/// `mean` and `cov`.
fn moment_z(draws: &[DMatrix<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, f64) {
    let d = mean.len();
    let mut first = vec![Moments::default(); d];
    let mut second = vec![Moments::default(); d * d];
    for x in draws {
        let v = vec_t(x) - mean;
        for a in 0..d {
            first[a].push(v[a]);
            for b in a..d {
                second[a * d + b].push(v[a] * v[b]);
            }
        }
    }
    let mut zm = 0.0f64;
    let mut zc = 0.0f64;
    for a in 0..d {
        zm = zm.max(first[a].mean.abs() / first[a].std_error());
        for b in a..d {
            let m = &second[a * d + b];
            zc = zc.max((m.mean - cov[(a, b)]).abs() / m.std_error());
        }
    }
    (zm, zc)
}

fn moments_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let draws = p.usize("draws")?;
    let spec = match p.model("model")? {
        Some(s) => s,
        None => {
            let mut rng = rng_for(run, 0);
            random::t3(&mut rng, p.usize("n")?, p.usize("k")?, true).into()
        }
    };
    let cov = build_precision(&spec)?.inverse()?.into_matrix();
    let mean = vec_t(&spec.mean());
    let generic = sample(&spec, draws, sub_seed(run.seed, 1))?;
    let (zm, zc) = moment_z(&generic, &mean, &cov);
    run.stat("generic_max_mean_z", zm);
    run.stat("generic_max_cov_z", zc);
    run.check(Check::le("generic_max_mean_z", "z_max"));
    run.check(Check::le("generic_max_cov_z", "z_max"));
    if let ModelSpec::T3(t3) = &spec {
        let kron_draws = sample_t3_kronecker(t3, draws, sub_seed(run.seed, 2));
        let (zm, zc) = moment_z(&kron_draws, &mean, &cov);
        run.stat("kronecker_max_mean_z", zm);
        run.stat("kronecker_max_cov_z", zc);
        run.check(Check::le("kronecker_max_mean_z", "z_max"));
        run.check(Check::le("kronecker_max_cov_z", "z_max"));
    }
    Ok(())
}

// ---------------------------------------------------------------- a.s. PD

fn pd_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({"cases": [[3, 3], [5, 3], [2, 3]], "count": 10000}),
        tols(&[("pd_rel_tol", PD_REL_TOL)]),
    )
}

fn pd_run(run: &mut Run) -> Result<()> {
    let cases = run.params.pairs("cases")?;
    let count = run.params.usize("count")?;
    let thr = run.tol("pd_rel_tol");
    for (i, &(n, k)) in cases.iter().enumerate() {
        let mut rng = rng_for(run, 2 * i as u64);
        let spec = ModelSpec::T1(random::t1(&mut rng, n, k));
        let sampler = Sampler::new(&spec)?;
        // (min λ_min/λ_max, max |λ_min|/λ_max, exceptions) per block
        let blocks = par_blocks(sub_seed(run.seed, 2 * i as u64 + 1), count, |rng, len| {
            let (mut lo, mut hi, mut bad) = (f64::INFINITY, 0.0f64, 0usize);
            for _ in 0..len {
                let x = sampler.draw(rng);
                let ev = sym_eigenvalues(&(x.transpose() * &x));
                let ratio = ev[ev.len() - 1] / ev[0];
                lo = lo.min(ratio);
                hi = hi.max(ratio.abs());
                let pd = ratio > thr;
                bad += usize::from(if n >= k { !pd } else { ratio.abs() > thr });
            }
            (lo, hi, bad)
        });
        let lo = blocks.iter().fold(f64::INFINITY, |m, b| m.min(b.0));
        let hi = blocks.iter().fold(0.0f64, |m, b| m.max(b.1));
        let bad: usize = blocks.iter().map(|b| b.2).sum();
        let tag = format!("n{n}_k{k}");
        run.stat(format!("{tag}_exceptions"), bad as f64);
        if n >= k {
            run.stat(format!("{tag}_min_eigen_ratio"), lo);
        } else {
            run.stat(format!("{tag}_max_abs_eigen_ratio"), hi);
        }
        run.check(Check::eq(&format!("{tag}_exceptions"), 0.0));
    }
    run.note("n >= k: every S must have λ_min > pd_rel_tol·λ_max; n < k: every S must have |λ_min| <= pd_rel_tol·λ_max");
    Ok(())
}

// ---------------------------------------------------------------- q-invariance

fn q_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({"q": [0.5, 1.0, 2.0, 5.0], "points": 10, "max_n": 6, "max_k": 3, "chi2_s": [0.5, 2.0, 7.0], "chi2_max_n": 6}),
        tols(&[("rel_spread", 1e-8), ("chi2_rel_tol", 1e-10)]),
    )
}

fn q_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let q_list = p.f64_list("q")?;
    let (points, max_n, max_k) = (p.usize("points")?, p.usize("max_n")?, p.usize("max_k")?);
    let (chi2_s, chi2_max_n) = (p.f64_list("chi2_s")?, p.usize("chi2_max_n")?);
    let mut rng = rng_for(run, 0);
    let mut spread = 0.0f64;
    let mut unconverged = 0;
    let mut table = Table::new(&["point", "n", "k", "q", "density"]);
    for i in 0..points {
        let k = rng.random_range(1..=max_k);
        let n = rng.random_range(k.max(1)..=max_n);
        let phi = SymMatrix::from_unchecked(random::spd(&mut rng, n));
        let psi = SymMatrix::from_unchecked(random::spd(&mut rng, k));
        let s = SymMatrix::from_unchecked(random::spd(&mut rng, k));
        let mut vals = Vec::new();
        for &q in &q_list {
            let v = wishart_density(n, &phi, &psi, &s, q)?;
            unconverged += usize::from(!v.converged);
            vals.push(v.value);
            table.push(vec![i as f64, n as f64, k as f64, q, v.value]);
        }
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        spread = spread.max((hi - lo) / mean.abs());
    }
    let mut chi2 = 0.0f64;
    for n in 1..=chi2_max_n {
        for &s in &chi2_s {
            for &q in &q_list {
                let v = wishart_density(n, &SymMatrix::identity(n), &SymMatrix::identity(1), &SymMatrix::from_diagonal(&[s]), q)?;
                chi2 = chi2.max(rel_err(v.value, chi2_pdf(n, s)));
            }
        }
    }
    run.stat("max_rel_spread", spread);
    run.stat("unconverged", unconverged as f64);
    run.stat("chi2_max_rel_err", chi2);
    run.check(Check::le("max_rel_spread", "rel_spread"));
    run.check(Check::eq("unconverged", 0.0));
    run.check(Check::le("chi2_max_rel_err", "chi2_rel_tol"));
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- χ² reductions

fn chisq_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"max_n": 6, "s": [0.5, 2.0, 7.0]}), tols(&[("rel_tol", 1e-10)]))
}

fn scalar_identity_model(n: usize) -> Result<QFModel> {
    let spec = crate::models::T1Spec::new(n, 1, vec![vec![DMatrix::identity(n, n)]], DMatrix::identity(1, 1))?;
    QFModel::central(spec)
}

fn chisq_run(run: &mut Run) -> Result<()> {
    let max_n = run.params.usize("max_n")?;
    let s_list = run.params.f64_list("s")?;
    let (mut w_err, mut d_err, mut d_scaled) = (0.0f64, 0.0f64, 0.0f64);
    let mut table = Table::new(&["n", "s", "chi2", "wishart_density", "density_s", "density_s_u_over_n"]);
    for n in 1..=max_n {
        let model = scalar_identity_model(n)?;
        let lg = mv_gamma_ln(1, n as f64 / 2.0)?;
        for &s in &s_list {
            let target = chi2_pdf(n, s);
            let sm = SymMatrix::from_diagonal(&[s]);
            let w = wishart_density(n, &SymMatrix::identity(n), &SymMatrix::identity(1), &sm, 2.0)?.value;
            let d = density_s(&model, &sm)?.value;
            let t = model.t_matrix(&sm);
            let dn = ln_central_kernel(&model, &t, &(model.u().matrix() / n as f64), lg).exp();
            w_err = w_err.max(rel_err(w, target));
            d_err = d_err.max(rel_err(d, target));
            d_scaled = d_scaled.max(rel_err(dn, target));
            table.push(vec![n as f64, s, target, w, d, dn]);
        }
    }
    run.stat("wishart_max_rel_err", w_err);
    run.stat("density_s_max_rel_err", d_err);
    run.stat("density_s_u_over_n_max_rel_err", d_scaled);
    run.check(Check::le("wishart_max_rel_err", "rel_tol"));
    run.check(Check::le("density_s_max_rel_err", "rel_tol"));
    run.note(
        "density of S at k = 1, A = I_n with u = tr A = n has kernel exp(-n s / 2) instead of exp(-s / 2); \
         it equals the χ²_n density only for n = 1. Replacing U by U/n (density_s_u_over_n) recovers χ²_n exactly.",
    );
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- MGF

fn mgf_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({
            "n": 3, "k": 2, "draws": 100000,
            "gamma": [[0.05, -0.02], [-0.02, 0.04]],
            "scalar_n": [2, 3, 4, 5, 6],
            "model": null
        }),
        tols(&[("z_max", 3.0), ("factor_spread_tol", 1e-8)]),
    )
}

fn matrix_param(v: &Value, key: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone())
        .map_err(|e| crate::Error::Config(format!("parameter `{key}` must be a matrix: {e}")))?;
    crate::linalg::matrix_from_rows(&rows)
}

fn mgf_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let draws = p.usize("draws")?;
    let model = match p.model("model")? {
        Some(s) => QFModel::from_model(&s)?,
        None => {
            let mut rng = rng_for(run, 0);
            QFModel::central(random::t1(&mut rng, p.usize("n")?, p.usize("k")?))?
        }
    };
    let gamma = crate::quadform::mirror_upper(&matrix_param(p.get("gamma")?, "gamma")?)?;
    let scalar_n: Vec<usize> = p
        .f64_list("scalar_n")?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    // Σ_{i≤j} γ_ij s_ij = tr(G S)
    let g = DMatrix::from_fn(model.k(), model.k(), |i, j| {
        if i == j {
            gamma.matrix()[(i, j)]
        } else {
            0.5 * gamma.matrix()[(i, j)]
        }
    });
    let s_draws = model.sample_s(draws, sub_seed(run.seed, 1))?;
    let mc: Moments = s_draws.iter().map(|s| (&g * s.matrix()).trace().exp()).collect();
    let formula = mgf(&model, &gamma).map(|v| v.value).unwrap_or(f64::NAN);
    let exact = gaussian_mgf(&model, &gamma)?.value;
    let se = mc.std_error();
    run.stat("mc_mean", mc.mean);
    run.stat("mc_std_error", se);
    run.stat("mgf_formula", formula);
    run.stat("gaussian_mgf", exact);
    run.stat("z_formula", (formula - mc.mean).abs() / se);
    run.stat("z_gaussian", (exact - mc.mean).abs() / se);
    run.check(Check::le("z_formula", "z_max"));
    run.check(Check::le("z_gaussian", "z_max"));

    // k = 1, A = I_n: the χ²_n MGF is 1 at γ = 0, so the formula's value
    // there is the normalization factor
    let mut factors = Vec::new();
    for &n in &scalar_n {
        let m = scalar_identity_model(n)?;
        let f = mgf(&m, &SymMatrix::zeros(1))?.value;
        run.stat(format!("scalar_factor_n{n}"), f);
        factors.push(f);
    }
    let spread = factors
        .iter()
        .map(|f| (f / factors[0] - 1.0).abs())
        .fold(0.0f64, f64::max);
    run.stat("factor_rel_spread", spread);
    run.check(Check::le("factor_rel_spread", "factor_spread_tol"));
    run.note(
        "with 2R = Γ + I the formula is not 1 at Γ = 0: at k = 1, A = I_n it equals (n - (γ + 1)/2)^{-n/2}, \
         so the Γ = 0 factor (n - 1/2)^{-n/2} varies with n. gaussian_mgf = |Θ|^{1/2}|Θ - 2 I⊗G|^{-1/2} \
         (times the mean terms) is the exact MGF and agrees with the Monte Carlo mean.",
    );
    Ok(())
}

// ---------------------------------------------------------------- roots GOF

fn roots_defaults() -> (Value, BTreeMap<String, f64>) {
    (
        json!({
            "n": 6,
            "psi_diag": [2.0, 0.5],
            "draws": 100000,
            "l1_edges": [0.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 16.0, 20.0, 25.0, 32.0, 45.0, 120.0],
            "ratio_edges": [0.0, 0.03, 0.06, 0.1, 0.15, 0.2, 0.3, 0.4, 0.55, 0.75, 1.0],
            "min_expected": 5.0,
            "scalar_max_n": 6
        }),
        tols(&[("alpha", 0.01), ("scalar_rel_tol", 1e-12), ("oracle_rel_tol", 1e-8)]),
    )
}

/// `₀F₀(X, Y)` for 2×2 diagonal arguments:
/// `e^{tr X tr Y / 2} (1/π) ∫_0^π exp(½(x₁−x₂)(y₁−y₂) cos θ) dθ`.
fn two_by_two_0f0(x: [f64; 2], y: [f64; 2]) -> f64 {
    let z = 0.5 * (x[0] - x[1]) * (y[0] - y[1]);
    let i0 = integrate(|t| (z * t.cos()).exp(), 0.0, PI, 1e-300, 1e-14).value / PI;
    (0.5 * (x[0] + x[1]) * (y[0] + y[1])).exp() * i0
}

fn roots_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let n = p.usize("n")?;
    let psi_diag = p.f64_list("psi_diag")?;
    let draws = p.usize("draws")?;
    let l1_edges = p.f64_list("l1_edges")?;
    let r_edges = p.f64_list("ratio_edges")?;
    let min_expected = p.f64("min_expected")?;
    let scalar_max_n = p.usize("scalar_max_n")?;
    let k = psi_diag.len();
    if k != 2 {
        return Err(crate::Error::Config("roots-gof bins the k = 2 joint density; psi_diag needs 2 entries".into()));
    }
    let psi = SymMatrix::from_diagonal(&psi_diag);
    let t3 = T3Spec::new(n, k, DMatrix::identity(n, n), psi.matrix().clone(), None)?;
    let xs = sample_t3_kronecker(&t3, draws, sub_seed(run.seed, 1));
    let roots: Vec<[f64; 2]> = xs
        .par_iter()
        .map(|x| {
            let ev = sym_eigenvalues(&(x.transpose() * x));
            [ev[0], ev[1]]
        })
        .collect();

    let (nb1, nb2) = (l1_edges.len() - 1, r_edges.len() - 1);
    let bin_of = |l: &[f64; 2]| -> Option<usize> {
        let r = l[1] / l[0];
        // last l1 bin is open above
        let i = l1_edges[1..].iter().position(|&e| l[0] < e).unwrap_or(nb1 - 1);
        let j = r_edges[1..].iter().position(|&e| r < e)?;
        Some(i * nb2 + j)
    };
    let mut observed = vec![0.0; nb1 * nb2];
    for l in &roots {
        if let Some(b) = bin_of(l) {
            observed[b] += 1.0;
        }
    }
    let density = |l1: f64, l2: f64| james_roots_density(n, &psi, &[l1, l2]).map(|v| v.value).unwrap_or(0.0);
    let probs: Vec<f64> = (0..nb1 * nb2)
        .into_par_iter()
        .map(|b| {
            let (i, j) = (b / nb2, b % nb2);
            let (ra, rb) = (r_edges[j], r_edges[j + 1]);
            // l2 = r l1, dl2 = l1 dr
            integrate_2d(
                |l1, r| density(l1, r * l1) * l1,
                (l1_edges[i], l1_edges[i + 1]),
                |_| ra,
                |_| rb,
                1e-9,
                1e-6,
            )
            .value
        })
        .collect();
    let expected: Vec<f64> = probs.iter().map(|p| p * draws as f64).collect();
    let (stat, cells) = pearson_pooled(&observed, &expected, min_expected);
    let dof = cells.saturating_sub(1).max(1);
    let critical = chi_square_critical(run.tol("alpha"), dof);
    run.stat("chi2_statistic", stat);
    run.stat("chi2_critical", critical);
    run.stat("pooled_cells", cells as f64);
    run.stat("binned_probability_total", probs.iter().sum());
    run.check(Check::compare("chi2_statistic", super::Cmp::Lt, "chi2_critical"));

    // series against the 2×2 Bessel-type closed form
    let x = [-0.5 / psi_diag[0], -0.5 / psi_diag[1]];
    let cfg = HypergeomConfig::new(&[], &[]).with_max_weight(200);
    let mut oracle = 0.0f64;
    for l in [[1.0, 0.2], [8.0, 1.5], [20.0, 4.0], [40.0, 2.0]] {
        let s = hypergeom_two(&cfg, &SymMatrix::from_diagonal(&x), &SymMatrix::from_diagonal(&l))?;
        oracle = oracle.max(rel_err(s.value, two_by_two_0f0(x, l)));
    }
    run.stat("zero_f_zero_oracle_max_rel_err", oracle);
    run.check(Check::le("zero_f_zero_oracle_max_rel_err", "oracle_rel_tol"));

    // k = 1: the root density and the density of S coincide
    let mut rng = rng_for(run, 2);
    let mut scalar = 0.0f64;
    for n1 in 1..=scalar_max_n {
        let model = QFModel::central(random::t1(&mut rng, n1, 1))?;
        for s in [0.3, 1.0, 4.0] {
            let a = roots_density(&model, &[s])?.value;
            let b = density_s(&model, &SymMatrix::from_diagonal(&[s]))?.value;
            scalar = scalar.max(rel_err(a, b));
        }
    }
    run.stat("scalar_roots_vs_density_max_rel_err", scalar);
    run.check(Check::le("scalar_roots_vs_density_max_rel_err", "scalar_rel_tol"));

    if run.dump {
        let mut t = Table::new(&["l1", "l2"]);
        for l in &roots {
            t.push(vec![l[0], l[1]]);
        }
        run.table = Some(t);
    }
    Ok(())
}

// ---------------------------------------------------------------- James reduction

fn james_red_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"n": 5, "k": 2, "points": 5}), tols(&[("rel_tol", 1e-8)]))
}

fn james_red_run(run: &mut Run) -> Result<()> {
    let p = &run.params;
    let (n, k, points) = (p.usize("n")?, p.usize("k")?, p.usize("points")?);
    let mut rng = rng_for(run, 0);
    let psi = SymMatrix::from_unchecked(random::spd(&mut rng, k));
    let t3 = T3Spec::new(n, k, DMatrix::identity(n, n), psi.matrix().clone(), None)?;
    let model = QFModel::from_model(&ModelSpec::T3(t3.clone()))?;
    let nf = n as f64;
    let psi_over_n = psi.scale(1.0 / nf);
    let lg = mv_gamma_ln(k, nf / 2.0)?;
    let draws = model.sample_s(points, sub_seed(run.seed, 1))?;
    let (mut roots_err, mut roots_scaled, mut dens_err, mut dens_scaled) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut table = Table::new(&["point", "roots_formula", "james", "density_formula", "wishart_density"]);
    for (i, s) in draws.iter().enumerate() {
        let l: Vec<f64> = s.eigenvalues().iter().copied().collect();
        let lit = roots_density(&model, &l)?.value;
        let james = james_roots_density(n, &psi, &l)?.value;
        // identified relation: formula = n^{-nk/2} · James(Ψ/n)
        let scaled = james_roots_density(n, &psi_over_n, &l)?.value * nf.powf(-0.5 * nf * k as f64);
        roots_err = roots_err.max(rel_err(lit, james));
        roots_scaled = roots_scaled.max(rel_err(lit, scaled));

        let d = density_s(&model, s)?.value;
        let w = wishart_density(n, &SymMatrix::identity(n), &psi, s, 2.0)?.value;
        let t = model.t_matrix(s);
        let dn = ln_central_kernel(&model, &t, &(model.u().matrix() / nf), lg).exp();
        dens_err = dens_err.max(rel_err(d, w));
        dens_scaled = dens_scaled.max(rel_err(dn, w));
        table.push(vec![i as f64, lit, james, d, w]);
    }
    run.stat("roots_vs_james_max_rel_err", roots_err);
    run.stat("roots_vs_scaled_james_max_rel_err", roots_scaled);
    run.stat("density_vs_wishart_max_rel_err", dens_err);
    run.stat("density_u_over_n_vs_wishart_max_rel_err", dens_scaled);
    run.check(Check::le("roots_vs_james_max_rel_err", "rel_tol"));
    run.check(Check::le("density_vs_wishart_max_rel_err", "rel_tol"));
    run.note(
        "with u_ij = tr A_ij, the model Φ = I gives U = n·(Ψ⁻¹ in the frame), so the root formula equals \
         n^{-nk/2}·James(Ψ/n) rather than James(Ψ) (roots_vs_scaled_james_max_rel_err), and the density of S \
         matches the Wishart density once U is replaced by U/n (density_u_over_n_vs_wishart_max_rel_err)",
    );
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- 3-variate display

fn w1928_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"n": 7, "points": 10}), tols(&[("rel_tol", 1e-6), ("fit_tol", 1e-8)]))
}

const W1928_TERMS: [&str; 7] = ["const", "Aa", "Bb", "Cc", "Ff", "Gg", "Hh"];

fn w1928_run(run: &mut Run) -> Result<()> {
    let (n, points) = (run.params.usize("n")?, run.params.usize("points")?);
    let mut rng = rng_for(run, 0);
    let b = SymMatrix::from_unchecked(random::spd(&mut rng, 3));
    let lam = wishart1928_coefficients(&b)?;
    // matched parameters: ν = n − 1, Φ = I_ν, Ψ = ½ Λ⁻¹
    let psi = SymMatrix::new(lam.clone())?.inverse()?.scale(0.5);
    let mut ratios = Vec::new();
    let mut design = Vec::new();
    let mut table = Table::new(&["point", "display_ln", "wishart_ln", "log_ratio"]);
    for i in 0..points {
        let s = SymMatrix::from_unchecked(random::spd(&mut rng, 3));
        let m = Moments3::from_matrix(s.matrix())?;
        let d = wishart1928_density_k3(&m, &b, n)?;
        let w = wishart_density(n - 1, &SymMatrix::identity(n - 1), &psi, &s, 2.0)?;
        let lr = d.ln_abs - w.ln_abs;
        ratios.push(lr);
        design.push([
            1.0,
            lam[(0, 0)] * m.a,
            lam[(1, 1)] * m.b,
            lam[(2, 2)] * m.c,
            lam[(0, 1)] * m.f,
            lam[(0, 2)] * m.g,
            lam[(1, 2)] * m.h,
        ]);
        table.push(vec![i as f64, d.ln_abs, w.ln_abs, lr]);
    }
    let c0 = ratios[0];
    let calibrated = ratios.iter().map(|r| ((r - c0).exp() - 1.0).abs()).fold(0.0f64, f64::max);
    run.stat("calibrated_max_rel_err", calibrated);

    // which exponent terms explain the log ratio?
    let x = DMatrix::from_fn(points, W1928_TERMS.len(), |i, j| design[i][j]);
    let y = DVector::from_vec(ratios.clone());
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| crate::Error::Domain(format!("least squares failed: {e}")))?;
    let residual = (&x * &coef - &y).amax();
    run.stat("fit_max_residual", residual);
    let fit_tol = run.tol("fit_tol");
    let mut identified = Vec::new();
    for (j, name) in W1928_TERMS.iter().enumerate() {
        run.stat(format!("fit_coef_{name}"), coef[j]);
        if j > 0 && coef[j].abs() > fit_tol {
            identified.push((*name, coef[j]));
        }
    }
    run.stat("identified_terms", identified.len() as f64);
    let ff_only = identified.len() == 1 && identified[0].0 == "Ff";
    run.stat("identified_term_is_Ff", f64::from(u8::from(ff_only)));
    // substitute −2Ff for −8Ff and compare again
    let corrected = ratios
        .iter()
        .zip(&design)
        .map(|(r, d)| ((r + 6.0 * d[4]) - (ratios[0] + 6.0 * design[0][4])).exp() - 1.0)
        .fold(0.0f64, |m, e| m.max(e.abs()));
    run.stat("corrected_max_rel_err", corrected);
    run.check(Check::Any {
        of: vec![
            Check::le("calibrated_max_rel_err", "rel_tol"),
            Check::All {
                of: vec![
                    Check::le("fit_max_residual", "fit_tol"),
                    Check::eq("identified_term_is_Ff", 1.0),
                    Check::le("corrected_max_rel_err", "rel_tol"),
                ],
            },
        ],
    });
    if calibrated > run.tol("rel_tol") {
        let desc: Vec<String> = identified.iter().map(|(t, c)| format!("{t}: {c:+.6}")).collect();
        run.note(format!(
            "systematic disagreement after one-point calibration; least squares on the exponent terms attributes the \
             log ratio to [{}]. The display's −8Ff term, where the other cross terms read −2Gg, −2Hh, accounts for \
             a log ratio of −6Ff; with −2Ff the display matches the Wishart density (corrected_max_rel_err).",
            desc.join(", ")
        ));
    }
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}

// ---------------------------------------------------------------- Gindikin

fn gindikin_defaults() -> (Value, BTreeMap<String, f64>) {
    (json!({"max_k": 5, "quarter_steps": 20}), tols(&[("half_integer_tol", GindikinSet::HALF_INTEGER_TOL)]))
}

fn gindikin_run(run: &mut Run) -> Result<()> {
    let (max_k, steps) = (run.params.usize("max_k")?, run.params.usize("quarter_steps")?);
    let mut mismatches = 0;
    let mut table = Table::new(&["k", "a", "contains"]);
    for k in 1..=max_k {
        for m in 0..=steps {
            // a = m/4 exactly; member iff 2a is an integer ≤ k − 1 or 4a ≥ 2(k − 1)
            let a = m as f64 / 4.0;
            let exact = (m % 2 == 0 && m / 2 < k) || m >= 2 * (k - 1);
            let got = gindikin_contains(k, a);
            mismatches += usize::from(got != exact);
            table.push(vec![k as f64, a, f64::from(u8::from(got))]);
        }
    }
    let examples = [(3, 1.0, true), (3, 0.75, false), (3, 1.5, true)];
    let example_failures = examples
        .iter()
        .filter(|&&(k, a, want)| gindikin_contains(k, a) != want)
        .count();
    // decimals near a half-integer are matched within the tolerance
    let tol = run.tol("half_integer_tol");
    let near = gindikin_contains(3, 0.5 + 0.5 * tol) && !gindikin_contains(3, 0.5 + 10.0 * tol);
    run.stat("mismatches", mismatches as f64);
    run.stat("example_failures", example_failures as f64);
    run.stat("near_half_integer_ok", f64::from(u8::from(near)));
    run.check(Check::eq("mismatches", 0.0));
    run.check(Check::eq("example_failures", 0.0));
    run.check(Check::eq("near_half_integer_ok", 1.0));
    if run.dump {
        run.table = Some(table);
    }
    Ok(())
}
