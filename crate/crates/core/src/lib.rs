//! Matrix-normal distributions, hypergeometric functions of matrix argument
//! and the distributions of quadratic forms `S = (X + M)ᵀ(X + M)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`partitions`], [`zonal`]: partitions and zonal polynomials;
//! * [`specfun`]: multivariate gamma and truncated `pFq` series;
//! * [`manifolds`]: Haar/Stiefel sampling, polar decomposition, Gindikin set;
//! * [`models`]: the four matrix-normal families T1 ⊃ T1½ ⊃ T2 ⊃ T3;
//! * [`quadform`]: densities, MGFs and root densities of `S`;
//! * [`verify`]: the deterministic experiment registry behind `matgamma verify`.

// `!(x > 0.0)` is used on purpose to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod jack;
pub mod linalg;
pub mod manifolds;
pub mod models;
pub mod partitions;
pub mod quad;
pub mod quadform;
pub mod rng;
pub mod specfun;
pub mod stats;
pub mod verify;
pub mod zonal;

pub use error::{Error, Result};
pub use linalg::SymMatrix;
pub use manifolds::{gindikin_contains, polar_decompose, sample_orthogonal, sample_stiefel, GindikinSet, StiefelPoint};
pub use models::{build_precision, degrees_of_freedom, log_density, sample, FamilyTag, ModelSpec, T15Spec, T1Spec, T2Spec, T3Spec};
pub use partitions::{gen_pochhammer, partitions_of, Partition};
pub use specfun::{haar_average_oracle, hypergeom_one, hypergeom_two, mv_gamma_ln, HypergeomConfig, SeriesResult};
pub use zonal::{zonal_c, zonal_two_arg, ZonalTable};
pub use quadform::{
    density_s, gaussian_mgf, james_roots_density, mgf, mgf_wishart, roots_density, wishart1928_density_k3,
    wishart_density, EvalOptions, Evaluation, QFModel, RootVector,
};
pub use verify::{experiment_registry, run_experiment, ExperimentConfig, ExperimentReport};
