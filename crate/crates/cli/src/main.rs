mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matgamma::manifolds::{sample_orthogonal, sample_stiefel};
use matgamma::quadform::{density_s_with, gaussian_mgf, mgf_with, mirror_upper, roots_density_with};
use matgamma::specfun::{hypergeom_one_series, hypergeom_two_embedded};
use matgamma::verify::{default_config, default_suite, primary_tolerance};
use matgamma::zonal::{rational_to_string, shared_table, zonal_c};
use matgamma::{
    experiment_registry, hypergeom_one, run_experiment, EvalOptions, Error, ExperimentConfig, ExperimentReport,
    HypergeomConfig, Partition, QFModel, SymMatrix,
};
use serde_json::{json, Value};

use output::{Format, Records};

#[derive(Parser)]
#[command(name = "matgamma", version, about = "Hypergeometric functions of matrix argument and quadratic forms in matrix-normal variables")]
struct Cli {
    /// Seed for anything random (overrides config seeds in `verify`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (directory for `verify`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Relative tolerance for series, or the primary tolerance in `verify`.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zonal polynomial values, or the coefficient table as CSV.
    Zonal(ZonalArgs),
    /// Hypergeometric function pFq of one or two matrix arguments.
    Hyp(HypArgs),
    /// Density of S = (X + M)ᵀ(X + M) at points.
    Density(PointArgs),
    /// Moment generating function of S at Γ matrices.
    Mgf(PointArgs),
    /// Joint density of the characteristic roots of S.
    Roots(PointArgs),
    /// Haar-distributed orthogonal or Stiefel matrices.
    Sample(SampleArgs),
    /// Run verification experiments and write reports.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ZonalArgs {
    /// Partition κ, e.g. `2,1`. Without it the coefficient table is dumped.
    #[arg(long)]
    partition: Option<String>,
    /// Eigenvalues to evaluate C_κ at.
    #[arg(long)]
    eigs: Option<String>,
    /// Largest weight of the dumped table.
    #[arg(long, default_value_t = 4)]
    weight: usize,
    /// Number of variables of the dumped table.
    #[arg(long, default_value_t = 4)]
    vars: usize,
}

#[derive(Args)]
struct HypArgs {
    /// Upper parameters a_1..a_p.
    #[arg(long, default_value = "")]
    a: String,
    /// Lower parameters b_1..b_q.
    #[arg(long, default_value = "")]
    b: String,
    /// X as a CSV matrix file or a list of eigenvalues.
    #[arg(long)]
    x: String,
    /// Optional second argument Y (CSV file or eigenvalues).
    #[arg(long)]
    y: Option<String>,
    #[arg(long, default_value_t = HypergeomConfig::DEFAULT_MAX_WEIGHT)]
    max_weight: usize,
    /// Sum the series even where a closed form applies.
    #[arg(long)]
    series_only: bool,
}

#[derive(Args)]
struct PointArgs {
    /// Model JSON (`"family": "T1" | "T1_5" | "T2" | "T3"`).
    #[arg(long)]
    model: PathBuf,
    /// CSV, one point per line: k×k matrices row-major for `density` and
    /// `mgf`, k roots for `roots`.
    #[arg(long)]
    points: PathBuf,
    /// Evaluate the formulas for n ≤ k − 1 without treating the result as a
    /// density or MGF.
    #[arg(long)]
    continuation_experimental: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Manifold {
    Orthogonal,
    Stiefel,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    manifold: Manifold,
    #[arg(long)]
    n: usize,
    /// Columns (Stiefel only; defaults to n).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Experiment ids; the whole registry when empty and no config is given.
    ids: Vec<String>,
    /// JSON config (one object or an array).
    #[arg(long)]
    config: Option<PathBuf>,
    /// List registered experiments and exit.
    #[arg(long)]
    list: bool,
    /// Run up to N experiments concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Write plot data / raw draws as CSV next to each report.
    #[arg(long)]
    dump: bool,
    /// Draw a fresh seed; the reports are marked non-certifying.
    #[arg(long, conflicts_with = "seed")]
    fresh_seed: bool,
}

/// Exit status for an error: 2 when the input was at fault.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::Divergent(_) | Error::TableExhausted { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn run(cli: &Cli) -> matgamma::Result<bool> {
    match &cli.command {
        Command::Zonal(a) => zonal(cli, a),
        Command::Hyp(a) => hyp(cli, a),
        Command::Density(a) => density(cli, a),
        Command::Mgf(a) => mgf(cli, a),
        Command::Roots(a) => roots(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Verify(a) => verify(cli, a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn partition(text: &str) -> matgamma::Result<Partition> {
    let parts = input::numbers(text)?
        .into_iter()
        .map(|p| {
            if p >= 0.0 && p.fract() == 0.0 {
                Ok(p as u32)
            } else {
                Err(usage(format!("partition parts must be non-negative integers, got {p}")))
            }
        })
        .collect::<matgamma::Result<Vec<u32>>>()?;
    Partition::new(parts.into_iter().filter(|&p| p > 0).collect())
}

fn zonal(cli: &Cli, a: &ZonalArgs) -> matgamma::Result<bool> {
    if let Some(p) = &a.partition {
        let kappa = partition(p)?;
        let eigs = input::numbers(a.eigs.as_deref().ok_or_else(|| usage("--partition needs --eigs"))?)?;
        let v = zonal_c(&kappa, &eigs)?;
        let mut rec = Records::new(&["kappa", "eigenvalues", "value"]);
        rec.push(vec![json!(kappa.to_string()), json!(eigs), json!(v)]);
        rec.write(cli.format, cli.out.as_deref())?;
        return Ok(true);
    }
    if a.weight > matgamma::zonal::EXACT_WEIGHT_LIMIT {
        return Err(usage(format!(
            "coefficient tables are dumped up to weight {}",
            matgamma::zonal::EXACT_WEIGHT_LIMIT
        )));
    }
    let table = shared_table(a.weight, a.vars, a.vars)?;
    let mut rec = Records::new(&["weight", "kappa", "monomial", "coefficient", "exact"]);
    for block in table.blocks().iter().skip(1) {
        for poly in &block.polys {
            for (t, &(i, c)) in poly.terms.iter().enumerate() {
                let exact = poly.exact.as_ref().map(|e| rational_to_string(&e[t]));
                rec.push(vec![
                    json!(block.weight),
                    json!(poly.kappa.to_string()),
                    json!(block.monomials[i].to_string()),
                    json!(c),
                    json!(exact),
                ]);
            }
        }
    }
    rec.write(cli.format, cli.out.as_deref())?;
    Ok(true)
}

fn hyp(cli: &Cli, a: &HypArgs) -> matgamma::Result<bool> {
    let mut cfg = HypergeomConfig::new(&input::numbers(&a.a)?, &input::numbers(&a.b)?).with_max_weight(a.max_weight);
    if let Some(t) = cli.tol {
        cfg = cfg.with_rel_tol(t);
    }
    let x = input::sym_arg(&a.x)?;
    let r = match &a.y {
        Some(y) => hypergeom_two_embedded(&cfg, &x, &input::sym_arg(y)?)?,
        None if a.series_only => hypergeom_one_series(&cfg, &x)?,
        None => hypergeom_one(&cfg, &x)?,
    };
    let mut rec = Records::new(&["value", "ln_abs", "sign", "last_weight_contribution", "truncated_at", "converged"]);
    rec.push(vec![
        json!(r.value),
        json!(r.ln_abs),
        json!(r.sign),
        json!(r.last_weight_contribution),
        json!(r.truncated_at),
        json!(r.converged),
    ]);
    rec.write(cli.format, cli.out.as_deref())?;
    Ok(r.converged)
}

fn load_model(a: &PointArgs) -> matgamma::Result<(QFModel, EvalOptions)> {
    let model = QFModel::from_model(&input::model(&a.model)?)?;
    let opts = EvalOptions {
        continuation_experimental: a.continuation_experimental,
    };
    Ok((model, opts))
}

fn evaluation_columns() -> Vec<&'static str> {
    vec!["point", "value", "ln_abs", "sign", "converged"]
}

fn density(cli: &Cli, a: &PointArgs) -> matgamma::Result<bool> {
    let (model, opts) = load_model(a)?;
    let mut rec = Records::new(&evaluation_columns());
    let mut ok = true;
    for (i, s) in input::square_points(&a.points, model.k())?.into_iter().enumerate() {
        let e = density_s_with(&model, &SymMatrix::new(s)?, opts)?;
        ok &= e.converged;
        rec.push(vec![json!(i), json!(e.value), json!(e.ln_abs), json!(e.sign), json!(e.converged)]);
    }
    rec.write(cli.format, cli.out.as_deref())?;
    Ok(ok)
}

fn mgf(cli: &Cli, a: &PointArgs) -> matgamma::Result<bool> {
    let (model, opts) = load_model(a)?;
    let mut cols = evaluation_columns();
    cols.push("gaussian_mgf");
    let mut rec = Records::new(&cols);
    let mut ok = true;
    for (i, g) in input::square_points(&a.points, model.k())?.into_iter().enumerate() {
        let gamma = mirror_upper(&g)?;
        let exact = gaussian_mgf(&model, &gamma).map(|e| e.value).unwrap_or(f64::INFINITY);
        let row = match mgf_with(&model, &gamma, opts) {
            Ok(e) => {
                ok &= e.converged;
                vec![json!(i), json!(e.value), json!(e.ln_abs), json!(e.sign), json!(e.converged)]
            }
            Err(Error::Divergent(msg)) => {
                eprintln!("point {i}: {msg}");
                ok = false;
                vec![json!(i), Value::Null, Value::Null, Value::Null, json!(false)]
            }
            Err(e) => return Err(e),
        };
        let mut row = row;
        row.push(output::number(exact));
        rec.push(row);
    }
    rec.write(cli.format, cli.out.as_deref())?;
    Ok(ok)
}

fn roots(cli: &Cli, a: &PointArgs) -> matgamma::Result<bool> {
    let (model, opts) = load_model(a)?;
    let mut rec = Records::new(&evaluation_columns());
    let mut ok = true;
    for (i, l) in input::csv_rows(&a.points)?.into_iter().enumerate() {
        let e = roots_density_with(&model, &l, opts)?;
        ok &= e.converged;
        rec.push(vec![json!(i), json!(e.value), json!(e.ln_abs), json!(e.sign), json!(e.converged)]);
    }
    rec.write(cli.format, cli.out.as_deref())?;
    Ok(ok)
}

fn sample(cli: &Cli, a: &SampleArgs) -> matgamma::Result<bool> {
    let seed = cli.seed.ok_or_else(|| usage("sample needs --seed"))?;
    let mats: Vec<nalgebra::DMatrix<f64>> = match a.manifold {
        Manifold::Orthogonal => {
            if a.k.is_some_and(|k| k != a.n) {
                return Err(usage("--k applies to the Stiefel manifold only"));
            }
            sample_orthogonal(a.n, a.count, seed)?
        }
        Manifold::Stiefel => sample_stiefel(a.n, a.k.unwrap_or(a.n), a.count, seed)?
            .into_iter()
            .map(|p| p.into_matrix())
            .collect(),
    };
    output::write_matrices(&mats, cli.format, cli.out.as_deref())?;
    Ok(true)
}

fn fresh_seed() -> u64 {
    use std::hash::{BuildHasher, Hasher};
    let mut h = std::collections::hash_map::RandomState::new().build_hasher();
    h.write_u128(
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0),
    );
    h.finish()
}

fn verify(cli: &Cli, a: &VerifyArgs) -> matgamma::Result<bool> {
    if a.list {
        let mut rec = Records::new(&["id", "description"]);
        for (id, desc) in experiment_registry() {
            rec.push(vec![json!(id), json!(desc)]);
        }
        rec.write(cli.format, None)?;
        return Ok(true);
    }
    if a.parallel == 0 {
        return Err(usage("--parallel must be at least 1"));
    }
    let mut configs: Vec<ExperimentConfig> = match &a.config {
        Some(path) => input::config_file(path)?,
        None if a.ids.is_empty() => default_suite(),
        None => Vec::new(),
    };
    for id in &a.ids {
        configs.push(default_config(id)?);
    }
    let seed = if a.fresh_seed { Some(fresh_seed()) } else { cli.seed };
    for cfg in &mut configs {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(t) = cli.tol {
            cfg.tolerances.insert(primary_tolerance(&cfg.id)?.to_string(), t);
        }
        cfg.dump |= a.dump;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.parallel)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let reports: Vec<matgamma::Result<ExperimentReport>> = if a.parallel == 1 {
        configs.iter().map(run_experiment).collect()
    } else {
        use rayon::prelude::*;
        pool.install(|| configs.par_iter().map(run_experiment).collect())
    };
    let mut all_pass = true;
    let default_dir = PathBuf::from("reports");
    for (cfg, report) in configs.iter().zip(reports) {
        let mut report = report?;
        report.certifying = !a.fresh_seed;
        all_pass &= report.pass;
        let dir = cfg.output.as_ref().or(cli.out.as_ref()).unwrap_or(&default_dir);
        let written = report.write_to(dir)?;
        println!(
            "{} {:<24} seed {:<20} {:>7.2} s  {}",
            if report.pass { "PASS" } else { "FAIL" },
            report.id,
            report.seed,
            report.wall_seconds,
            written[0].display()
        );
        for c in report.failed_checks() {
            println!("     failed: {c}");
        }
    }
    if a.fresh_seed {
        println!("fresh seed in use: reports are not certifying");
    }
    Ok(all_pass)
}
