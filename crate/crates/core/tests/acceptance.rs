//! One PASS/FAIL line per acceptance criterion. Runs the default verification
//! suite twice; exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use matgamma::verify::{default_config, default_suite, run_experiment, ExperimentReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn stat(r: &ExperimentReport, name: &str) -> f64 {
    r.statistics.get(name).copied().unwrap_or(f64::NAN)
}

fn from_reports(reports: &[&ExperimentReport], extra: Option<(bool, String)>) -> Outcome {
    let mut pass = reports.iter().all(|r| r.pass);
    let mut parts: Vec<String> = reports
        .iter()
        .map(|r| {
            let failed: Vec<String> = r.failed_checks().iter().map(|c| c.to_string()).collect();
            if failed.is_empty() {
                format!("{} ok", r.id)
            } else {
                format!("{} failed [{}]", r.id, failed.join("; "))
            }
        })
        .collect();
    if let Some((ok, msg)) = extra {
        pass &= ok;
        parts.push(msg);
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn main() -> ExitCode {
    let suite_start = Instant::now();
    let mut first = BTreeMap::new();
    let mut etr_seconds = f64::NAN;
    for cfg in default_suite() {
        let t = Instant::now();
        let report = run_experiment(&cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.id));
        if cfg.id == "etr-identity" {
            etr_seconds = t.elapsed().as_secs_f64();
        }
        first.insert(cfg.id.clone(), report);
    }
    let first_seconds = suite_start.elapsed().as_secs_f64();
    let r = |id: &str| &first[id];

    let mut outcomes = Vec::new();

    outcomes.push(from_reports(
        &[r("etr-identity")],
        Some((etr_seconds < 5.0, format!("runtime {etr_seconds:.2} s (limit 5 s)"))),
    ));
    outcomes.push(from_reports(&[r("detpow-identity")], None));
    let haar = r("haar-two-arg");
    outcomes.push(from_reports(
        &[haar],
        Some((true, format!("z = {:.3}", stat(haar, "z_score")))),
    ));
    outcomes.push(from_reports(&[r("gamma-integral-scalar"), r("gamma-recurrence")], None));
    outcomes.push(from_reports(&[r("vec-kron")], None));
    outcomes.push(from_reports(&[r("density-vs-mvn")], None));
    outcomes.push(from_reports(&[r("pd-almost-surely")], None));
    outcomes.push(from_reports(&[r("q-invariance")], None));
    let mgf = r("mgf-mc");
    outcomes.push(from_reports(
        &[mgf],
        Some((
            true,
            format!(
                "z(formula) = {:.1}, z(exact Gaussian MGF) = {:.2}, Γ=0 factor spread = {:.3}",
                stat(mgf, "z_formula"),
                stat(mgf, "z_gaussian"),
                stat(mgf, "factor_rel_spread")
            ),
        )),
    ));
    let roots = r("roots-gof");
    outcomes.push(from_reports(
        &[roots],
        Some((
            true,
            format!(
                "chi2 = {:.1} < {:.1}",
                stat(roots, "chi2_statistic"),
                stat(roots, "chi2_critical")
            ),
        )),
    ));
    let w = r("wishart1928-crosscheck");
    let documented = w.notes.iter().any(|n| n.contains("−8Ff"));
    outcomes.push(from_reports(
        &[w],
        Some((
            stat(w, "calibrated_max_rel_err") <= w.tolerances["rel_tol"] || documented,
            format!(
                "calibrated err = {:.3e}, term documented = {documented}",
                stat(w, "calibrated_max_rel_err")
            ),
        )),
    ));

    // second run, same seeds
    let t = Instant::now();
    let mut differing = Vec::new();
    for cfg in default_suite() {
        let again = run_experiment(&cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.id));
        if again.statistic_bits() != first[&cfg.id].statistic_bits() || again.pass != first[&cfg.id].pass {
            differing.push(cfg.id.clone());
        }
    }
    let second_seconds = t.elapsed().as_secs_f64();
    let self_contained = first.values().all(|r| r.recompute_pass() == r.pass);
    let deterministic = differing.is_empty();
    let fast = first_seconds.max(second_seconds) < 600.0;
    outcomes.push(Outcome {
        pass: deterministic && fast && self_contained,
        detail: format!(
            "{} experiments, bitwise identical = {deterministic}{}, runs {first_seconds:.1} s and {second_seconds:.1} s \
             on {} threads, pass flags recomputable = {self_contained}",
            first.len(),
            if deterministic { String::new() } else { format!(" (differ: {})", differing.join(", ")) },
            rayon::current_num_threads()
        ),
    });

    // a changed seed must change Monte Carlo statistics
    let mut reseeded = default_config("haar-two-arg").expect("registered");
    reseeded.seed += 1;
    let other = run_experiment(&reseeded).expect("runs");
    assert_ne!(stat(&other, "mc_mean").to_bits(), stat(haar, "mc_mean").to_bits());

    let mut failures = 0;
    for (i, o) in outcomes.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failures += usize::from(!o.pass);
        println!("{tag} criterion {:>2}: {}", i + 1, o.detail);
    }
    println!("{} of {} criteria pass", outcomes.len() - failures, outcomes.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
