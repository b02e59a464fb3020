//! Deterministic experiment registry: closed-form identities, oracle
//! equivalences and Monte Carlo goodness-of-fit checks, each producing a
//! self-contained JSON report whose pass flag can be recomputed from the
//! stored statistics and tolerances.

mod experiments;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::models::ModelSpec;

pub use report::{Check, Cmp, ExperimentReport, Operand, Table};

/// One experiment run: id, mandatory seed, parameter and tolerance overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Directory the report (and optional CSV) is written to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Collect raw draws / plot data into the report's table.
    #[serde(default)]
    pub dump: bool,
}

impl ExperimentConfig {
    pub fn new(id: &str, seed: u64) -> Self {
        ExperimentConfig {
            id: id.to_string(),
            seed,
            params: Map::new(),
            tolerances: BTreeMap::new(),
            output: None,
            dump: false,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn with_tolerance(mut self, key: &str, value: f64) -> Self {
        self.tolerances.insert(key.to_string(), value);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Accepts a single config object or an array of them.
    pub fn list_from_json(text: &str) -> Result<Vec<Self>> {
        let v: Value = serde_json::from_str(text)?;
        match v {
            Value::Array(items) => items
                .into_iter()
                .map(|i| serde_json::from_value(i).map_err(Error::from))
                .collect(),
            other => Ok(vec![serde_json::from_value(other)?]),
        }
    }
}

/// Parameters after merging a config over an experiment's defaults.
#[derive(Clone, Debug)]
pub(crate) struct Params {
    map: Map<String, Value>,
}

impl Params {
    fn get(&self, key: &str) -> Result<&Value> {
        self.map
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing parameter `{key}`")))
    }

    pub(crate) fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Config(format!("parameter `{key}` must be a non-negative integer")))
    }

    pub(crate) fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| Error::Config(format!("parameter `{key}` must be a number")))
    }

    pub(crate) fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let err = || Error::Config(format!("parameter `{key}` must be an array of numbers"));
        self.get(key)?
            .as_array()
            .ok_or_else(err)?
            .iter()
            .map(|v| v.as_f64().ok_or_else(err))
            .collect()
    }

    pub(crate) fn pairs(&self, key: &str) -> Result<Vec<(usize, usize)>> {
        let err = || Error::Config(format!("parameter `{key}` must be an array of [n, k] pairs"));
        self.get(key)?
            .as_array()
            .ok_or_else(err)?
            .iter()
            .map(|p| match p.as_array().map(Vec::as_slice) {
                Some([a, b]) => Ok((
                    a.as_u64().ok_or_else(err)? as usize,
                    b.as_u64().ok_or_else(err)? as usize,
                )),
                _ => Err(err()),
            })
            .collect()
    }

    /// Optional model file; `null` means "generate one from the seed".
    pub(crate) fn model(&self, key: &str) -> Result<Option<ModelSpec>> {
        match self.get(key)? {
            Value::Null => Ok(None),
            Value::String(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read model file `{path}`: {e}")))?;
                Ok(Some(ModelSpec::from_json(&text)?))
            }
            _ => Err(Error::Config(format!("parameter `{key}` must be a path or null"))),
        }
    }
}

/// Static description of a registered experiment.
pub(crate) struct Experiment {
    pub id: &'static str,
    pub description: &'static str,
    pub default_seed: u64,
    /// Tolerance overridden by a global `--tol`.
    pub primary_tolerance: &'static str,
    pub defaults: fn() -> (Value, BTreeMap<String, f64>),
    pub run: fn(&mut Run) -> Result<()>,
}

/// Mutable state handed to an experiment body.
pub(crate) struct Run {
    pub seed: u64,
    pub params: Params,
    pub tolerances: BTreeMap<String, f64>,
    pub dump: bool,
    pub statistics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub table: Option<Table>,
}

impl Run {
    pub(crate) fn stat(&mut self, name: impl Into<String>, value: f64) {
        self.statistics.insert(name.into(), value);
    }

    pub(crate) fn tol(&self, name: &str) -> f64 {
        self.tolerances[name]
    }

    pub(crate) fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub(crate) fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }
}

/// `(id, description)` of every registered experiment, in suite order.
pub fn experiment_registry() -> Vec<(&'static str, &'static str)> {
    experiments::REGISTRY.iter().map(|e| (e.id, e.description)).collect()
}

fn lookup(id: &str) -> Result<&'static Experiment> {
    experiments::REGISTRY
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::UnknownExperiment(id.to_string()))
}

/// The bundled configuration of an experiment (its default seed, default
/// parameters and tolerances).
pub fn default_config(id: &str) -> Result<ExperimentConfig> {
    let exp = lookup(id)?;
    let (params, tolerances) = (exp.defaults)();
    let Value::Object(params) = params else {
        unreachable!("experiment defaults are objects")
    };
    Ok(ExperimentConfig {
        id: id.to_string(),
        seed: exp.default_seed,
        params,
        tolerances,
        output: None,
        dump: false,
    })
}

/// Default configs of the whole registry.
pub fn default_suite() -> Vec<ExperimentConfig> {
    experiments::REGISTRY
        .iter()
        .map(|e| default_config(e.id).expect("registered id"))
        .collect()
}

/// Name of the tolerance a global `--tol` overrides for this experiment.
pub fn primary_tolerance(id: &str) -> Result<&'static str> {
    Ok(lookup(id)?.primary_tolerance)
}

/// Merges `cfg` over the experiment defaults, rejecting unknown keys and
/// non-positive tolerances.
fn resolve(exp: &Experiment, cfg: &ExperimentConfig) -> Result<(Params, BTreeMap<String, f64>)> {
    let (defaults, mut tolerances) = (exp.defaults)();
    let Value::Object(mut params) = defaults else {
        unreachable!("experiment defaults are objects")
    };
    for (k, v) in &cfg.params {
        if !params.contains_key(k) {
            return Err(Error::Config(format!(
                "experiment `{}` has no parameter `{k}` (known: {})",
                exp.id,
                params.keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        params.insert(k.clone(), v.clone());
    }
    for (k, &v) in &cfg.tolerances {
        if !tolerances.contains_key(k) {
            return Err(Error::Config(format!(
                "experiment `{}` has no tolerance `{k}` (known: {})",
                exp.id,
                tolerances.keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        tolerances.insert(k.clone(), v);
    }
    if let Some((k, v)) = tolerances.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Config(format!("tolerance `{k}` must be positive and finite, got {v}")));
    }
    Ok((Params { map: params }, tolerances))
}

/// Runs one experiment. The report's `pass` is the conjunction of its
/// checks, evaluated on the stored statistics and tolerances.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let exp = lookup(&cfg.id)?;
    let (params, tolerances) = resolve(exp, cfg)?;
    let inputs = Value::Object(params.map.clone());
    let mut run = Run {
        seed: cfg.seed,
        params,
        tolerances,
        dump: cfg.dump,
        statistics: BTreeMap::new(),
        checks: Vec::new(),
        notes: Vec::new(),
        table: None,
    };
    let start = Instant::now();
    (exp.run)(&mut run)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    // checks resolve names against statistics first; a shared name would
    // silently compare a statistic with itself
    if let Some(k) = run.tolerances.keys().find(|k| run.statistics.contains_key(*k)) {
        return Err(Error::Config(format!("`{k}` names both a statistic and a tolerance")));
    }
    let mut report = ExperimentReport {
        id: exp.id.to_string(),
        description: exp.description.to_string(),
        seed: cfg.seed,
        certifying: true,
        inputs,
        tolerances: run.tolerances,
        statistics: run.statistics,
        checks: run.checks,
        pass: false,
        notes: run.notes,
        wall_seconds,
        table: run.table,
    };
    report.pass = report.recompute_pass();
    Ok(report)
}
