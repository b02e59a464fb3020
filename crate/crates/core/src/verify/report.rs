use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
}

impl Cmp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Le => a <= b,
            Cmp::Lt => a < b,
            Cmp::Ge => a >= b,
            Cmp::Gt => a > b,
            Cmp::Eq => a == b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Lt => "<",
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Eq => "==",
        }
    }
}

/// Right-hand side of a comparison: a literal, or the name of a statistic or
/// tolerance (statistics are looked up first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Value(f64),
    Name(String),
}

impl From<f64> for Operand {
    fn from(v: f64) -> Self {
        Operand::Value(v)
    }
}

impl From<&str> for Operand {
    fn from(v: &str) -> Self {
        Operand::Name(v.to_string())
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(v) => write!(f, "{v}"),
            Operand::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    Compare { lhs: String, cmp: Cmp, rhs: Operand },
    Any { of: Vec<Check> },
    All { of: Vec<Check> },
}

impl Check {
    pub fn compare(lhs: &str, cmp: Cmp, rhs: impl Into<Operand>) -> Self {
        Check::Compare {
            lhs: lhs.to_string(),
            cmp,
            rhs: rhs.into(),
        }
    }

    pub fn le(lhs: &str, rhs: impl Into<Operand>) -> Self {
        Self::compare(lhs, Cmp::Le, rhs)
    }

    pub fn eq(lhs: &str, rhs: impl Into<Operand>) -> Self {
        Self::compare(lhs, Cmp::Eq, rhs)
    }

    pub fn holds(&self, stats: &BTreeMap<String, f64>, tols: &BTreeMap<String, f64>) -> bool {
        let resolve = |o: &Operand| match o {
            Operand::Value(v) => Some(*v),
            Operand::Name(n) => stats.get(n).or_else(|| tols.get(n)).copied(),
        };
        match self {
            Check::Compare { lhs, cmp, rhs } => match (stats.get(lhs), resolve(rhs)) {
                (Some(&a), Some(b)) => cmp.holds(a, b),
                _ => false,
            },
            Check::Any { of } => of.iter().any(|c| c.holds(stats, tols)),
            Check::All { of } => of.iter().all(|c| c.holds(stats, tols)),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, of: &[Check], sep: &str| -> fmt::Result {
            f.write_str("(")?;
            for (i, c) in of.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")
        };
        match self {
            Check::Compare { lhs, cmp, rhs } => write!(f, "{lhs} {} {rhs}", cmp.symbol()),
            Check::Any { of } => join(f, of, " or "),
            Check::All { of } => join(f, of, " and "),
        }
    }
}

/// Plot-ready rows written as CSV next to the report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Statistics may be non-finite (a diverging formula is a finding, not an
/// error); JSON has no such numbers, so they are stored as strings.
mod stat_map {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let out: BTreeMap<&String, Num> = m
            .iter()
            .map(|(k, &v)| {
                let n = if v.is_finite() { Num::F(v) } else { Num::S(format!("{v}")) };
                (k, n)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, f64>, D::Error> {
        let raw = BTreeMap::<String, Num>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, n)| match n {
                Num::F(v) => Ok((k, v)),
                Num::S(s) => s.parse::<f64>().map(|v| (k, v)).map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: String,
    pub description: String,
    pub seed: u64,
    /// False when the seed was drawn fresh rather than taken from a config.
    pub certifying: bool,
    pub inputs: Value,
    pub tolerances: BTreeMap<String, f64>,
    #[serde(with = "stat_map")]
    pub statistics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub notes: Vec<String>,
    pub wall_seconds: f64,
    #[serde(skip)]
    pub table: Option<Table>,
}

impl ExperimentReport {
    /// `pass` from the stored statistics and tolerances alone.
    pub fn recompute_pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.holds(&self.statistics, &self.tolerances))
    }

    /// Checks that do not hold.
    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks
            .iter()
            .filter(|c| !c.holds(&self.statistics, &self.tolerances))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `<dir>/<id>.json` and, when a table was collected,
    /// `<dir>/<id>.csv`. Returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.id));
        std::fs::write(&json, self.to_json()? + "\n")?;
        let mut written = vec![json];
        if let Some(t) = &self.table {
            let csv = dir.join(format!("{}.csv", self.id));
            let f = std::io::BufWriter::new(std::fs::File::create(&csv)?);
            t.write_csv(f)?;
            written.push(csv);
        }
        Ok(written)
    }

    /// Statistics as raw bits, for bitwise reproducibility checks.
    pub fn statistic_bits(&self) -> BTreeMap<String, u64> {
        self.statistics.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()
    }
}
