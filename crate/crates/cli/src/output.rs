use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// JSON cannot hold non-finite numbers; they are written as strings.
pub fn number(v: f64) -> Value {
    if v.is_finite() {
        Value::from(v)
    } else {
        Value::String(v.to_string())
    }
}

fn sink(out: Option<&Path>) -> matgamma::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn csv_field(v: &Value) -> String {
    let s = match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Rows of named columns, written as a JSON array of objects or as CSV.
pub struct Records {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Records {
    pub fn new(columns: &[&str]) -> Self {
        Records {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        let row = row
            .into_iter()
            .map(|v| match v.as_f64() {
                Some(x) if v.is_f64() => number(x),
                _ => v,
            })
            .collect();
        self.rows.push(row);
    }

    pub fn write(&self, format: Format, out: Option<&Path>) -> matgamma::Result<()> {
        let mut w = sink(out)?;
        match format {
            Format::Json => {
                let objs: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let m: Map<String, Value> = self.columns.iter().cloned().zip(r.iter().cloned()).collect();
                        Value::Object(m)
                    })
                    .collect();
                serde_json::to_writer_pretty(&mut w, &objs)?;
                writeln!(w)?;
            }
            Format::Csv => {
                writeln!(w, "{}", self.columns.join(","))?;
                for r in &self.rows {
                    let line: Vec<String> = r.iter().map(csv_field).collect();
                    writeln!(w, "{}", line.join(","))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Matrices of a common shape. CSV: a `# shape n x k` header, then one
/// matrix per line in row-major order.
pub fn write_matrices(mats: &[DMatrix<f64>], format: Format, out: Option<&Path>) -> matgamma::Result<()> {
    let (n, k) = mats.first().map(|m| m.shape()).unwrap_or((0, 0));
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
    let mut w = sink(out)?;
    match format {
        Format::Json => {
            let v = serde_json::json!({
                "shape": [n, k],
                "matrices": mats.iter().map(row_major).collect::<Vec<_>>(),
            });
            serde_json::to_writer_pretty(&mut w, &v)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "# shape {n} x {k}")?;
            for m in mats {
                let line: Vec<String> = row_major(m).iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
