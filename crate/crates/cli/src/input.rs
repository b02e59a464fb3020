use std::path::Path;

use matgamma::{Error, ModelSpec, Result, SymMatrix};
use nalgebra::DMatrix;

/// Comma- or whitespace-separated numbers.
pub fn numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("`{t}` is not a number")))
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Non-empty, non-comment lines of a CSV file, parsed as numbers.
pub fn csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(numbers)
        .collect()
}

/// A matrix stored as CSV, one row per line.
pub fn matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let rows = csv_rows(path)?;
    matgamma::linalg::matrix_from_rows(&rows)
}

/// Either a CSV matrix file or an inline list of eigenvalues (diagonal).
pub fn sym_arg(arg: &str) -> Result<SymMatrix> {
    let path = Path::new(arg);
    if path.exists() {
        SymMatrix::new(matrix_csv(path)?)
    } else {
        Ok(SymMatrix::from_diagonal(&numbers(arg)?))
    }
}

pub fn model(path: &Path) -> Result<ModelSpec> {
    ModelSpec::from_json(&read(path)?)
}

/// Points file: each line one `k×k` matrix, row-major.
pub fn square_points(path: &Path, k: usize) -> Result<Vec<DMatrix<f64>>> {
    csv_rows(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != k * k {
                return Err(Error::InvalidParameter(format!(
                    "point {} has {} entries, expected {} for a {k}x{k} matrix",
                    i + 1,
                    row.len(),
                    k * k
                )));
            }
            Ok(DMatrix::from_row_slice(k, k, &row))
        })
        .collect()
}

pub fn config_file(path: &Path) -> Result<Vec<matgamma::ExperimentConfig>> {
    matgamma::ExperimentConfig::list_from_json(&read(path)?)
}
