//! CSV ingestion and export of datasets.
//!
//! Files are tabular with one sample per row and a header row. Internally
//! the design matrix is feature-major (`N x M`), so reading transposes: the
//! non-target columns become the rows of `X`. Lines starting with `#` are
//! comments and are skipped.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Means removed by [`center`], for mapping predictions back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub feature_means: Vec<f64>,
    pub target_mean: f64,
}

/// Subtracts per-feature means and the response mean.
pub fn center(dataset: &Dataset) -> (Dataset, Centering) {
    let x = dataset.x();
    let feature_means: Vec<f64> = x.row_iter().map(|r| r.mean()).collect();
    let target_mean = dataset.y().mean();
    let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, mu| x[(i, mu)] - feature_means[i]);
    let yc = dataset.y().map(|v| v - target_mean);
    let centered = Dataset::new(xc, yc).expect("centering preserves shape and finiteness");
    (
        centered,
        Centering {
            feature_means,
            target_mean,
        },
    )
}

/// Feature names and data read from a CSV table.
#[derive(Clone, Debug)]
pub struct Table {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
    pub centering: Option<Centering>,
}

pub fn load_csv(path: impl AsRef<Path>, target_column: &str, center_data: bool) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    read_csv(file, target_column, center_data)
}

pub fn read_csv<R: Read>(reader: R, target_column: &str, center_data: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let target = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingTarget(target_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, h)| h.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "no feature columns".into(),
        });
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                row,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let mut features = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row,
                column: j + 1,
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumericCell {
                    row,
                    column: j + 1,
                    value: cell.to_string(),
                });
            }
            if j == target {
                y.push(value);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 2,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let dataset = Dataset::from_sample_rows(&rows, y)?;
    let (dataset, centering) = if center_data {
        let (d, c) = center(&dataset);
        (d, Some(c))
    } else {
        (dataset, None)
    };
    Ok(Table {
        dataset,
        feature_names,
        centering,
    })
}

/// Default feature names `x1..xN`.
pub fn default_feature_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Writes one row per sample: features in order, then the target column.
/// Values use Rust's shortest round-trip formatting, so reading the file back
/// reproduces every entry bit for bit.
pub fn write_dataset_csv<W: Write>(
    writer: W,
    dataset: &Dataset,
    feature_names: &[String],
    target_name: &str,
    comments: &[String],
) -> Result<()> {
    if feature_names.len() != dataset.n_features() {
        return Err(Error::DimensionMismatch("feature name count".into()));
    }
    let mut w = writer;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.push(target_name);
    out.write_record(&header)?;
    let x = dataset.x();
    for mu in 0..dataset.n_samples() {
        let mut rec: Vec<String> = x.column(mu).iter().map(|v| v.to_string()).collect();
        rec.push(dataset.y()[mu].to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Convenience wrapper building a dataset from sample-major values.
pub fn dataset_from_columns(columns: &[Vec<f64>], y: Vec<f64>) -> Result<Dataset> {
    let m = y.len();
    let n = columns.len();
    let x = DMatrix::from_fn(n, m, |i, mu| columns[i][mu]);
    Dataset::new(x, DVector::from_vec(y))
}
