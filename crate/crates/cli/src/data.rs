//! Delimited-text input and output.

use std::path::Path;

use llngm::sparse::SparseMatrix;
use nalgebra::DMatrix;

use crate::config::DataConfig;
use crate::error::CliError;

/// Numeric table with a header row; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
    source: String,
}

impl Table {
    pub fn read(path: &Path, na: &str) -> Result<Self, CliError> {
        let mut reader =
            csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::schema(path, e))?;
        let headers: Vec<String> =
            reader.headers().map_err(|e| CliError::schema(path, e))?.iter().map(String::from).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::schema(path, e))?;
            for (j, field) in record.iter().enumerate() {
                let value = if field == na || field.is_empty() {
                    None
                } else {
                    Some(field.parse::<f64>().map_err(|_| {
                        CliError::schema(
                            path,
                            format!("row {}: `{field}` in column `{}` is not a number", line + 1, headers[j]),
                        )
                    })?)
                };
                columns[j].push(value);
            }
        }
        Ok(Table { headers, columns, source: path.display().to_string() })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>], CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| CliError::schema(&self.source, format!("missing column `{name}`")))
    }
}

/// Rows of a data or target file that have every needed value.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub index: Vec<usize>,
    pub x: DMatrix<f64>,
    pub y: Option<Vec<f64>>,
    /// Row numbers (0-based) in the source file that were kept.
    pub rows: Vec<usize>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Observation matrix with one unit entry per row.
    pub fn design(&self, n_latent: usize) -> SparseMatrix {
        SparseMatrix::from_triplets(self.len(), n_latent, self.index.iter().enumerate().map(|(i, &j)| (i, j, 1.0)))
    }
}

/// Reads the columns named in `cfg`. Rows missing the index, a covariate
/// or (when `with_response`) the response are dropped.
pub fn load_observations(
    path: &Path,
    cfg: &DataConfig,
    n_latent: usize,
    with_response: bool,
) -> Result<Observations, CliError> {
    let table = Table::read(path, &cfg.na)?;
    let index = table.column(&cfg.index)?;
    let response = if with_response { Some(table.column(&cfg.response)?) } else { None };
    let covariates = cfg.covariates.iter().map(|c| table.column(c)).collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for r in 0..table.n_rows() {
        let complete =
            index[r].is_some() && response.is_none_or(|y| y[r].is_some()) && covariates.iter().all(|c| c[r].is_some());
        if complete {
            rows.push(r);
        }
    }
    let idx = rows
        .iter()
        .map(|&r| {
            let v = index[r].unwrap_or_default();
            if v < 0.0 || v.fract() != 0.0 || v >= n_latent as f64 {
                Err(CliError::schema(path, format!("row {}: index {v} is not a latent node in 0..{n_latent}", r + 1)))
            } else {
                Ok(v as usize)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let p = cfg.n_fixed();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| {
        let c = if cfg.intercept { j.checked_sub(1) } else { Some(j) };
        c.map_or(1.0, |c| covariates[c][rows[i]].unwrap_or_default())
    });
    let y = response.map(|col| rows.iter().map(|&r| col[r].unwrap_or_default()).collect());
    Ok(Observations { index: idx, x, y, rows })
}

/// Writes a CSV file with the given header.
pub fn write_csv<I>(path: &Path, headers: &[String], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    w.write_record(headers).map_err(|e| CliError::io(path, e.into()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}
