//! Strict numeric CSV ingestion and export.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DataBlock;

/// Numeric columns read from a CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub n: usize,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|c| c == name).map(|i| self.columns[i].as_slice())
    }

    /// Splits off `response` (if given) and keeps the rest as covariates.
    pub fn into_data(self, response: Option<&str>) -> Result<DataBlock> {
        let n = self.n;
        let mut y = None;
        let mut cols = Vec::with_capacity(self.names.len());
        for (name, col) in self.names.into_iter().zip(self.columns) {
            if Some(name.as_str()) == response {
                y = Some(col);
            } else {
                cols.push((name, col));
            }
        }
        match (response, y) {
            (Some(r), None) => Err(Error::config(format!("response column '{r}' is missing"))),
            (_, Some(y)) => DataBlock::new(y, cols),
            (None, None) => DataBlock::covariates(n, cols),
        }
    }
}

/// Parses a CSV table. Every cell must be a number; lines starting with `#` are
/// skipped. `source` names the input in errors.
pub fn read_table_from<R: Read>(input: R, source: &str) -> Result<Table> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::config(format!("{source}: cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::config(format!("{source}: file is empty")));
    }
    if let Some(i) = names.iter().position(String::is_empty) {
        return Err(Error::config(format!("{source}: column {} has an empty name", i + 1)));
    }
    let mut columns = vec![Vec::new(); names.len()];
    let mut n = 0;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::config(format!("{source}: row {row}: {e}")))?;
        if rec.len() != names.len() {
            return Err(Error::config(format!(
                "{source}: row {row} has {} fields, expected {}",
                rec.len(),
                names.len()
            )));
        }
        for ((cell, col), name) in rec.iter().zip(columns.iter_mut()).zip(&names) {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::config(format!("{source}: row {row}, column '{name}': '{cell}' is not a finite number"))
            })?;
            col.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::config(format!("{source}: no data rows")));
    }
    Ok(Table { names, columns, n })
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::config(format!("cannot open '{}': {e}", path.display())))?;
    read_table_from(file, &path.display().to_string())
}

/// Reads a data file; `response` names the response column, if any.
pub fn read_csv(path: &Path, response: Option<&str>) -> Result<DataBlock> {
    read_table(path)?.into_data(response)
}

/// Writes the response (as `response_name`) followed by every covariate at full precision.
pub fn write_data_csv<W: Write>(out: W, data: &DataBlock, response_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![response_name.to_string()];
    header.extend(data.column_names().iter().cloned());
    w.write_record(&header)?;
    let cols: Vec<&[f64]> = data.column_names().iter().map(|n| data.column(n).expect("listed column")).collect();
    for i in 0..data.n() {
        let mut row = vec![data.raw_response()[i].to_string()];
        row.extend(cols.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
