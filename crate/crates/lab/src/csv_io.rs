//! Tabular dataset files: comma-separated, header row required, decimal point.

use std::fs::File;
use std::path::Path;

use cplab_core::data::{Dataset, Provenance};

use crate::error::{LabError, Result};

/// Reads `path` into a dataset. `features` selects and orders the feature
/// columns; when `None`, every column except `target` is used in file order.
pub fn load_csv(path: &Path, target: &str, features: Option<&[String]>) -> Result<Dataset> {
    if !path.is_file() {
        return Err(LabError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| LabError::csv(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_owned(),
            })
    };
    let target_col = find(target)?;
    let feature_cols: Vec<usize> = match features {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&c| c != target_col).collect(),
    };
    if feature_cols.is_empty() {
        return Err(LabError::Malformed {
            path: path.to_path_buf(),
            message: "no feature columns".into(),
        });
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LabError::csv(path, e))?;
        let row = i + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LabError::NonNumeric {
                    path: path.to_path_buf(),
                    row,
                    column: header[c].clone(),
                    value: raw.to_owned(),
                })
        };
        for &c in &feature_cols {
            xs.push(cell(c)?);
        }
        ys.push(cell(target_col)?);
    }
    if ys.is_empty() {
        return Err(LabError::Malformed {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    Ok(Dataset::new(xs, ys, feature_cols.len())?
        .with_names(names, target.to_owned())
        .with_provenance(Provenance::External(path.display().to_string())))
}

/// Writes features then target, with a header row.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::csv(path, e))?;
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    w.write_record(&header).map_err(|e| LabError::csv(path, e))?;
    for (x, y) in ds.rows().zip(ds.targets()) {
        let rec = x.iter().chain(std::iter::once(y)).map(f64::to_string);
        w.write_record(rec).map_err(|e| LabError::csv(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}
