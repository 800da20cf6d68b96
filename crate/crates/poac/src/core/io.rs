use std::path::Path;

use crate::{Error, Result};

use super::{Dataset, Matrix};

/// Formats a float for CSV output. Finite values use the shortest
/// representation that parses back to the identical bits; NaN is spelled
/// "nan" so downstream readers agree on one token.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Reads a dataset from CSV: header row, numeric cells, optional trailing
/// integer column named exactly "label". The dataset id is the file stem.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_error)?;

    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Err(Error::ParseError {
            row: 1,
            column: 1,
            message: "empty header row".to_string(),
        });
    }
    let has_labels = headers.iter().last() == Some("label");
    let p = if has_labels {
        headers.len() - 1
    } else {
        headers.len()
    };
    if p == 0 {
        return Err(Error::ParseError {
            row: 1,
            column: 1,
            message: "no feature columns".to_string(),
        });
    }

    let mut data: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut n = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2; // 1-based, header is row 1
        let record = record.map_err(csv_error)?;
        if record.len() != headers.len() {
            return Err(Error::ParseError {
                row,
                column: record.len().min(headers.len()),
                message: format!(
                    "expected {} fields, found {} (missing values unsupported)",
                    headers.len(),
                    record.len()
                ),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let column = c + 1;
            if field.trim().is_empty() {
                return Err(Error::ParseError {
                    row,
                    column,
                    message: "missing value".to_string(),
                });
            }
            if has_labels && c == p {
                let l: usize = field.trim().parse().map_err(|_| Error::ParseError {
                    row,
                    column,
                    message: format!("label {field:?} is not a non-negative integer"),
                })?;
                labels.push(l);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| Error::ParseError {
                    row,
                    column,
                    message: format!("{field:?} is not a number"),
                })?;
                data.push(v);
            }
        }
        n += 1;
    }

    let features = Matrix::from_flat(n, p, data)?;
    Dataset::new(id, features, has_labels.then_some(labels))
}

/// Writes a dataset as CSV with header f0..f{p-1} plus a trailing "label"
/// column when labels are present. Values round-trip through load_csv
/// exactly.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    let p = dataset.p();
    let mut header: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
    if dataset.labels().is_some() {
        header.push("label".to_string());
    }
    writer.write_record(&header).map_err(csv_error)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..dataset.n() {
        record.clear();
        for &v in dataset.features().row(i) {
            record.push(fmt_float(v));
        }
        if let Some(labels) = dataset.labels() {
            record.push(labels[i].to_string());
        }
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::IoError(io),
        other => Error::ParseError {
            row: 0,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}
