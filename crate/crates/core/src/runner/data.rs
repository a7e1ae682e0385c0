use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::config::DataOptions;
use crate::error::{Error, Result};
use crate::models::Dataset;

/// Column handling fitted on one file and reusable on another.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTransform {
    /// Indices (among feature columns) that survive constant-column removal.
    pub keep: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub intercept: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset<f64>,
    /// Names of the design columns, intercept first when present.
    pub columns: Vec<String>,
    pub dropped: Vec<String>,
    pub transform: ColumnTransform,
}

struct Raw {
    names: Vec<String>,
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

fn parse_raw(text: &str, options: &DataOptions) -> Result<Raw> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        rows.push((line, rec));
    }
    let Some((_, first)) = rows.first() else {
        return Err(Error::Parse { line: 1, msg: "file is empty".into() });
    };
    let width = first.len();
    if width < 2 {
        return Err(Error::Parse { line: 1, msg: "need at least one feature and a label column".into() });
    }
    let label_col = options.label_column.unwrap_or(width - 1);
    if label_col >= width {
        return Err(Error::Parse { line: 1, msg: format!("label column {label_col} out of range for {width} columns") });
    }
    let has_header = options
        .header
        .unwrap_or_else(|| first.iter().any(|cell| cell.trim().parse::<f64>().is_err()));
    let names: Vec<String> = if has_header {
        first.iter().enumerate().filter(|(j, _)| *j != label_col).map(|(_, c)| c.trim().to_string()).collect()
    } else {
        (0..width).filter(|&j| j != label_col).map(|j| format!("x{}", j + 1)).collect()
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut saw_minus_one = false;
    for (line, rec) in rows.iter().skip(usize::from(has_header)) {
        let line = *line;
        if rec.len() != width {
            return Err(Error::Parse { line, msg: format!("expected {width} fields, found {}", rec.len()) });
        }
        let mut row = Vec::with_capacity(width - 1);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("non-numeric value '{}' in column {}", cell.trim(), j + 1) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value in column {}", j + 1) });
            }
            if j == label_col {
                let y = match v {
                    v if v == 0.0 || v == 1.0 => v,
                    -1.0 => {
                        saw_minus_one = true;
                        0.0
                    }
                    other => return Err(Error::Parse { line, msg: format!("unknown label {other}; expected 0/1 or -1/+1") }),
                };
                labels.push(y);
            } else {
                row.push(v);
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no data rows".into() });
    }
    if saw_minus_one {
        log::warn!("labels in {{-1, +1}} mapped to {{0, 1}}");
    }
    Ok(Raw { names, features, labels })
}

fn fit_transform(raw: &Raw, options: &DataOptions) -> (ColumnTransform, Vec<String>) {
    let n = raw.features.len() as f64;
    let width = raw.names.len();
    let mut keep = Vec::new();
    let (mut mean, mut scale, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..width {
        let col = raw.features.iter().map(|r| r[j]);
        let mu = col.clone().sum::<f64>() / n;
        let var = col.map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mu.abs().max(1.0)) {
            log::warn!("dropping constant column '{}'", raw.names[j]);
            dropped.push(raw.names[j].clone());
            continue;
        }
        keep.push(j);
        if options.standardize {
            mean.push(mu);
            scale.push(sd);
        } else {
            mean.push(0.0);
            scale.push(1.0);
        }
    }
    (ColumnTransform { keep, mean, scale, intercept: options.intercept }, dropped)
}

fn apply(raw: &Raw, tr: &ColumnTransform) -> Result<LoadedData> {
    let offset = usize::from(tr.intercept);
    let cols = tr.keep.len() + offset;
    let x = DMatrix::from_fn(raw.features.len(), cols, |i, c| {
        if c < offset {
            1.0
        } else {
            let k = c - offset;
            (raw.features[i][tr.keep[k]] - tr.mean[k]) / tr.scale[k]
        }
    });
    let mut columns = Vec::with_capacity(cols);
    if tr.intercept {
        columns.push("(intercept)".to_string());
    }
    columns.extend(tr.keep.iter().map(|&j| raw.names[j].clone()));
    let dropped = (0..raw.names.len()).filter(|j| !tr.keep.contains(j)).map(|j| raw.names[j].clone()).collect();
    let dataset = Dataset::new(x, DVector::from_vec(raw.labels.clone()))?;
    Ok(LoadedData { dataset, columns, dropped, transform: tr.clone() })
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    Ok(text)
}

/// Reads a numeric CSV with a 0/1 (or -1/+1) label column.
///
/// Constant feature columns are dropped with a warning, the remaining ones
/// are standardized when `options.standardize` is set, and an unscaled
/// intercept column is prepended when `options.intercept` is set.
pub fn load_csv(path: impl AsRef<Path>, options: &DataOptions) -> Result<LoadedData> {
    parse_csv_str(&read_text(path.as_ref())?, options)
}

/// As [`load_csv`], but reusing the column selection and scaling of `reference`.
pub fn load_csv_like(path: impl AsRef<Path>, options: &DataOptions, reference: &ColumnTransform) -> Result<LoadedData> {
    let raw = parse_raw(&read_text(path.as_ref())?, options)?;
    let expected = reference.keep.iter().max().map_or(0, |&k| k + 1);
    if raw.names.len() < expected {
        return Err(Error::dim(format!("file has {} feature columns, reference needs {expected}", raw.names.len())));
    }
    apply(&raw, reference)
}

/// [`load_csv`] on in-memory text.
pub fn parse_csv_str(text: &str, options: &DataOptions) -> Result<LoadedData> {
    let raw = parse_raw(text, options)?;
    let (tr, _) = fit_transform(&raw, options);
    apply(&raw, &tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_opts() -> DataOptions {
        DataOptions { standardize: false, intercept: false, ..DataOptions::default() }
    }

    #[test]
    fn toy_file_parses_exactly() {
        let got = parse_csv_str("1.5,2,1\n-3,4.25,0\n0,8,1\n", &raw_opts()).unwrap();
        let want = DMatrix::from_row_slice(3, 2, &[1.5, 2.0, -3.0, 4.25, 0.0, 8.0]);
        assert_eq!(got.dataset.x(), &want);
        assert_eq!(got.dataset.y().as_slice(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn header_detected_and_named() {
        let got = parse_csv_str("a,b,y\n1,2,1\n3,5,0\n", &DataOptions::default()).unwrap();
        assert_eq!(got.columns, vec!["(intercept)", "a", "b"]);
        let x = got.dataset.x();
        assert_eq!(x.column(0).as_slice(), &[1.0, 1.0]);
        assert!((x[(0, 1)] + 1.0).abs() < 1e-15 && (x[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_dropped() {
        let got = parse_csv_str("1,7,2,1\n2,7,3,0\n4,7,1,1\n", &DataOptions::default()).unwrap();
        assert_eq!(got.dataset.m(), 3);
        assert_eq!(got.dropped, vec!["x2"]);
    }

    #[test]
    fn standardized_columns_have_unit_scale() {
        let got = parse_csv_str("1,10,1\n2,20,0\n3,60,1\n4,10,0\n", &DataOptions::default()).unwrap();
        let x = got.dataset.x();
        for j in 1..3 {
            let col = x.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-14 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn minus_one_labels_map_to_zero() {
        let got = parse_csv_str("1,-1\n2,1\n", &raw_opts()).unwrap();
        assert_eq!(got.dataset.y().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_csv_str("1,2,1\n3,4\n", &raw_opts()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv_str("a,b,y\n1,2,1\n3,oops,0\n", &raw_opts()) {
            Err(Error::Parse { line: 3, msg }) => assert!(msg.contains("oops")),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv_str("1,2,1\n3,4,2\n", &raw_opts()) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_column_option() {
        let opts = DataOptions { label_column: Some(0), ..raw_opts() };
        let got = parse_csv_str("1,5,6\n0,7,8\n", &opts).unwrap();
        assert_eq!(got.dataset.y().as_slice(), &[1.0, 0.0]);
        assert_eq!(got.dataset.x(), &DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]));
    }
}
