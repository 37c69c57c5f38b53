//! Binary-labelled datasets and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use log::{info, warn};

use crate::error::{Error, Result};

/// Dense feature matrix (row-major) with labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<i8>,
    n_features: usize,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Every row must have the same width,
    /// hold no NaN, and every label must be `-1` or `+1`.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<i8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let n_features = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::Data(format!(
                    "row {i} has {} features, expected {n_features}",
                    row.len()
                )));
            }
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::Data(format!("row {i} has a missing value")));
            }
            features.extend(row);
        }
        Self::from_flat(features, labels, n_features)
    }

    pub fn from_flat(features: Vec<f64>, labels: Vec<i8>, n_features: usize) -> Result<Self> {
        if features.len() != labels.len() * n_features {
            return Err(Error::Data("feature matrix shape does not match labels".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::Data(format!("label {bad} is not -1 or +1")));
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        debug_assert_eq!(names.len(), self.n_features);
        self.feature_names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    #[inline]
    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            labels,
            n_features: self.n_features,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Which column holds the label, and which label value maps to `+1`.
#[derive(Debug, Clone, Default)]
pub struct LabelSpec {
    /// Column name; the last column when `None`.
    pub column: Option<String>,
    /// Label value mapped to `+1`; the first value seen in file order when
    /// `None`.
    pub positive: Option<String>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// Reads a comma-separated file with a header row.
///
/// Rows with an empty or `?` cell are dropped. Columns whose every kept value
/// parses as a number are numeric; all others are integer-encoded by order of
/// first appearance.
pub fn load_dataset(path: impl AsRef<Path>, spec: &LabelSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least one feature column and a label column",
            path.display()
        )));
    }
    let label_col = match &spec.column {
        Some(name) => header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("{}: no column named {name:?}", path.display()))
        })?,
        None => header.len() - 1,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "{}: line {} has {} fields, header has {}",
                path.display(),
                record.position().map_or(0, |p| p.line()),
                record.len(),
                header.len()
            )));
        }
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no complete rows", path.display())));
    }

    // Labels.
    let mut distinct: Vec<&str> = Vec::new();
    for row in &rows {
        let v = row[label_col].as_str();
        if !distinct.contains(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() != 2 {
        return Err(Error::Data(format!(
            "{}: label column {:?} must be binary, found {} distinct labels: {:?}",
            path.display(),
            header[label_col],
            distinct.len(),
            distinct
        )));
    }
    let positive = match &spec.positive {
        Some(p) if distinct.contains(&p.as_str()) => p.clone(),
        Some(p) => {
            return Err(Error::Data(format!(
                "{}: positive label {p:?} not among labels {distinct:?}",
                path.display()
            )))
        }
        None => distinct[0].to_owned(),
    };
    let labels: Vec<i8> = rows
        .iter()
        .map(|r| if r[label_col] == positive { 1 } else { -1 })
        .collect();

    // Features: numeric where possible, otherwise first-appearance codes.
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_col).collect();
    let n_features = feature_cols.len();
    let mut features = vec![0.0; rows.len() * n_features];
    for (j, &c) in feature_cols.iter().enumerate() {
        let parsed: Option<Vec<f64>> = rows
            .iter()
            .map(|r| r[c].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) => {
                for (i, v) in values.into_iter().enumerate() {
                    features[i * n_features + j] = v;
                }
            }
            None => {
                let mut codes: HashMap<&str, f64> = HashMap::new();
                for (i, r) in rows.iter().enumerate() {
                    let next = codes.len() as f64;
                    let code = *codes.entry(r[c].as_str()).or_insert(next);
                    features[i * n_features + j] = code;
                }
            }
        }
    }
    info!(
        "{}: {} rows, {} features, positive label {positive:?}",
        path.display(),
        rows.len(),
        n_features
    );
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    Ok(Dataset::from_flat(features, labels, n_features)?.with_feature_names(names))
}
