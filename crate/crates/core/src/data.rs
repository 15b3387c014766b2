//! CSV ingestion and semi-supervised splits for tabular classification data.
//!
//! Expected layout: comma-separated numeric feature columns plus one label
//! column (by default the last). A header row is optional and detected by a
//! non-numeric feature cell in the first record. The UCI Spambase file
//! (`spambase.data`, 4601 rows, 57 features, label last as 0/1) loads with the
//! defaults and `positive_label = "1"`.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{ensure, DressError, Result};
use crate::model::LabeledData;
use crate::rng::stream;

pub const SPAMBASE_PROVENANCE: &str = "UCI Machine Learning Repository, Spambase \
(https://archive.ics.uci.edu/dataset/94/spambase): download spambase.data \
(4601 rows, 57 numeric features, label 1 = spam in the last column)";

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    /// `n_total × d`, unstandardized.
    pub features: DMatrix<f64>,
    /// 0/1 labels.
    pub labels: DVector<f64>,
    pub feature_names: Vec<String>,
    /// Rows dropped because of empty fields.
    pub rejected_rows: usize,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Which column holds the label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

fn ingest(path: &Path, line: usize, column: Option<String>, message: impl Into<String>) -> DressError {
    DressError::Ingest {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn label_matches(value: &str, positive: &str) -> bool {
    if value == positive {
        return true;
    }
    matches!((value.parse::<f64>(), positive.parse::<f64>()), (Ok(a), Ok(b)) if a == b)
}

pub fn load_csv(path: &Path, label_column: &LabelColumn, positive_label: &str) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => DressError::Ingest {
                path: path.to_path_buf(),
                line: 0,
                column: None,
                message: io.to_string(),
            },
            other => ingest(path, 0, None, format!("{other:?}")),
        })?;

    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(i + 1);
            ingest(path, line, None, e.to_string())
        })?;
        // skip blank lines
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        records.push((line, rec));
    }
    let Some((_, first)) = records.first() else {
        return Err(ingest(path, 0, None, "file contains no records"));
    };
    let width = first.len();
    ensure!(width >= 2, "{}: need at least one feature column and a label column", path.display());
    let label_idx = match label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => first
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ingest(path, 1, Some(name.clone()), "label column not found in header"))?,
    };
    ensure!(label_idx < width, "label column {label_idx} out of range for {width} columns");

    let has_header = matches!(label_column, LabelColumn::Name(_))
        || first
            .iter()
            .enumerate()
            .any(|(j, f)| j != label_idx && !f.is_empty() && f.parse::<f64>().is_err());
    let feature_names: Vec<String> = (0..width)
        .filter(|&j| j != label_idx)
        .map(|j| if has_header { first[j].to_string() } else { format!("x{}", j + 1) })
        .collect();
    let body = if has_header { &records[1..] } else { &records[..] };

    let d = width - 1;
    let mut values = Vec::with_capacity(body.len() * d);
    let mut raw_labels = Vec::with_capacity(body.len());
    let mut rejected_rows = 0;
    for (line, rec) in body {
        if rec.len() != width {
            return Err(ingest(path, *line, None, format!("expected {width} fields, found {}", rec.len())));
        }
        if rec.iter().any(|f| f.is_empty() || f == "?" || f.eq_ignore_ascii_case("na")) {
            rejected_rows += 1;
            continue;
        }
        for (j, f) in rec.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = f.parse().map_err(|_| {
                let col = feature_names[if j < label_idx { j } else { j - 1 }].clone();
                ingest(path, *line, Some(col), format!("non-numeric value '{f}'"))
            })?;
            if !v.is_finite() {
                return Err(ingest(path, *line, Some(format!("{}", j + 1)), "non-finite value"));
            }
            values.push(v);
        }
        raw_labels.push((*line, rec[label_idx].to_string()));
    }
    ensure!(!raw_labels.is_empty(), "{}: no complete rows", path.display());

    let mut seen = BTreeSet::new();
    for (line, l) in &raw_labels {
        seen.insert(l.as_str());
        if seen.len() > 2 {
            return Err(ingest(path, *line, None, format!("third distinct label value '{l}'; expected a binary label")));
        }
    }
    let labels = DVector::from_iterator(
        raw_labels.len(),
        raw_labels.iter().map(|(_, l)| if label_matches(l, positive_label) { 1.0 } else { 0.0 }),
    );
    Ok(TabularDataset {
        features: DMatrix::from_row_slice(raw_labels.len(), d, &values),
        labels,
        feature_names,
        rejected_rows,
    })
}

/// Column means and standard deviations used to standardize covariates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population sd; constant columns get 1.
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for c in x.column_iter() {
            let m = c.sum() / n;
            let s = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            mean.push(m);
            sd.push(if s > 0.0 { s } else { 1.0 });
        }
        Standardization { mean, sd }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.sd[j])
    }
}

#[derive(Debug, Clone)]
pub struct SslSplit {
    pub labeled: LabeledData,
    pub unlabeled_x: DMatrix<f64>,
    pub test: LabeledData,
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub standardization: Standardization,
}

fn take_rows(x: &DMatrix<f64>, rows: &[usize], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| x[(rows[i], j)])
}

/// Random labeled / unlabeled / test partition on the first `dims` features.
/// Standardization is fit on the labeled and unlabeled covariates together.
pub fn split_ssl(ds: &TabularDataset, n: usize, nprime: usize, dims: usize, seed: u64) -> Result<SslSplit> {
    ensure!(n >= 1 && nprime >= 1, "n and nprime must be at least 1");
    ensure!(
        n + nprime <= ds.len(),
        "n + nprime = {} exceeds the {} available rows",
        n + nprime,
        ds.len()
    );
    ensure!(dims >= 1 && dims <= ds.dim(), "D = {dims} must lie in 1..={}", ds.dim());

    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut stream(seed, 0));
    let labeled_indices = order[..n].to_vec();
    let unlabeled_indices = order[n..n + nprime].to_vec();
    let test_indices = order[n + nprime..].to_vec();

    let train: Vec<usize> = order[..n + nprime].to_vec();
    let standardization = Standardization::fit(&take_rows(&ds.features, &train, dims));
    let subset = |rows: &[usize]| standardization.apply(&take_rows(&ds.features, rows, dims));
    let labels = |rows: &[usize]| DVector::from_iterator(rows.len(), rows.iter().map(|&i| ds.labels[i]));

    Ok(SslSplit {
        labeled: LabeledData::new(subset(&labeled_indices), labels(&labeled_indices))?,
        unlabeled_x: subset(&unlabeled_indices),
        test: LabeledData::new(subset(&test_indices), labels(&test_indices))?,
        labeled_indices,
        unlabeled_indices,
        test_indices,
        standardization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn toy(rows: usize, d: usize) -> TabularDataset {
        TabularDataset {
            features: DMatrix::from_fn(rows, d, |i, j| (i * (j + 1)) as f64 + (i % 3) as f64),
            labels: DVector::from_fn(rows, |i, _| (i % 2) as f64),
            feature_names: (0..d).map(|j| format!("x{j}")).collect(),
            rejected_rows: 0,
        }
    }

    #[test]
    fn headerless_numeric_file() {
        let f = write("1,2,0\n3,4,1\n5,6,1\n");
        let ds = load_csv(f.path(), &LabelColumn::Last, "1").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels.as_slice(), &[0.0, 1.0, 1.0]);
        assert_eq!(ds.features[(2, 1)], 6.0);
    }

    #[test]
    fn header_and_named_labels() {
        let f = write("a,b,class\n1,2,ham\n3,4,spam\n");
        let ds = load_csv(f.path(), &LabelColumn::Name("class".into()), "spam").unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.labels.as_slice(), &[0.0, 1.0]);
        let ds = load_csv(f.path(), &LabelColumn::Last, "spam").unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let f = write("a,b,y\n1,2,0\n3,oops,1\n");
        match load_csv(f.path(), &LabelColumn::Last, "1") {
            Err(DressError::Ingest { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column.as_deref(), Some("b"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_fields_are_counted() {
        let f = write("1,2,0\n,4,1\n5,6,1\n");
        let ds = load_csv(f.path(), &LabelColumn::Last, "1").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.rejected_rows, 1);
    }

    #[test]
    fn more_than_two_labels_rejected() {
        let f = write("1,0\n2,1\n3,2\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::Last, "1"),
            Err(DressError::Ingest { .. })
        ));
    }

    #[test]
    fn missing_file_is_ingest_error() {
        let err = load_csv(Path::new("/nonexistent/spambase.data"), &LabelColumn::Last, "1").unwrap_err();
        assert!(matches!(err, DressError::Ingest { .. }));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = toy(4601, 5);
        let s = split_ssl(&ds, 200, 100, 3, 11).unwrap();
        assert_eq!(s.test.len(), 4301);
        assert_eq!(s.labeled.covariate_dim(), 3);
        let mut all: Vec<usize> = s
            .labeled_indices
            .iter()
            .chain(&s.unlabeled_indices)
            .chain(&s.test_indices)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 4601);
        let again = split_ssl(&ds, 200, 100, 3, 11).unwrap();
        assert_eq!(s.labeled_indices, again.labeled_indices);
        assert_eq!(s.unlabeled_indices, again.unlabeled_indices);
    }

    #[test]
    fn training_covariates_are_standardized() {
        let ds = toy(300, 4);
        let s = split_ssl(&ds, 50, 100, 4, 3).unwrap();
        let train = DMatrix::from_fn(150, 4, |i, j| if i < 50 { s.labeled.x[(i, j)] } else { s.unlabeled_x[(i - 50, j)] });
        for c in train.column_iter() {
            let m = c.sum() / 150.0;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 150.0;
            assert!(m.abs() < 1e-10);
            assert!((v.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bad_split_requests() {
        let ds = toy(100, 3);
        assert!(matches!(split_ssl(&ds, 80, 30, 3, 0), Err(DressError::Contract(_))));
        assert!(matches!(split_ssl(&ds, 10, 10, 4, 0), Err(DressError::Contract(_))));
    }
}
