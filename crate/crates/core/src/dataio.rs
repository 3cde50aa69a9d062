//! Dataset container, CSV ingestion, and the perturbations the experiments
//! apply to training data (label flipping, biased filtering, splits).

use std::collections::HashMap;
use std::fmt::Display;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names plus the vocabularies of ordinal-encoded columns, so that
/// a second file (e.g. a test set) is encoded the same way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub feature_names: Vec<String>,
    /// `Some(vocab)` for columns that were ordinal-encoded; code = position.
    pub categories: Vec<Option<Vec<String>>>,
    pub label_name: String,
    #[serde(default)]
    pub label_categories: Option<Vec<String>>,
}

impl Schema {
    pub fn numeric(n_features: usize) -> Self {
        Schema {
            feature_names: (0..n_features).map(|f| format!("f{f}")).collect(),
            categories: vec![None; n_features],
            label_name: "label".to_string(),
            label_categories: None,
        }
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

/// Row-major feature matrix with labels, per-sample weights and stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<f64>,
    weights: Vec<f64>,
    ids: Vec<u64>,
    schema: Schema,
}

impl Dataset {
    /// Builds a dataset from rows; ids are the row positions, weights default to 1.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} features, expected {n_features}",
                    row.len()
                )));
            }
            features.extend_from_slice(row);
        }
        Self::from_flat(features, n_features, labels, weights)
    }

    pub fn from_flat(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = labels.len();
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        let ids = (0..n as u64).collect();
        Self::from_parts(features, n_features, labels, weights, ids, Schema::numeric(n_features))
    }

    pub fn from_parts(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<f64>,
        weights: Vec<f64>,
        ids: Vec<u64>,
        schema: Schema,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if features.len() != n * n_features {
            return Err(Error::InvalidData(format!(
                "feature matrix has {} values, expected {n} x {n_features}",
                features.len()
            )));
        }
        if weights.len() != n || ids.len() != n {
            return Err(Error::InvalidData(
                "labels, weights and ids must have equal length".into(),
            ));
        }
        if schema.feature_names.len() != n_features {
            return Err(Error::InvalidData("schema does not match feature count".into()));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature {} of row {}",
                pos % n_features.max(1),
                pos / n_features.max(1)
            )));
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("label of row {i}")));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidData(format!(
                "weight of row {i} must be finite and non-negative, got {}",
                weights[i]
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if !ids.iter().all(|id| seen.insert(*id)) {
            return Err(Error::InvalidData("row ids must be unique".into()));
        }
        Ok(Dataset {
            features,
            n_features,
            labels,
            weights,
            ids,
            schema,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, i: usize, f: usize) -> f64 {
        self.features[i * self.n_features + f]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn with_schema(mut self, schema: Schema) -> Result<Self> {
        if schema.feature_names.len() != self.n_features {
            return Err(Error::InvalidData("schema does not match feature count".into()));
        }
        self.schema = schema;
        Ok(self)
    }

    /// Position of the row carrying `id`.
    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            schema: self.schema.clone(),
        }
    }

    /// The dataset without row `index`; fails if nothing would remain.
    pub fn without(&self, index: usize) -> Result<Dataset> {
        self.check_index(index)?;
        if self.n_rows() == 1 {
            return Err(Error::InvalidData("removing the only row leaves no data".into()));
        }
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&i| i != index).collect();
        Ok(self.select(&keep))
    }

    /// Same rows with a list of rows removed (order preserved).
    pub fn without_many(&self, remove: &[usize]) -> Result<Dataset> {
        let mut drop = vec![false; self.n_rows()];
        for &i in remove {
            self.check_index(i)?;
            drop[i] = true;
        }
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&i| !drop[i]).collect();
        if keep.is_empty() {
            return Err(Error::InvalidData("removal leaves no data".into()));
        }
        Ok(self.select(&keep))
    }

    pub fn with_weight(&self, index: usize, weight: f64) -> Result<Dataset> {
        self.check_index(index)?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "weight must be finite and non-negative, got {weight}"
            )));
        }
        let mut out = self.clone();
        out.weights[index] = weight;
        Ok(out)
    }

    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Dataset> {
        Dataset::from_parts(
            self.features.clone(),
            self.n_features,
            labels,
            self.weights.clone(),
            self.ids.clone(),
            self.schema.clone(),
        )
    }

    pub(crate) fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.n_rows() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.n_rows(),
            });
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&y| y == 0.0 || y == 1.0)
    }

    fn require_binary(&self) -> Result<()> {
        match self.labels.iter().position(|&y| y != 0.0 && y != 1.0) {
            Some(i) => Err(Error::NonBinaryLabel(self.labels[i], i)),
            None => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Reads a comma-separated file with a mandatory header row.
///
/// Columns whose cells all parse as numbers are kept as-is; any other
/// column (label included) is ordinal-encoded by first appearance. A
/// missing weight column means unit weights.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, weight_column: Option<&str>) -> Result<Dataset> {
    load_csv_impl(path.as_ref(), label_column, weight_column, None)
}

/// Like [`load_csv`], but encodes columns with an existing schema (for
/// test files). Unseen categories map to the vocabulary size.
pub fn load_csv_with_schema(
    path: impl AsRef<Path>,
    weight_column: Option<&str>,
    schema: &Schema,
) -> Result<Dataset> {
    load_csv_impl(path.as_ref(), &schema.label_name, weight_column, Some(schema))
}

enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<f64>, Vec<String>),
}

fn encode_column(
    name: &str,
    cells: &[&str],
    vocab: Option<&Option<Vec<String>>>,
) -> Result<Column> {
    let force_categorical = matches!(vocab, Some(Some(_)));
    if !force_categorical {
        let mut values = Vec::with_capacity(cells.len());
        let mut numeric = true;
        for (row, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::BadCell {
                    row: row + 1,
                    column: name.to_string(),
                    message: "empty cell".into(),
                });
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(v) => {
                    return Err(Error::BadCell {
                        row: row + 1,
                        column: name.to_string(),
                        message: format!("non-finite value {v}"),
                    })
                }
                Err(_) => {
                    numeric = false;
                    break;
                }
            }
        }
        if numeric {
            return Ok(Column::Numeric(values));
        }
        if matches!(vocab, Some(None)) {
            return Err(Error::BadCell {
                row: values.len() + 1,
                column: name.to_string(),
                message: format!("expected a number, got `{}`", cells[values.len()]),
            });
        }
    }
    let mut vocab: Vec<String> = match vocab {
        Some(Some(v)) => v.clone(),
        _ => Vec::new(),
    };
    let frozen = force_categorical;
    let mut lookup: HashMap<String, usize> =
        vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let unseen = vocab.len();
    let mut codes = Vec::with_capacity(cells.len());
    for cell in cells {
        let code = match lookup.get(*cell) {
            Some(&c) => c,
            None if frozen => unseen,
            None => {
                let c = vocab.len();
                vocab.push(cell.to_string());
                lookup.insert(cell.to_string(), c);
                c
            }
        };
        codes.push(code as f64);
    }
    Ok(Column::Categorical(codes, vocab))
}

fn load_csv_impl(
    path: &Path,
    label_column: &str,
    weight_column: Option<&str>,
    schema: Option<&Schema>,
) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::InvalidData(format!("{}: no data rows", path.display())));
    }

    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_idx = find(label_column)?;
    let weight_idx = weight_column.map(find).transpose()?;

    let feature_cols: Vec<usize> = match schema {
        Some(s) => s
            .feature_names
            .iter()
            .map(|n| find(n))
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| c != label_idx && Some(c) != weight_idx)
            .collect(),
    };

    let cells_of = |c: usize| -> Vec<&str> { records.iter().map(|r| r.get(c).unwrap_or("")).collect() };

    let label_vocab = schema.map(|s| s.label_categories.clone());
    let (labels, label_categories) = match encode_column(label_column, &cells_of(label_idx), label_vocab.as_ref())? {
        Column::Numeric(v) => (v, None),
        Column::Categorical(v, vocab) => (v, Some(vocab)),
    };
    let weights = match weight_idx {
        Some(c) => match encode_column(&headers[c], &cells_of(c), Some(&None))? {
            Column::Numeric(v) => {
                if let Some(i) = v.iter().position(|w| *w < 0.0) {
                    return Err(Error::BadCell {
                        row: i + 1,
                        column: headers[c].clone(),
                        message: "negative weight".into(),
                    });
                }
                v
            }
            Column::Categorical(..) => unreachable!("weights are parsed as numbers"),
        },
        None => vec![1.0; records.len()],
    };

    let n = records.len();
    let d = feature_cols.len();
    let mut features = vec![0.0; n * d];
    let mut categories = Vec::with_capacity(d);
    for (f, &c) in feature_cols.iter().enumerate() {
        let vocab = schema.map(|s| &s.categories[f]);
        let values = match encode_column(&headers[c], &cells_of(c), vocab)? {
            Column::Numeric(v) => {
                categories.push(None);
                v
            }
            Column::Categorical(v, vocab) => {
                categories.push(Some(vocab));
                v
            }
        };
        for (i, v) in values.into_iter().enumerate() {
            features[i * d + f] = v;
        }
    }

    let out_schema = Schema {
        feature_names: feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        categories: match schema {
            Some(s) => s.categories.clone(),
            None => categories,
        },
        label_name: label_column.to_string(),
        label_categories: match schema {
            Some(s) => s.label_categories.clone(),
            None => label_categories,
        },
    };
    let ids = (0..n as u64).collect();
    Dataset::from_parts(features, d, labels, weights, ids, out_schema)
}

/// Writes a dataset back to CSV (features, label, optional weight column).
pub fn write_csv(path: impl AsRef<Path>, ds: &Dataset, weight_column: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = ds.schema.feature_names.clone();
    header.push(ds.schema.label_name.clone());
    if let Some(wc) = weight_column {
        header.push(wc.to_string());
    }
    w.write_record(&header)?;
    for i in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", ds.labels[i]));
        if weight_column.is_some() {
            rec.push(format!("{:?}", ds.weights[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One-column CSV used for experiment bookkeeping (flip masks, kept ids).
pub fn write_column_csv<T: Display>(path: impl AsRef<Path>, name: &str, values: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::with_capacity(values.len() * 4 + name.len() + 1);
    body.push_str(name);
    body.push('\n');
    for v in values {
        body.push_str(&v.to_string());
        body.push('\n');
    }
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

/// Flips exactly `round(fraction * n)` distinct, uniformly chosen binary labels.
pub fn flip_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParam(format!("flip fraction {fraction} not in [0, 1]")));
    }
    ds.require_binary()?;
    let n = ds.n_rows();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in sample(&mut rng, n, k) {
        mask[i] = true;
    }
    Ok((apply_flip(ds, &mask)?, mask))
}

/// Replaces `y` by `1 - y` wherever `mask` is set.
pub fn apply_flip(ds: &Dataset, mask: &[bool]) -> Result<Dataset> {
    ds.require_binary()?;
    if mask.len() != ds.n_rows() {
        return Err(Error::Dimension {
            expected: ds.n_rows(),
            actual: mask.len(),
        });
    }
    let labels = ds
        .labels
        .iter()
        .zip(mask)
        .map(|(&y, &m)| if m { 1.0 - y } else { y })
        .collect();
    let mut out = ds.clone();
    out.labels = labels;
    Ok(out)
}

/// Rows with `low <= x[column] < high` and, if set, the given label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangePredicate {
    pub column: String,
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub label: Option<f64>,
}

impl RangePredicate {
    pub fn resolve(&self, schema: &Schema) -> Result<usize> {
        schema.column_index(&self.column)
    }

    pub fn in_range(&self, value: f64) -> bool {
        value >= self.low && value < self.high
    }

    pub fn matches(&self, ds: &Dataset, column: usize, row: usize) -> bool {
        self.in_range(ds.value(row, column)) && self.label.is_none_or(|y| ds.labels[row] == y)
    }
}

/// Keeps each row matching `predicate` with probability `keep_fraction`;
/// other rows are always kept. Order and ids are preserved.
pub fn filter_bias(
    ds: &Dataset,
    predicate: &RangePredicate,
    keep_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::InvalidParam(format!("keep fraction {keep_fraction} not in [0, 1]")));
    }
    let column = predicate.resolve(&ds.schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| !predicate.matches(ds, column, i) || rng.random::<f64>() < keep_fraction)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidData("bias filter removed every row".into()));
    }
    Ok(ds.select(&keep))
}

/// Deterministic split; both parts keep the original row order.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParam(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = ds.n_rows();
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return Err(Error::InvalidData("need at least two rows to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; n];
    for i in sample(&mut rng, n, n_test) {
        is_test[i] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
    let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((ds.select(&train), ds.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn small(labels: Vec<f64>) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        Dataset::from_rows(&rows, labels, None).unwrap()
    }

    #[test]
    fn default_weights_are_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n1,0\n2,1\n3,0\n");
        let ds = load_csv(&p, "y", None).unwrap();
        assert_eq!(ds.weights(), &[1.0, 1.0, 1.0]);
        assert_eq!(ds.n_features(), 1);
        assert_eq!(ds.labels(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn weight_column_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,w,y\n1,2,0\n2,1,1\n");
        let ds = load_csv(&p, "y", Some("w")).unwrap();
        assert_eq!(ds.weights(), &[2.0, 1.0]);
        assert_eq!(ds.n_features(), 1);
    }

    #[test]
    fn strings_are_ordinal_encoded() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "c,y\na,0\nb,1\na,0\n");
        let ds = load_csv(&p, "y", None).unwrap();
        assert_eq!((0..3).map(|i| ds.value(i, 0)).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
        assert_eq!(ds.schema().categories[0], Some(vec!["a".into(), "b".into()]));

        // a test file reuses the vocabulary
        let q = write(&dir, "b.csv", "c,y\nb,1\nz,0\n");
        let test = load_csv_with_schema(&q, None, ds.schema()).unwrap();
        assert_eq!(test.value(0, 0), 1.0);
        assert_eq!(test.value(1, 0), 2.0);
    }

    #[test]
    fn load_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_csv(dir.path().join("nope.csv"), "y", None),
            Err(Error::Io { .. })
        ));
        let p = write(&dir, "a.csv", "x,y\n1,0\n");
        assert!(matches!(load_csv(&p, "label", None), Err(Error::MissingColumn(c)) if c == "label"));
        let p = write(&dir, "b.csv", "x,y\n1,0\ninf,1\n");
        match load_csv(&p, "y", None) {
            Err(Error::BadCell { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "x")),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(&dir, "c.csv", "x,w,y\n1,-1,0\n");
        assert!(load_csv(&p, "y", Some("w")).is_err());
    }

    #[test]
    fn flip_zero_and_full() {
        let ds = small(vec![0.0, 1.0, 0.0]);
        let (same, mask) = flip_labels(&ds, 0.0, 1).unwrap();
        assert_eq!(same, ds);
        assert!(mask.iter().all(|m| !m));
        let (all, mask) = flip_labels(&ds, 1.0, 1).unwrap();
        assert_eq!(all.labels(), &[1.0, 0.0, 1.0]);
        assert!(mask.iter().all(|m| *m));
    }

    #[test]
    fn flip_is_deterministic() {
        let ds = small(vec![0.0, 1.0, 0.0, 1.0]);
        let (_, a) = flip_labels(&ds, 0.5, 42).unwrap();
        let (_, b) = flip_labels(&ds, 0.5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|m| **m).count(), 2);
    }

    #[test]
    fn flip_rejects_non_binary() {
        let ds = small(vec![0.0, 2.0]);
        assert!(matches!(flip_labels(&ds, 0.5, 0), Err(Error::NonBinaryLabel(..))));
    }

    #[test]
    fn filter_bias_limits() {
        let labels = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let ds = small(labels);
        let pred = RangePredicate {
            column: "f0".into(),
            low: 0.0,
            high: 100.0,
            label: Some(1.0),
        };
        assert_eq!(filter_bias(&ds, &pred, 1.0, 3).unwrap(), ds);
        let out = filter_bias(&ds, &pred, 0.0, 3).unwrap();
        assert_eq!(out.n_rows(), 5);
        assert!(out.labels().iter().all(|&y| y == 0.0));
        assert_eq!(out.ids(), &[1, 3, 5, 7, 9]);

        let bad = RangePredicate {
            column: "age".into(),
            ..pred
        };
        assert!(matches!(filter_bias(&ds, &bad, 0.5, 3), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn split_preserves_rows() {
        let ds = small((0..10).map(|i| (i % 2) as f64).collect());
        let (tr, te) = train_test_split(&ds, 0.3, 5).unwrap();
        assert_eq!((tr.n_rows(), te.n_rows()), (7, 3));
        let mut ids: Vec<u64> = tr.ids().iter().chain(te.ids()).copied().collect();
        ids.sort();
        assert_eq!(ids, (0..10).collect::<Vec<u64>>());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_rows(&[vec![0.1, 2.0], vec![1.0 / 3.0, -4.0]], vec![1.0, 0.0], Some(vec![0.5, 2.0])).unwrap();
        let p = dir.path().join("rt.csv");
        write_csv(&p, &ds, Some("w")).unwrap();
        let back = load_csv(&p, "label", Some("w")).unwrap();
        assert_eq!(back, ds);
    }

    fn binary_dataset() -> impl Strategy<Value = (Dataset, u64)> {
        (prop::collection::vec((any::<bool>(), 0.0f64..5.0, -3.0f64..3.0), 1..40), any::<u64>()).prop_map(|(rows, seed)| {
            let labels = rows.iter().map(|r| f64::from(r.0 as u8)).collect();
            let weights = rows.iter().map(|r| r.1).collect();
            let feats: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.2]).collect();
            (Dataset::from_rows(&feats, labels, Some(weights)).unwrap(), seed)
        })
    }

    proptest! {
        #[test]
        fn double_flip_restores((ds, seed) in binary_dataset(), fraction in 0.0f64..=1.0) {
            let (flipped, mask) = flip_labels(&ds, fraction, seed).unwrap();
            prop_assert_eq!(apply_flip(&flipped, &mask).unwrap(), ds);
        }

        #[test]
        fn filter_keeps_rows_intact((ds, seed) in binary_dataset(), keep in 0.0f64..=1.0) {
            let pred = RangePredicate { column: "f0".into(), low: -1.0, high: 1.0, label: None };
            let Ok(out) = filter_bias(&ds, &pred, keep, seed) else { return Ok(()) };
            for (k, id) in out.ids().iter().enumerate() {
                let i = ds.position_of(*id).unwrap();
                prop_assert_eq!(out.row(k), ds.row(i));
                prop_assert_eq!(out.weights()[k], ds.weights()[i]);
                prop_assert_eq!(out.labels()[k], ds.labels()[i]);
            }
            prop_assert!(out.ids().windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(filter_bias(&ds, &pred, keep, seed).unwrap(), out);
        }
    }
}
