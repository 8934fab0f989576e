//! CSV ingestion, min-max scaling, one-hot encoding and fold splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Cell contents treated as missing.
pub const MISSING_TOKENS: [&str; 3] = ["", "?", "NA"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Min-max scaled numeric column with its original range.
    Numeric { min: f64, max: f64 },
    /// Indicator column for one value of a categorical source column.
    OneHot { source: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn numeric(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self { name: name.into(), kind: FeatureKind::Numeric { min, max } }
    }

    /// Maps an original-unit value to the scaled [0, 1] domain.
    pub fn scale(&self, v: f64) -> f64 {
        match self.kind {
            FeatureKind::Numeric { min, max } => (v - min) / (max - min),
            FeatureKind::OneHot { .. } => v,
        }
    }

    pub fn unscale(&self, v: f64) -> f64 {
        match self.kind {
            FeatureKind::Numeric { min, max } => min + v * (max - min),
            FeatureKind::OneHot { .. } => v,
        }
    }
}

/// Everything needed to encode new rows the same way as the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label: String,
    pub classes: Vec<String>,
    pub features: Vec<FeatureMeta>,
}

impl Schema {
    /// Per-feature scaler `(min, max)`; one-hot columns report `None`.
    pub fn scaler(&self) -> Vec<Option<(f64, f64)>> {
        self.features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Numeric { min, max } => Some((min, max)),
                FeatureKind::OneHot { .. } => None,
            })
            .collect()
    }
}

/// Scaled feature matrix (row-major) with dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Rows discarded during ingestion because of missing cells.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(schema: Schema, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let d = schema.features.len();
        if d == 0 {
            return Err(Error::Data("dataset has no feature columns".into()));
        }
        if features.len() != labels.len() * d {
            return Err(invalid(format!(
                "{} feature values do not form {} rows of {d}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= schema.classes.len()) {
            return Err(invalid(format!("label {bad} out of range for {} classes", schema.classes.len())));
        }
        Ok(Self { schema, features, labels, dropped_rows: 0 })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.classes.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    /// Row `i` in original units (numeric columns unscaled, one-hot as 0/1).
    pub fn raw_row(&self, i: usize) -> Vec<f64> {
        self.row(i)
            .iter()
            .zip(&self.schema.features)
            .map(|(&v, m)| m.unscale(v))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: self.schema.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dropped_rows: 0,
        }
    }

    /// Observed `[min, max]` of every scaled column.
    pub fn observed_ranges(&self) -> Vec<(f64, f64)> {
        let d = self.n_features();
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for i in 0..self.n_rows() {
            for (r, &v) in out.iter_mut().zip(self.row(i)) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        out
    }

    /// Writes the rows in original units with the label as the last column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.label);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.raw_row(i).iter().map(f64::to_string).collect();
            rec.push(self.schema.classes[self.labels[i]].clone());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell)
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    dropped: usize,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing cells", path.display());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no usable rows", path.display())));
    }
    Ok(RawTable { headers, rows, dropped })
}

fn column_index(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data(format!("unknown column {name:?}; available: {}", headers.join(", "))))
}

fn parse_numeric(cells: &[&str]) -> Option<Vec<f64>> {
    cells
        .iter()
        .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

/// Sorts distinct values numerically when they all parse, lexically otherwise.
fn sorted_values(cells: &[&str]) -> Vec<String> {
    let distinct: BTreeSet<&str> = cells.iter().copied().collect();
    let mut values: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    if let Some(nums) = parse_numeric(&values.iter().map(String::as_str).collect::<Vec<_>>()) {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        values = pairs.into_iter().map(|p| p.1).collect();
    }
    values
}

/// Loads a headered CSV, scales numeric columns to [0, 1] and one-hot encodes
/// the rest. Rows with a missing cell are dropped; constant columns are
/// dropped with a warning.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let label_idx = column_index(&table.headers, label_column)?;
    let column = |j: usize| -> Vec<&str> { table.rows.iter().map(|r| r[j].as_str()).collect() };

    let label_cells = column(label_idx);
    let classes = sorted_values(&label_cells);
    let class_of: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels: Vec<usize> = label_cells.iter().map(|c| class_of[c]).collect();
    if classes.len() < 2 {
        log::warn!("{}: label column {label_column:?} has a single class", path.display());
    }

    let n = table.rows.len();
    let mut metas = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (j, name) in table.headers.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let cells = column(j);
        if let Some(values) = parse_numeric(&cells) {
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(min < max) {
                log::warn!("dropping constant column {name:?}");
                continue;
            }
            let meta = FeatureMeta::numeric(name.clone(), min, max);
            columns.push(values.iter().map(|&v| meta.scale(v)).collect());
            metas.push(meta);
        } else {
            let values = sorted_values(&cells);
            if values.len() < 2 {
                log::warn!("dropping constant column {name:?}");
                continue;
            }
            for value in values {
                columns.push(cells.iter().map(|&c| if c == value { 1.0 } else { 0.0 }).collect());
                metas.push(FeatureMeta {
                    name: format!("{name}={value}"),
                    kind: FeatureKind::OneHot { source: name.clone(), value },
                });
            }
        }
    }
    let d = metas.len();
    let mut features = vec![0.0; n * d];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            features[i * d + j] = v;
        }
    }
    let schema = Schema { label: label_column.to_string(), classes, features: metas };
    let mut ds = Dataset::new(schema, features, labels)?;
    ds.dropped_rows = table.dropped;
    Ok(ds)
}

/// Encodes a CSV with an existing schema. The label column is optional; rows
/// without it get `None` labels. Category values unseen during training
/// encode as all zeros in their group.
pub fn load_csv_with_schema(path: impl AsRef<Path>, schema: &Schema) -> Result<(Vec<Vec<f64>>, Option<Vec<usize>>)> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let label_idx = table.headers.iter().position(|h| *h == schema.label);
    let mut sources: Vec<usize> = Vec::with_capacity(schema.features.len());
    for f in &schema.features {
        let col = match &f.kind {
            FeatureKind::Numeric { .. } => &f.name,
            FeatureKind::OneHot { source, .. } => source,
        };
        sources.push(column_index(&table.headers, col)?);
    }
    let mut rows = Vec::with_capacity(table.rows.len());
    for (r, record) in table.rows.iter().enumerate() {
        let mut row = Vec::with_capacity(schema.features.len());
        for (f, &j) in schema.features.iter().zip(&sources) {
            let cell = record[j].as_str();
            let v = match &f.kind {
                FeatureKind::Numeric { .. } => cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {}: column {:?} value {cell:?} is not numeric", r + 1, f.name))
                })?,
                FeatureKind::OneHot { value, .. } => f64::from(u8::from(cell == value)),
            };
            row.push(v);
        }
        rows.push(row);
    }
    let labels = match label_idx {
        None => None,
        Some(j) => {
            let mut out = Vec::with_capacity(table.rows.len());
            for (r, record) in table.rows.iter().enumerate() {
                let cell = &record[j];
                let y = schema.classes.iter().position(|c| c == cell).ok_or_else(|| {
                    Error::Data(format!("row {}: label {cell:?} was not seen during training", r + 1))
                })?;
                out.push(y);
            }
            Some(out)
        }
    };
    Ok((rows, labels))
}

/// Train/test index pairs for stratified k-fold cross validation.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Seeded shuffle followed by per-class round-robin assignment to folds.
pub fn stratified_kfold(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(invalid(format!("need at least 2 folds, got {folds}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut by_class = vec![Vec::new(); n_classes];
    for i in order {
        by_class[labels[i]].push(i);
    }
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0;
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < folds {
            return Err(Error::Data(format!(
                "class {c} has {} members, fewer than {folds} folds",
                members.len()
            )));
        }
        for &i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            (train, test)
        })
        .collect())
}

/// Seeded random split holding out `test_fraction` of the rows.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> Result<Fold> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(invalid(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn numeric_column_is_min_max_scaled() {
        let f = csv_file("a,y\n1,0\n2,1\n3,0\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.features, vec![0.0, 0.5, 1.0]);
        assert_eq!(ds.schema.scaler(), vec![Some((1.0, 3.0))]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
    }

    #[test]
    fn categorical_column_is_one_hot() {
        let f = csv_file("col,y\nb,x\na,y\nb,y\n");
        let ds = load_csv(f.path(), "y").unwrap();
        let names: Vec<_> = ds.schema.features.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["col=a", "col=b"]);
        assert_eq!(ds.features, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        for i in 0..ds.n_rows() {
            assert_eq!(ds.row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn rows_with_missing_cells_are_dropped() {
        let f = csv_file("a,b,y\n1,2,0\n,3,1\n4,?,1\n5,6,NA\n7,8,1\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.dropped_rows, 3);

        let one = csv_file("a,y\n1,0\n,1\n3,1\n");
        assert_eq!(load_csv(one.path(), "y").unwrap().dropped_rows, 1);
    }

    #[test]
    fn constant_columns_are_dropped() {
        let f = csv_file("a,c,k,y\n1,5,z,0\n2,5,z,1\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.n_features(), 1);
        assert_eq!(ds.schema.features[0].name, "a");
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let f = csv_file("a,y\n1,10\n2,9\n3,10\n");
        let ds = load_csv(f.path(), "y").unwrap();
        assert_eq!(ds.schema.classes, ["9", "10"]);
        assert_eq!(ds.labels, vec![1, 0, 1]);
    }

    #[test]
    fn descriptive_errors() {
        let f = csv_file("a,y\n1,0\n2,1\n");
        assert!(matches!(load_csv(f.path(), "nope"), Err(Error::Data(_))));
        let empty = csv_file("a,y\n,0\n");
        assert!(matches!(load_csv(empty.path(), "y"), Err(Error::Data(_))));
        assert!(matches!(load_csv("/nonexistent/file.csv", "y"), Err(Error::Io { .. })));
        let ragged = csv_file("a,y\n1,0,3\n");
        assert!(matches!(load_csv(ragged.path(), "y"), Err(Error::Csv(_))));
    }

    #[test]
    fn schema_encoding_matches_training_encoding() {
        let f = csv_file("x,c,y\n1,a,n\n3,b,p\n2,a,p\n");
        let ds = load_csv(f.path(), "y").unwrap();
        let (rows, labels) = load_csv_with_schema(f.path(), &ds.schema).unwrap();
        assert_eq!(labels.unwrap(), ds.labels);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row, &ds.raw_row(i));
        }
        let unlabeled = csv_file("c,x\nb,7\nz,0\n");
        let (rows, labels) = load_csv_with_schema(unlabeled.path(), &ds.schema).unwrap();
        assert!(labels.is_none());
        assert_eq!(rows, vec![vec![7.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]]);
    }

    #[test]
    fn balanced_folds_hold_one_of_each_class() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        for (train, test) in &folds {
            assert_eq!(test.len(), 2);
            assert_eq!(test.iter().map(|&i| labels[i]).sum::<usize>(), 1);
            assert_eq!(train.len() + test.len(), 10);
        }
    }

    #[test]
    fn too_small_class_is_rejected() {
        assert!(stratified_kfold(&[0, 0, 0, 0, 0, 1, 1], 3, 0).is_err());
        assert!(stratified_kfold(&[0, 1], 1, 0).is_err());
    }

    #[test]
    fn holdout_split_sizes() {
        let (train, test) = holdout_split(5000, 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (4000, 1000));
        assert_eq!(holdout_split(10, 0.2, 4).unwrap(), holdout_split(10, 0.2, 4).unwrap());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            labels in prop::collection::vec(0usize..3, 30..120),
            folds in 2usize..6,
            seed in 0u64..100
        ) {
            let mut counts = [0usize; 3];
            for &y in &labels { counts[y] += 1; }
            prop_assume!(counts.iter().all(|&c| c == 0 || c >= folds));
            let parts = stratified_kfold(&labels, folds, seed).unwrap();
            prop_assert_eq!(&parts, &stratified_kfold(&labels, folds, seed).unwrap());
            let mut seen = vec![0; labels.len()];
            for (train, test) in &parts {
                for &i in test { seen[i] += 1; }
                prop_assert_eq!(train.len() + test.len(), labels.len());
                for c in 0..3 {
                    let in_fold = test.iter().filter(|&&i| labels[i] == c).count() as f64;
                    let expected = counts[c] as f64 / folds as f64;
                    prop_assert!((in_fold - expected).abs() <= 1.0);
                }
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }

        #[test]
        fn unscale_inverts_scale(min in -1e3f64..1e3, width in 1e-3f64..1e3, u in 0.0f64..1.0) {
            let meta = FeatureMeta::numeric("v", min, min + width);
            let v = min + u * width;
            prop_assert!((meta.unscale(meta.scale(v)) - v).abs() < 1e-9);
        }
    }
}
