//! Datasets: CSV ingestion, standardization and train/validation/test splits.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major numeric inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    inputs: Vec<f64>,
    input_dim: usize,
    targets: Vec<f64>,
    target_dim: usize,
}

impl Samples {
    pub fn new(
        inputs: Vec<f64>,
        input_dim: usize,
        targets: Vec<f64>,
        target_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || target_dim == 0 {
            return Err(Error::Dimension(
                "input and target dimensions must be positive".into(),
            ));
        }
        if !inputs.len().is_multiple_of(input_dim) || !targets.len().is_multiple_of(target_dim) {
            return Err(Error::Dimension("buffers are not whole rows".into()));
        }
        if inputs.len() / input_dim != targets.len() / target_dim {
            return Err(Error::Dimension(format!(
                "{} input rows but {} target rows",
                inputs.len() / input_dim,
                targets.len() / target_dim
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("samples".into()));
        }
        Ok(Samples {
            inputs,
            input_dim,
            targets,
            target_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn subset(&self, rows: &[usize]) -> Samples {
        let mut inputs = Vec::with_capacity(rows.len() * self.input_dim);
        let mut targets = Vec::with_capacity(rows.len() * self.target_dim);
        for &i in rows {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Samples {
            inputs,
            input_dim: self.input_dim,
            targets,
            target_dim: self.target_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Per-column affine normalization `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Present for regression targets only.
    #[serde(default)]
    pub target_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub target_std: Option<Vec<f64>>,
}

fn column_stats(values: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (values.len() / dim).max(1) as f64;
    let mut mean = vec![0.0; dim];
    for row in values.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in values.chunks(dim) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // Constant columns keep unit scale.
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Standardization {
    /// Fits feature statistics, and target statistics when `task` is regression.
    pub fn fit(samples: &Samples, task: Task) -> Self {
        let (feature_mean, feature_std) = column_stats(samples.inputs(), samples.input_dim());
        let (target_mean, target_std) = match task {
            Task::Regression => {
                let (m, s) = column_stats(samples.targets(), samples.target_dim());
                (Some(m), Some(s))
            }
            Task::Classification => (None, None),
        };
        Standardization {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        }
    }

    pub fn transform_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_input(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform_target(&self, y: &[f64]) -> Vec<f64> {
        match (&self.target_mean, &self.target_std) {
            (Some(m), Some(s)) => y
                .iter()
                .zip(m.iter().zip(s))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
            _ => y.to_vec(),
        }
    }

    pub fn inverse_target(&self, y: &[f64]) -> Vec<f64> {
        match (&self.target_mean, &self.target_std) {
            (Some(m), Some(s)) => y
                .iter()
                .zip(m.iter().zip(s))
                .map(|(v, (m, s))| v * s + m)
                .collect(),
            _ => y.to_vec(),
        }
    }

    pub fn apply(&self, samples: &Samples) -> Samples {
        let mut inputs = Vec::with_capacity(samples.inputs().len());
        let mut targets = Vec::with_capacity(samples.targets().len());
        for i in 0..samples.len() {
            inputs.extend(self.transform_input(samples.input(i)));
            targets.extend(self.transform_target(samples.target(i)));
        }
        Samples {
            inputs,
            input_dim: samples.input_dim(),
            targets,
            target_dim: samples.target_dim(),
        }
    }
}

/// A loaded tabular dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Samples,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub task: Task,
    /// Class labels in index order (classification only).
    pub classes: Vec<String>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn with_samples(&self, samples: Samples) -> Dataset {
        Dataset {
            samples,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            task: self.task,
            classes: self.classes.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Fits standardization on this dataset and applies it.
    pub fn standardized(&self) -> Dataset {
        let st = Standardization::fit(&self.samples, self.task);
        self.standardized_with(&st)
    }

    pub fn standardized_with(&self, st: &Standardization) -> Dataset {
        let mut out = self.with_samples(st.apply(&self.samples));
        out.standardization = Some(st.clone());
        out
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        self.with_samples(self.samples.subset(rows))
    }
}

/// Loads a CSV with a header row. Classification labels are mapped to class
/// indices in order of first appearance. Data rows are numbered from 1.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, task: Task) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, target_column, task)
}

pub fn read_csv<R: std::io::Read>(reader: R, target_column: &str, task: Task) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::UnknownColumn(target_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let p = feature_names.len();
    if p == 0 {
        return Err(Error::Config("dataset has no feature columns".into()));
    }

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(Error::MissingValue {
                    row,
                    column: headers[c].clone(),
                });
            }
            if c == target_idx {
                match task {
                    Task::Regression => targets.push(parse_number(field, line, c)?),
                    Task::Classification => {
                        let idx = match classes.iter().position(|k| k == field) {
                            Some(i) => i,
                            None => {
                                classes.push(field.to_string());
                                classes.len() - 1
                            }
                        };
                        targets.push(idx as f64);
                    }
                }
            } else {
                inputs.push(parse_number(field, line, c)?);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::Empty("dataset has no rows".into()));
    }
    let samples = Samples::new(inputs, p, targets, 1)?;
    Ok(Dataset {
        samples,
        feature_names,
        target_name: target_column.to_string(),
        task,
        classes,
        standardization: None,
    })
}

/// Rows read against a known schema.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedRows {
    /// Row-major `n x p`, columns in the order requested.
    pub inputs: Vec<f64>,
    pub input_dim: usize,
    /// Present when a target column was requested.
    pub targets: Option<Vec<f64>>,
}

impl MatchedRows {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Expected target column for [`read_csv_matching`].
#[derive(Debug, Clone, Copy)]
pub struct TargetSpec<'a> {
    pub column: &'a str,
    pub task: Task,
    /// Known class labels; classification targets must be one of them.
    pub classes: &'a [String],
}

pub fn load_csv_matching(
    path: impl AsRef<Path>,
    features: &[String],
    target: Option<TargetSpec<'_>>,
) -> Result<MatchedRows> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv_matching(file, features, target)
}

/// Reads the named feature columns (in the given order, extra columns
/// ignored) and optionally a target, mapping class labels onto `classes`.
pub fn read_csv_matching<R: std::io::Read>(
    reader: R,
    features: &[String],
    target: Option<TargetSpec<'_>>,
) -> Result<MatchedRows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let feature_idx = features
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>>>()?;
    let target_idx = target.map(|t| find(t.column)).transpose()?;

    let mut inputs = Vec::new();
    let mut targets = target.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        let field = |c: usize| -> Result<&str> {
            match record.get(c).map(str::trim) {
                Some(f) if !f.is_empty() => Ok(f),
                _ => Err(Error::MissingValue {
                    row,
                    column: headers[c].clone(),
                }),
            }
        };
        for &c in &feature_idx {
            inputs.push(parse_number(field(c)?, line, c)?);
        }
        if let (Some(spec), Some(c), Some(out)) = (target, target_idx, targets.as_mut()) {
            let text = field(c)?;
            out.push(match spec.task {
                Task::Regression => parse_number(text, line, c)?,
                Task::Classification => {
                    spec.classes
                        .iter()
                        .position(|k| k == text)
                        .ok_or_else(|| Error::Parse {
                            line,
                            column: c + 1,
                            message: format!("unknown class label {text:?}"),
                        })? as f64
                }
            });
        }
    }
    if inputs.is_empty() {
        return Err(Error::Empty("dataset has no rows".into()));
    }
    Ok(MatchedRows {
        inputs,
        input_dim: features.len(),
        targets,
    })
}

fn parse_number(field: &str, line: usize, column: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        column: column + 1,
        message: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            column: column + 1,
            message: format!("non-finite value {field:?}"),
        });
    }
    Ok(v)
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

/// Minimum number of rows accepted by [`split`].
pub const MIN_SPLIT_ROWS: usize = 20;

/// Seeded shuffle, then 65% / 5% / 30% by count (floors for train and
/// validation, remainder to test). Returns row indices.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < MIN_SPLIT_ROWS {
        return Err(Error::Config(format!(
            "need at least {MIN_SPLIT_ROWS} rows to split, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 65 / 100;
    let n_val = n * 5 / 100;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok((idx, val, test))
}

pub fn split(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = split_indices(dataset.len(), seed)?;
    Ok((dataset.subset(&a), dataset.subset(&b), dataset.subset(&c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_reader_uses_known_classes() {
        let text = "b,extra,a,label\n1,9,2,dog\n3,9,4,cat\n";
        let classes = vec!["cat".to_string(), "dog".to_string()];
        let spec = TargetSpec {
            column: "label",
            task: Task::Classification,
            classes: &classes,
        };
        let rows =
            read_csv_matching(text.as_bytes(), &["a".into(), "b".into()], Some(spec)).unwrap();
        assert_eq!(rows.inputs, vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(rows.targets, Some(vec![1.0, 0.0]));
        let bad = read_csv_matching("a,label\n1,cow\n".as_bytes(), &["a".into()], Some(spec));
        assert!(matches!(
            bad,
            Err(Error::Parse {
                line: 2,
                column: 2,
                ..
            })
        ));
        let missing = read_csv_matching("a\n1\n".as_bytes(), &["z".into()], None);
        assert_eq!(missing, Err(Error::UnknownColumn("z".into())));
    }

    #[test]
    fn regression_csv() {
        let text = "x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n";
        let ds = read_csv(text.as_bytes(), "y", Task::Regression).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.samples.input_dim(), 2);
        assert_eq!(ds.feature_names, vec!["x1", "x2"]);
        assert_eq!(ds.samples.target(2), &[9.0]);
    }

    #[test]
    fn class_labels_in_first_appearance_order() {
        let text = "a,label\n0.1,cat\n0.2,dog\n0.3,cat\n";
        let ds = read_csv(text.as_bytes(), "label", Task::Classification).unwrap();
        assert_eq!(ds.samples.targets(), &[0.0, 1.0, 0.0]);
        assert_eq!(ds.classes, vec!["cat", "dog"]);
    }

    #[test]
    fn missing_value_names_row() {
        let text = "a,b,c\n1,,3\n";
        match read_csv(text.as_bytes(), "c", Task::Regression) {
            Err(Error::MissingValue { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "b");
            }
            other => panic!("expected missing value, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_position() {
        let text = "a,b\n1,2\n3,x\n";
        match read_csv(text.as_bytes(), "a", Task::Regression) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_target() {
        let text = "a,b\n1,2\n";
        assert!(matches!(
            read_csv(text.as_bytes(), "z", Task::Regression),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let (a, b, c) = split_indices(100, 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (65, 5, 30));
        let (a, b, c) = split_indices(20, 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (13, 1, 6));
        assert_eq!(split_indices(57, 3).unwrap(), split_indices(57, 3).unwrap());
        assert!(split_indices(19, 0).is_err());
        let (a, b, c) = split_indices(57, 3).unwrap();
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn standardization_roundtrip() {
        let s = Samples::new(
            vec![1.0, 10.0, 3.0, 10.0, 5.0, 10.0],
            2,
            vec![2.0, 4.0, 9.0],
            1,
        )
        .unwrap();
        let st = Standardization::fit(&s, Task::Regression);
        assert_eq!(st.feature_mean, vec![3.0, 10.0]);
        assert_eq!(st.feature_std[1], 1.0);
        let z = st.apply(&s);
        let mean: f64 = (0..3).map(|i| z.target(i)[0]).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        let back = st.inverse_input(z.input(2));
        assert!((back[0] - 5.0).abs() < 1e-12);
        let cls = Standardization::fit(&s, Task::Classification);
        assert!(cls.target_mean.is_none());
        assert_eq!(cls.apply(&s).targets(), s.targets());
    }
}
