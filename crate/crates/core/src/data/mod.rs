//! Datasets: CSV and IDX loading, preprocessing, cross-validation folds and
//! shuffled mini-batches.

mod csv_io;
mod idx;
mod preprocess;
mod split;

pub use csv_io::{load_csv, read_csv, CsvOptions, LabelColumn};
pub use idx::{load_idx, parse_idx};
pub use preprocess::{preprocess, PreprocessMode, Preprocessing, Standardizer};
pub use split::{batches, holdout, kfold, Fold, FoldPlan};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataKind {
    Tabular,
    Image { height: usize, width: usize, channels: usize },
}

/// Features with one-hot labels.
///
/// Tabular features are `N x F`; images are `N x H x W x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub features: Tensor<T>,
    pub labels: Tensor<T>,
    pub class_names: Vec<String>,
    pub kind: DataKind,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from features and class indices into `class_names`.
    pub fn new(features: Tensor<T>, classes: &[usize], class_names: Vec<String>, kind: DataKind) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        if classes.len() != n {
            return Err(Error::Data(format!("{} labels for {} feature rows", classes.len(), n)));
        }
        let k = class_names.len();
        if k < 2 {
            return Err(Error::Data(format!("need at least 2 classes, found {k}")));
        }
        let mut onehot = vec![T::zero(); n * k];
        for (i, &c) in classes.iter().enumerate() {
            if c >= k {
                return Err(Error::Data(format!("row {i}: class index {c} out of range for {k} classes")));
            }
            onehot[i * k + c] = T::one();
        }
        let labels = Tensor::new(vec![n, k], onehot)?;
        Ok(Self { features, labels, class_names, kind })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Per-sample feature shape (without the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.argmax_rows()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: self.labels.select_rows(indices)?,
            class_names: self.class_names.clone(),
            kind: self.kind,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.cast(),
            labels: self.labels.cast(),
            class_names: self.class_names.clone(),
            kind: self.kind,
        }
    }

    /// Writes flattened features followed by a `label` column of class names.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let f = self.features.row_len();
        let mut header: Vec<String> = (0..f).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_error)?;
        for (i, c) in self.class_indices().into_iter().enumerate() {
            let mut record: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            record.push(self.class_names[c].clone());
            w.write_record(&record).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Maps raw label strings to contiguous class indices.
///
/// Without a fixed class list, classes are numbered by first appearance.
pub(crate) struct LabelEncoder {
    names: Vec<String>,
    index: HashMap<String, usize>,
    fixed: bool,
}

impl LabelEncoder {
    pub(crate) fn new(fixed: Option<&[String]>) -> Self {
        let names: Vec<String> = fixed.map(<[String]>::to_vec).unwrap_or_default();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index, fixed: fixed.is_some() }
    }

    pub(crate) fn encode(&mut self, label: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(label) {
            return Some(i);
        }
        if self.fixed {
            return None;
        }
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), self.names.len() - 1);
        Some(self.names.len() - 1)
    }

    pub(crate) fn into_names(self) -> Vec<String> {
        self.names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset<f64> {
        let features = Tensor::from_rows(&[&[0.1, 2.0], &[-3.5, 1e-300], &[7.0, 0.3]]).unwrap();
        Dataset::new(features, &[0, 1, 0], vec!["a".into(), "b".into()], DataKind::Tabular).unwrap()
    }

    #[test]
    fn one_hot_rows() {
        let ds = fixture();
        assert_eq!(ds.labels.data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ds.class_indices(), vec![0, 1, 0]);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = fixture();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let opts = CsvOptions { classes: Some(ds.class_names.clone()), ..CsvOptions::default() };
        let back: Dataset<f64> = read_csv(buf.as_slice(), &opts).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn single_class_rejected() {
        let features = Tensor::<f64>::zeros(&[2, 1]).unwrap();
        assert!(matches!(
            Dataset::new(features, &[0, 0], vec!["only".into()], DataKind::Tabular),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn subset_keeps_rows() {
        let ds = fixture().subset(&[2, 1]).unwrap();
        assert_eq!(ds.features.data(), &[7.0, 0.3, -3.5, 1e-300]);
        assert_eq!(ds.class_indices(), vec![0, 1]);
    }
}
