use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMode {
    None,
    /// Divide every value by 255.
    Rescale,
    /// Per-feature zero mean and unit variance.
    Standardize,
}

/// Per-feature statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose variance was zero; their scale is clamped to 1.
    pub clamped: Vec<usize>,
}

impl Standardizer {
    pub fn fit<T: Scalar>(features: &Tensor<T>) -> Self {
        let (n, f) = (features.rows(), features.row_len());
        let mut mean = vec![0.0; f];
        for row in features.data().chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.widen();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for row in features.data().chunks(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.widen() - m;
                *s += d * d;
            }
        }
        let mut clamped = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    clamped.push(j);
                    1.0
                }
            })
            .collect();
        if !clamped.is_empty() {
            log::warn!("{} zero-variance feature(s); scale clamped to 1", clamped.len());
        }
        Self { mean, std, clamped }
    }

    pub fn apply<T: Scalar>(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let f = features.row_len();
        if f != self.mean.len() {
            return Err(crate::Error::Dimension {
                op: "standardize",
                left: features.shape().to_vec(),
                right: vec![self.mean.len()],
            });
        }
        let mut out = features.clone();
        for row in out.data_mut().chunks_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = T::lit((v.widen() - m) / s);
            }
        }
        Ok(out)
    }
}

/// A fitted preprocessing step, reusable on held-out data and stored with models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Preprocessing {
    None,
    Rescale { divisor: f64 },
    Standardize(Standardizer),
}

impl Preprocessing {
    pub fn fit<T: Scalar>(mode: PreprocessMode, train: &Tensor<T>) -> Self {
        match mode {
            PreprocessMode::None => Preprocessing::None,
            PreprocessMode::Rescale => Preprocessing::Rescale { divisor: 255.0 },
            PreprocessMode::Standardize => Preprocessing::Standardize(Standardizer::fit(train)),
        }
    }

    pub fn apply_features<T: Scalar>(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Preprocessing::None => Ok(features.clone()),
            Preprocessing::Rescale { divisor } => {
                let d = T::lit(*divisor);
                Ok(features.map(|v| v / d))
            }
            Preprocessing::Standardize(s) => s.apply(features),
        }
    }

    pub fn apply<T: Scalar>(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        Ok(Dataset { features: self.apply_features(&ds.features)?, ..ds.clone() })
    }
}

/// Fits `mode` on `ds` and returns the transformed dataset with the fitted step.
pub fn preprocess<T: Scalar>(ds: &Dataset<T>, mode: PreprocessMode) -> Result<(Dataset<T>, Preprocessing)> {
    let step = Preprocessing::fit(mode, &ds.features);
    Ok((step.apply(ds)?, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataKind;

    fn tabular(rows: &[&[f64]]) -> Dataset<f64> {
        let n = rows.len();
        let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
        Dataset::new(Tensor::from_rows(rows).unwrap(), &classes, vec!["a".into(), "b".into()], DataKind::Tabular)
            .unwrap()
    }

    #[test]
    fn two_value_column_maps_to_plus_minus_one() {
        let ds = tabular(&[&[0.0], &[2.0], &[0.0], &[2.0]]);
        let (out, _) = preprocess(&ds, PreprocessMode::Standardize).unwrap();
        assert_eq!(out.features.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn constant_column_becomes_zero_and_is_flagged() {
        let ds = tabular(&[&[5.0, 1.0], &[5.0, 3.0]]);
        let (out, step) = preprocess(&ds, PreprocessMode::Standardize).unwrap();
        assert_eq!(out.features.data(), &[0.0, -1.0, 0.0, 1.0]);
        match step {
            Preprocessing::Standardize(s) => assert_eq!(s.clamped, vec![0]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rescale_keeps_zero_image() {
        let f = Tensor::<f64>::zeros(&[2, 2, 2, 1]).unwrap();
        let kind = DataKind::Image { height: 2, width: 2, channels: 1 };
        let ds = Dataset::new(f.clone(), &[0, 1], vec!["0".into(), "1".into()], kind).unwrap();
        let (out, _) = preprocess(&ds, PreprocessMode::Rescale).unwrap();
        assert_eq!(out.features, f);
        let ds = Dataset::new(Tensor::full(&[2, 2, 2, 1], 255.0).unwrap(), &[0, 1], ds.class_names.clone(), kind).unwrap();
        assert!(preprocess(&ds, PreprocessMode::Rescale).unwrap().0.features.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn test_rows_never_affect_train_statistics() {
        let mut ds = tabular(&[&[1.0, 4.0], &[3.0, 8.0], &[5.0, -1.0], &[0.5, 0.25]]);
        let plan = crate::data::kfold(ds.len(), 2, 3).unwrap();
        let fold = &plan.folds[0];
        let fit = |d: &Dataset<f64>| Preprocessing::fit(PreprocessMode::Standardize, &d.subset(&fold.train).unwrap().features);
        let before = fit(&ds);
        for &i in &fold.test {
            ds.features.row_mut(i).iter_mut().for_each(|v| *v = *v * 1e3 - 17.0);
        }
        assert_eq!(fit(&ds), before);
    }
}
